"""Generators, monotonicity checks and viscosity sub/supersolution sweeps."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import BadParams, UnknownName, ZeroTime
from .functional import PathFunctional, numeric_derivatives
from .jets import FirstOrderJet, Jet, superjet_test, subjet_test, touch_check
from .paths import DomainClass, PathStub, SpatialGrid, TimeGrid, classify, random_stubs

ASSUMPTIONS = ("H1", "H2", "H3", "DE")


class Generator:
    """Nonlinearity ``G(omega_t, u, p, X)`` of the equation ``D_t u + G = 0``.

    ``func`` always receives ``(path, u, p, X)``; first-order generators get
    ``X=None``.  ``sigma_eff`` is the largest diffusion coefficient, used by
    the solver's CFL check, and ``drift`` bounds the first-order part.
    """

    def __init__(self, func: Callable, *, order: int = 2, assumptions: Iterable[str] = (),
                 sigma_eff: float = 0.0, drift: float = 0.0, path_modulus: Optional[Callable] = None,
                 uses_path: bool = False, name: str = "generator", params: Optional[dict] = None):
        if order not in (1, 2):
            raise BadParams("order must be 1 or 2")
        bad = set(assumptions) - set(ASSUMPTIONS)
        if bad:
            raise BadParams(f"unknown assumptions {sorted(bad)}")
        self.func = func
        self.order = order
        self.assumptions = frozenset(assumptions)
        self.sigma_eff = float(sigma_eff)
        self.drift = float(drift)
        self.path_modulus = path_modulus
        self.uses_path = uses_path
        self.name = name
        self.params = dict(params or {})

    def __call__(self, u: float, p, X=None, path: Optional[PathStub] = None) -> float:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if X is not None:
            X = np.atleast_2d(np.asarray(X, dtype=float))
        return float(self.func(path, float(u), p, X))

    def __repr__(self):
        return f"Generator({self.name}, order={self.order}, assumptions={sorted(self.assumptions)})"

    def to_dict(self) -> dict:
        return {"name": self.name, "params": self.params, "order": self.order,
                "assumptions": sorted(self.assumptions)}


def _tr(X):
    return 0.0 if X is None else float(np.trace(X))


def _g_heat_value(X, lo2, hi2):
    if X is None:
        return 0.0
    if X.shape == (1, 1):
        x = X[0, 0]
        return 0.5 * (hi2 * max(x, 0.0) - lo2 * max(-x, 0.0))
    lam = np.linalg.eigvalsh(0.5 * (X + X.T))
    return 0.5 * float(hi2 * np.sum(np.maximum(lam, 0.0)) - lo2 * np.sum(np.maximum(-lam, 0.0)))


def builtin_generator(name: str, **params) -> Generator:
    """Generator corpus: linear_heat, g_heat, transport, path_weighted, zero, constant."""
    if name == "linear_heat":
        s2 = float(params.get("sigma", 1.0)) ** 2
        return Generator(lambda w, u, p, X: 0.5 * s2 * _tr(X), order=2,
                         assumptions=("H1", "H2", "DE"), sigma_eff=np.sqrt(s2), name=name,
                         params={"sigma": float(np.sqrt(s2))})
    if name == "g_heat":
        lo, hi = float(params.get("sigma_low", 0.5)), float(params.get("sigma_high", 1.0))
        if lo < 0 or lo > hi:
            raise BadParams(f"need 0 <= sigma_low <= sigma_high, got {lo}, {hi}")
        return Generator(lambda w, u, p, X: _g_heat_value(X, lo**2, hi**2), order=2,
                         assumptions=("H1", "H2", "DE"), sigma_eff=hi, name=name,
                         params={"sigma_low": lo, "sigma_high": hi})
    if name == "transport":
        c, lam = float(params.get("c", 1.0)), float(params.get("lam", 0.0))
        tags = ("H3",) if lam >= 0 else ()
        return Generator(lambda w, u, p, X: -c * float(np.linalg.norm(p)) - lam * u, order=1,
                         assumptions=tags, drift=abs(c), name=name, params={"c": c, "lam": lam})
    if name == "path_weighted":
        kappa = float(params.get("kappa", 1.0))
        c, lam = float(params.get("c", 1.0)), float(params.get("lam", 0.0))
        tags = ("H3",) if lam >= 0 else ()

        def f(w, u, p, X):
            x = 0.0 if w is None else float(np.sum(w.terminal))
            return kappa * x - c * float(np.linalg.norm(p)) - lam * u

        return Generator(f, order=1, assumptions=tags, drift=abs(c), uses_path=True,
                         path_modulus=lambda r: abs(kappa) * np.sqrt(r), name=name,
                         params={"kappa": kappa, "c": c, "lam": lam})
    if name == "zero":
        return Generator(lambda w, u, p, X: 0.0, order=int(params.get("order", 2)),
                         assumptions=("H1", "H2", "H3", "DE"), name=name, params={})
    if name == "constant":
        c = float(params.get("value", 0.0))
        return Generator(lambda w, u, p, X: c, order=int(params.get("order", 2)),
                         assumptions=("H1", "H2", "H3", "DE"), name=name, params={"value": c})
    raise UnknownName(f"unknown generator {name!r}")


# monotonicity --------------------------------------------------------------------

@dataclass
class MonotonicityReport:
    assumption: str
    passed: bool
    n_samples: int
    n_violations: int
    worst: float
    witness: Optional[dict] = None

    def __bool__(self):
        return self.passed


def _psd(rng, d, scale):
    B = rng.normal(size=(d, d)) * scale
    return B @ B.T


def _sym(rng, d, scale):
    B = rng.normal(size=(d, d)) * scale
    return 0.5 * (B + B.T)


def check_monotonicity(G: Generator, assumption: str, n: int = 10_000, seed: int = 0,
                       d: int = 1, scale: float = 2.0,
                       paths: Optional[Sequence[PathStub]] = None) -> MonotonicityReport:
    """Sample the ordering hypothesis as written.

    H1: ``u >= v, X <= Y  =>  G(u,p,X) <= G(v,p,Y)``.
    H2 / DE: ``X >= Y, u <= v  =>  G(u,p,X) >= G(v,p,Y)``.
    H3: ``u >= v  =>  G(u,p) <= G(v,p)``.
    """
    if assumption not in ASSUMPTIONS:
        raise UnknownName(f"unknown assumption {assumption!r}")
    rng = np.random.default_rng(seed)
    if paths is None and G.uses_path:
        paths = random_stubs(TimeGrid(1.0, 4), SpatialGrid([-1.0] * d, [1.0] * d, 5), 16, rng)
    worst, count, witness = -np.inf, 0, None
    for i in range(n):
        u = rng.normal() * scale
        gap = abs(rng.normal()) * scale
        p = rng.normal(size=d) * scale
        path = None if paths is None else paths[i % len(paths)]
        if assumption == "H3":
            v = u - gap
            lhs, rhs = G(u, p, None, path), G(v, p, None, path)
            X = Y = None
        else:
            second = G.order == 2
            X = _sym(rng, d, scale) if second else None
            Y = X + _psd(rng, d, scale) if second else None
            if assumption == "H1":
                v = u - gap
                lhs, rhs = G(u, p, X, path), G(v, p, Y, path)
            else:
                # here X >= Y and u <= v
                X, Y = Y, X
                v = u + gap
                rhs, lhs = G(u, p, X, path), G(v, p, Y, path)
        excess = lhs - rhs
        if excess > 1e-12 * (1.0 + abs(lhs) + abs(rhs)):
            count += 1
            if excess > worst:
                worst = excess
                witness = {"u": u, "v": v, "p": p.tolist(),
                           "X": None if X is None else X.tolist(),
                           "Y": None if Y is None else Y.tolist(), "excess": float(excess)}
    return MonotonicityReport(assumption, count == 0, n, count,
                              float(worst) if count else 0.0, witness)


# sub/supersolution sweeps ----------------------------------------------------------

JET_SOURCES = ("exact", "numeric", "test_functions", "sampled")


@dataclass
class ViscosityReport:
    kind: str
    jet_source: str
    passed: bool
    margin: float
    witness: Optional[PathStub]
    n_checked: int
    n_skipped: int
    tol: float
    margins: list = field(default_factory=list)
    stubs: list = field(default_factory=list)

    def __bool__(self):
        return self.passed

    def to_dict(self) -> dict:
        return {"kind": self.kind, "jet_source": self.jet_source, "passed": self.passed,
                "margin": self.margin, "n_checked": self.n_checked, "n_skipped": self.n_skipped,
                "tol": self.tol,
                "witness": None if self.witness is None else self.witness.to_json()}


def _jets_at(u, G, omega, source, space, super_side, test_functions, sampled_jets, h=None):
    order = G.order
    if source in ("exact", "numeric"):
        if source == "exact":
            der = u.exact_derivatives(omega)
        else:
            der = numeric_derivatives(u, omega, space, h)
        if order == 1:
            return [FirstOrderJet(der.dt, der.dx)]
        return [Jet(der.dt, der.dx, der.dxx)]
    if source == "test_functions":
        out = []
        for phi in test_functions or ():
            touched = touch_check(phi, u, omega, space)[0] if super_side else \
                touch_check(-phi, -u, omega, space)[0]
            if touched:
                der = phi.exact_derivatives(omega)
                out.append(FirstOrderJet(der.dt, der.dx) if order == 1
                           else Jet(der.dt, der.dx, der.dxx))
        return out
    if source == "sampled":
        cands = sampled_jets(omega) if callable(sampled_jets) else list(sampled_jets or ())
        test = superjet_test if super_side else subjet_test
        return [j for j in cands if test(u, omega, j, space, tol=1e-6)]
    raise UnknownName(f"unknown jet source {source!r}; choose from {JET_SOURCES}")


def _sweep(kind, u, G, stubs, jet_source, tol, space, test_functions, sampled_jets, h=None):
    if tol is None:
        tol = 1e-8 if jet_source == "exact" else 1e-4
    super_side = kind == "subsolution"
    worst, witness = (np.inf if super_side else -np.inf), None
    margins, seen, checked, skipped = [], [], 0, 0
    for omega in stubs:
        boundary = (omega.k == omega.grid.N if space is None
                    else classify(omega, space) is DomainClass.BOUNDARY)
        if boundary:
            skipped += 1
            continue
        jets = _jets_at(u, G, omega, jet_source, space, super_side, test_functions, sampled_jets,
                        h)
        if not jets:
            skipped += 1
            continue
        uval = u(omega)
        vals = [j.a + G(uval, j.p, None if G.order == 1 else j.X, omega) for j in jets]
        m = min(vals) if super_side else max(vals)
        margins.append(m)
        seen.append(omega)
        checked += 1
        if (super_side and m < worst) or (not super_side and m > worst):
            worst, witness = m, omega
    if not checked:
        worst = 0.0
    passed = worst >= -tol if super_side else worst <= tol
    return ViscosityReport(kind, jet_source, bool(passed), float(worst), witness, checked,
                           skipped, tol, margins, seen)


def is_subsolution(u: PathFunctional, G: Generator, stubs: Iterable[PathStub],
                   jet_source: str = "exact", tol: Optional[float] = None,
                   space: Optional[SpatialGrid] = None, test_functions=None,
                   sampled_jets=None, h: Optional[float] = None) -> ViscosityReport:
    """``a + G(u, p, X) >= -tol`` for every admitted superjet at every interior stub.

    The reported margin is the smallest ``a + G`` seen.
    """
    return _sweep("subsolution", u, G, stubs, jet_source, tol, space, test_functions,
                  sampled_jets, h)


def is_supersolution(u: PathFunctional, G: Generator, stubs: Iterable[PathStub],
                     jet_source: str = "exact", tol: Optional[float] = None,
                     space: Optional[SpatialGrid] = None, test_functions=None,
                     sampled_jets=None, h: Optional[float] = None) -> ViscosityReport:
    """Mirror image over subjets; the margin is the largest ``a + G`` seen."""
    return _sweep("supersolution", u, G, stubs, jet_source, tol, space, test_functions,
                  sampled_jets, h)


# strictness perturbation ----------------------------------------------------------

class PerturbedFunctional(PathFunctional):
    """``u - delta_bar / t``; undefined at ``t = 0``."""

    def __init__(self, base: PathFunctional, delta_bar: float, T: Optional[float] = None):
        if delta_bar < 0:
            raise BadParams("delta_bar must be >= 0")
        self.base = base
        self.delta_bar = float(delta_bar)
        self.T = T
        db = self.delta_bar

        def f(w):
            return base(w) - db / _time(w, db)

        def dt(w):
            return base.exact_dt(w) + db / _time(w, db) ** 2

        batch = None
        if base._batch is not None:
            def batch(g, v):
                t = g.time(v.shape[1] - 1)
                if t == 0 and db:
                    raise ZeroTime("perturbation undefined at t = 0")
                return base.batch(g, v) - (db / t if db else 0.0)

        super().__init__(f, dt=None if base.exact_dt is None else dt, dx=base.exact_dx,
                         dxx=base.exact_dxx, smoothness=base.smoothness, batch=batch,
                         name=f"{base.name}-{db:g}/t")

    @property
    def margin(self) -> Optional[float]:
        """The strictness margin ``delta_bar / T^2``."""
        return None if self.T is None else self.delta_bar / self.T**2


def _time(w: PathStub, db: float) -> float:
    if w.k == 0:
        if db == 0:
            return 1.0
        raise ZeroTime("perturbation undefined at t = 0")
    return w.t


def strictness_perturb(u: PathFunctional, delta_bar: float,
                       T: Optional[float] = None) -> PerturbedFunctional:
    return PerturbedFunctional(u, delta_bar, T)
