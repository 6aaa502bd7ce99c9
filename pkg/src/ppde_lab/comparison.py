"""Comparison experiments by doubling of variables on the path lattice.

Each experiment assembles a ledger of named inequalities.  Entries come in
four kinds:

* ``hypothesis``: an assumption of the comparison result, checked on the lattice;
* ``replay``: a step of the argument, re-evaluated at the actual maximizer;
* ``diagnostic``: reported but never used for the verdict;
* ``conclusion``: the comparison itself, ``u <= v`` on interior stubs.

The verdict is ``violated`` when some interior stub has ``u > v + tol``,
``inconclusive`` when a non-diagnostic entry fails without such a witness,
and ``ordered`` otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BadParams, PreconditionFailed, TimeMismatch
from .frozen_max import (
    MaximizationResult,
    first_order_conditions,
    left_frozen_maximize,
    left_frozen_maximize_pair,
)
from .functional import PathFunctional, d_xx
from .jets import IshiiCertificate, verify_ishii
from .paths import (
    DomainClass,
    PathStub,
    SpatialGrid,
    TimeGrid,
    classify,
    distance_first_order,
    distance_parabolic,
    lattice_stubs,
    frozen_continuations,
)
from .viscosity import Generator, check_monotonicity, is_subsolution, is_supersolution, \
    strictness_perturb

KINDS = ("hypothesis", "replay", "diagnostic", "conclusion")


def modulus(kind: str = "sqrt", scale: float = 1.0) -> Callable[[float], float]:
    """Continuity moduli ``rho`` with ``rho(0) = 0``: ``sqrt`` or ``linear``."""
    if scale < 0:
        raise BadParams("modulus scale must be >= 0")
    if kind == "sqrt":
        return lambda r: scale * math.sqrt(max(r, 0.0))
    if kind == "linear":
        return lambda r: scale * max(r, 0.0)
    raise BadParams(f"unknown modulus kind {kind!r}")


@dataclass
class DoublingConfig:
    alpha: Optional[float] = None
    alpha_schedule: Sequence[float] = (1e2, 1e3, 1e4, 1e5, 1e6)
    delta_bar: float = 0.1
    C: Optional[float] = None
    rho: Optional[Callable[[float], float]] = None
    a_bar: Optional[float] = None
    tube: Optional[float] = None
    tol: float = 1e-9
    monotonicity_samples: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not self.delta_bar > 0:
            raise BadParams("delta_bar must be > 0")
        if self.alpha is not None and not self.alpha > 0:
            raise BadParams("alpha must be > 0")
        if any(not a > 0 for a in self.alpha_schedule):
            raise BadParams("alpha schedule entries must be > 0")
        if self.a_bar is not None and not self.a_bar > 0:
            raise BadParams("a_bar must be > 0")

    def alphas(self) -> list:
        return [self.alpha] if self.alpha is not None else sorted(self.alpha_schedule)


@dataclass
class LedgerEntry:
    """The check ``lhs <= rhs``; ``margin = rhs - lhs``."""
    name: str
    lhs: float
    rhs: float
    kind: str = "replay"
    note: str = ""
    slack: float = 1e-9

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BadParams(f"unknown ledger kind {self.kind!r}")
        self.lhs, self.rhs = float(self.lhs), float(self.rhs)

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return bool(self.lhs <= self.rhs + self.slack)

    def row(self) -> dict:
        return {"check_name": self.name, "lhs": self.lhs, "rhs": self.rhs,
                "margin": self.margin, "pass": self.passed}


@dataclass
class ComparisonReport:
    verdict: str
    ledger: list
    witness: Optional[object] = None
    certificate: Optional[MaximizationResult] = None
    details: dict = field(default_factory=dict)

    def entry(self, name: str) -> LedgerEntry:
        for e in self.ledger:
            if e.name == name:
                return e
        raise KeyError(name)

    def failed(self, kinds: Sequence[str] = KINDS) -> list:
        return [e.name for e in self.ledger if e.kind in kinds and not e.passed]

    def to_dict(self) -> dict:
        w = self.witness
        if isinstance(w, tuple):
            w = [s.to_json() for s in w]
        elif w is not None:
            w = w.to_json()
        return {"verdict": self.verdict, "witness": w,
                "ledger": [dict(e.row(), kind=e.kind, note=e.note) for e in self.ledger],
                "certificate": None if self.certificate is None else self.certificate.to_dict(),
                "details": self.details}


# lattice helpers -------------------------------------------------------------------

def _split(lattice, space):
    interior, boundary = [], []
    for s in lattice:
        (interior if classify(s, space) is DomainClass.INTERIOR else boundary).append(s)
    return interior, boundary


def _hyp_sub_super(u, v, G, interior, space, tol_exact=1e-8):
    src_u = "exact" if u.has_exact else "numeric"
    src_v = "exact" if v.has_exact else "numeric"
    sub = is_subsolution(u, G, interior, src_u, space=space)
    sup = is_supersolution(v, G, interior, src_v, space=space)
    return [
        LedgerEntry("u_subsolution", -sub.margin, sub.tol, "hypothesis",
                    f"min a+G over superjets ({src_u})"),
        LedgerEntry("v_supersolution", sup.margin, sup.tol, "hypothesis",
                    f"max a+G over subjets ({src_v})"),
    ]


@dataclass
class BoundaryReport:
    ok: bool
    margin: float
    witness: Optional[PathStub]
    n_checked: int

    def __bool__(self):
        return self.ok


def boundary_ordering_check(u: PathFunctional, v: PathFunctional, stubs,
                            tol: float = 1e-9) -> BoundaryReport:
    """``max (u - v)`` over the given boundary stubs must be ``<= tol``."""
    worst, witness, n = -np.inf, None, 0
    for s in stubs:
        diff = u(s) - v(s)
        n += 1
        if diff > worst:
            worst, witness = diff, s
    if not n:
        worst = 0.0
    return BoundaryReport(bool(worst <= tol), float(worst), witness, n)


def _verdict(entries, offender_gap, tol):
    if offender_gap > tol:
        return "violated"
    if any(not e.passed for e in entries if e.kind != "diagnostic"):
        return "inconclusive"
    return "ordered"


def _finish(report: ComparisonReport, strict: bool) -> ComparisonReport:
    if strict:
        bad = report.failed(("hypothesis",))
        if bad:
            raise PreconditionFailed(bad, report)
    return report


def _interior_offender(u, v, interior):
    """Largest ``u - v`` over interior stubs (first stub wins ties)."""
    best, arg = -np.inf, None
    for s in interior:
        diff = u(s) - v(s)
        if diff > best:
            best, arg = diff, s
    return float(best), arg


# C^{1,2} comparison ------------------------------------------------------------------

def compare_smooth(u: PathFunctional, v: PathFunctional, G: Generator, delta_bar: float,
                   grid: TimeGrid, space: SpatialGrid, k_max: Optional[int] = None,
                   tol: float = 1e-9, check_boundary: bool = True,
                   strict: bool = True, lattice: Optional[list] = None) -> ComparisonReport:
    """Replay the smooth maximum-principle argument on the lattice.

    ``u - delta_bar/t`` is maximized against ``v`` from the worst interior
    stub; at the maximizer the first-order signs and the chain
    ``c <= [D_t u~ + G(u~)] - [D_t v + G(v)] <= 0`` are evaluated.
    """
    if not delta_bar > 0:
        raise BadParams("delta_bar must be > 0")
    if not (u.has_exact and v.has_exact):
        from .errors import NotSmooth
        raise NotSmooth("compare_smooth needs exact derivatives of u and v")
    lattice = lattice_stubs(grid, space, k_max) if lattice is None else lattice
    interior, boundary = _split(lattice, space)
    ledger = _hyp_sub_super(u, v, G, interior, space)
    b = boundary_ordering_check(u, v, boundary, tol)
    ledger.append(LedgerEntry("boundary_ordering", b.margin, tol,
                              "hypothesis" if check_boundary else "diagnostic",
                              "max u-v over boundary stubs"))
    mono = check_monotonicity(G, "H2", 2000, 0)
    ledger.append(LedgerEntry("G_H2", mono.worst, 0.0, "hypothesis",
                              f"{mono.n_violations} violations in {mono.n_samples} samples"))

    T = grid.T
    ut = strictness_perturb(u, delta_bar, T)
    c = ut.margin
    pos = [s for s in interior if s.k >= 1]
    w = ut - v
    sub_t = is_subsolution(ut, G, pos, "exact")
    ledger.append(LedgerEntry("perturbed_sub_margin", c, sub_t.margin, "replay",
                              "c <= D_t u~ + G(u~) at interior stubs"))
    gap, offender = _interior_offender(u, v, interior)
    m0, start = _interior_offender(ut, v, pos)
    details = {"c": c, "max_u_minus_v": gap, "max_perturbed_gap": m0}
    cert = None
    if start is not None and m0 > tol:
        res = left_frozen_maximize(w, start, space, k_max)
        cert = res
        wbar = res.maximizer
        details["maximizer"] = wbar.to_json()
        inside = classify(wbar, space) is DomainClass.INTERIOR
        ledger.append(LedgerEntry("maximizer_interior", 0.0 if inside else 1.0, 0.0, "replay",
                                  "boundary maximizer contradicts boundary ordering"))
        if inside:
            foc = first_order_conditions(w, wbar)
            ledger += [
                LedgerEntry("max_dt", foc.dt, 0.0, "replay", "D_t(u~ - v) <= 0"),
                LedgerEntry("max_dx", float(np.max(np.abs(foc.dx))), 1e-6, "replay",
                            "|D_x(u~ - v)| = 0"),
                LedgerEntry("max_dxx", foc.dxx_max_eig, 1e-6, "replay", "D_xx(u~ - v) <= 0"),
            ]
            du, dv = ut.exact_derivatives(wbar), v.exact_derivatives(wbar)
            lhs = du.dt + G(ut(wbar), du.dx, du.dxx, wbar)
            rhs = dv.dt + G(v(wbar), dv.dx, dv.dxx, wbar)
            ledger += [
                LedgerEntry("chain_lower", c, lhs - rhs, "replay",
                            "c <= [D_t u~ + G(u~)] - [D_t v + G(v)]"),
                LedgerEntry("chain_upper", lhs - rhs, 0.0, "replay",
                            "[D_t u~ + G(u~)] - [D_t v + G(v)] <= 0"),
            ]
    ledger.append(LedgerEntry("no_interior_offender", gap, tol, "conclusion",
                              "max u-v over interior stubs"))
    report = ComparisonReport(_verdict(ledger, gap, tol), ledger,
                              offender if gap > tol else None, cert, details)
    return _finish(report, strict)


# doubling of variables -------------------------------------------------------------------

class DoublingFunctional:
    """``w(w1, w2) = u(w1) - v(w2) - (alpha/2) ||w1 - w2||^2`` at a common time."""

    def __init__(self, u: PathFunctional, v: PathFunctional, alpha: float):
        if not alpha > 0:
            raise BadParams("alpha must be > 0")
        self.u, self.v, self.alpha = u, v, float(alpha)

    def _check(self, w1: PathStub, w2: PathStub):
        if w1.k != w2.k:
            raise TimeMismatch(f"doubling needs a common time, got k={w1.k} and k={w2.k}")

    def penalty(self, w1: PathStub, w2: PathStub) -> float:
        self._check(w1, w2)
        return 0.5 * self.alpha * distance_parabolic(w1, w2)

    def __call__(self, w1: PathStub, w2: PathStub) -> float:
        self._check(w1, w2)
        return self.u(w1) - self.v(w2) - self.penalty(w1, w2)

    def dphi_t(self, w1: PathStub, w2: PathStub) -> float:
        return 0.5 * self.alpha * float(np.sum((w1.terminal - w2.terminal) ** 2))

    def dphi_x(self, w1: PathStub, w2: PathStub) -> np.ndarray:
        diff = self.alpha * (w1.terminal - w2.terminal)
        return np.concatenate([diff, -diff])

    def hessian(self, d: int) -> np.ndarray:
        eye = np.eye(d)
        return self.alpha * np.block([[eye, -eye], [-eye, eye]])

    @staticmethod
    def split(omega: PathStub) -> tuple:
        d = omega.d // 2
        return PathStub(omega.grid, omega.values[:, :d]), PathStub(omega.grid, omega.values[:, d:])

    def on_product(self) -> PathFunctional:
        """The same functional read on stubs of the product space Q x Q."""
        def f(omega):
            w1, w2 = self.split(omega)
            return self(w1, w2)
        return PathFunctional(f, name=f"w_alpha({self.alpha:g})")


def doubling_functional(u: PathFunctional, v: PathFunctional, alpha: float) -> DoublingFunctional:
    return DoublingFunctional(u, v, alpha)


class _Safe(PathFunctional):
    """``u - delta/t`` extended by ``-inf`` at ``t = 0``."""

    def __init__(self, ut):
        super().__init__(lambda w: -np.inf if w.k == 0 else ut(w), name=ut.name)


def _admissibility(alpha, rho, C, M_star, m_tilde, c):
    arg = max((2.0 / alpha) * (1.0 / alpha + 2.0 * C - M_star), 0.0)
    lhs = 1.0 / alpha + rho(arg)
    rhs = 0.5 * min(m_tilde, c) if m_tilde is not None and m_tilde > 0 else 0.5 * c
    return lhs, rhs


def _pick_alpha(config, C, M_star, m_tilde, c):
    rho = config.rho
    tried = []
    for a in config.alphas():
        lhs, rhs = _admissibility(a, rho, C, M_star, m_tilde, c)
        tried.append((a, lhs, rhs))
        if lhs <= rhs:
            return a, lhs, rhs, tried
    a, lhs, rhs = tried[-1]
    return a, lhs, rhs, tried


def _sampled_modulus_entry(name, u, rho, pairs, metric, kind="hypothesis"):
    rep = modulus_probe(u, rho, pairs, metric)
    return LedgerEntry(name, rep.worst_excess, 0.0, kind,
                       f"worst |u(a)-u(b)| - rho(d) over {rep.n_pairs} pairs")


def synchronous_pairs(stubs: Sequence[PathStub], n: int, seed: int = 0) -> list:
    """Random pairs of stubs sharing the time index."""
    rng = np.random.default_rng(seed)
    by_k = {}
    for s in stubs:
        by_k.setdefault(s.k, []).append(s)
    ks = sorted(by_k)
    out = []
    for _ in range(n):
        group = by_k[ks[int(rng.integers(len(ks)))]]
        i, j = rng.integers(len(group), size=2)
        out.append((group[i], group[j]))
    return out


def compare_viscosity_2nd(u: PathFunctional, v: PathFunctional, G: Generator,
                          config: DoublingConfig, grid: TimeGrid, space: SpatialGrid,
                          k_max: Optional[int] = None, strict: bool = True,
                          modulus_pairs: int = 400) -> ComparisonReport:
    """Second-order comparison by doubling of variables on ``Q x Q``."""
    if config.rho is None:
        raise BadParams("a modulus rho is required")
    tol = config.tol
    lattice = lattice_stubs(grid, space, k_max)
    interior, boundary = _split(lattice, space)
    ledger = _hyp_sub_super(u, v, G, interior, space)
    b = boundary_ordering_check(u, v, boundary, tol)
    ledger.append(LedgerEntry("boundary_ordering", b.margin, tol, "hypothesis",
                              "max u-v over boundary stubs"))
    mono = check_monotonicity(G, "H2", config.monotonicity_samples, config.seed)
    ledger.append(LedgerEntry("G_H2", mono.worst, 0.0, "hypothesis",
                              f"{mono.n_violations} violations in {mono.n_samples} samples"))
    pairs = synchronous_pairs(lattice, modulus_pairs, config.seed)
    ledger.append(_sampled_modulus_entry("u_modulus", u, config.rho, pairs, "parabolic"))

    T = grid.T
    ut = strictness_perturb(u, config.delta_bar, T)
    c = ut.margin
    us = _Safe(ut)
    pos = [s for s in lattice if s.k >= 1]
    pos_int = [s for s in interior if s.k >= 1]
    M_star = max((ut(s) - v(s) for s in pos_int), default=-np.inf)
    gap, offender = _interior_offender(u, v, interior)
    m_tilde = M_star if M_star > tol else None
    if config.C is not None:
        C = float(config.C)
    else:
        uvals = [ut(s) for s in pos]
        vvals = [v(s) for s in pos]
        C = max(0.5 * (max(uvals) - min(vvals)), max(a - b_ for a, b_ in zip(uvals, vvals)))
    Ms = M_star if np.isfinite(M_star) else 0.0
    alpha, lhs, rhs, tried = _pick_alpha(config, C, Ms, m_tilde, c)
    ledger.append(LedgerEntry("alpha_admissible", lhs, rhs, "hypothesis",
                              "1/alpha + rho((2/alpha)(1/alpha + 2C - M*)) <= min(m~, c)/2"))
    details = {"c": c, "C": C, "M_star": Ms, "m_tilde": m_tilde, "alpha": alpha,
               "alpha_tried": [list(t) for t in tried], "max_u_minus_v": gap}

    # doubling on Q x Q
    prod = space.product(space)
    d = space.d
    r_tube = 4.0 * float(np.max(space.h)) if config.tube is None else float(config.tube)
    tube = (lambda p: float(np.max(np.abs(p[:d] - p[d:]))) <= r_tube + 1e-12)
    dbl = DoublingFunctional(us, v, alpha)
    W = dbl.on_product()
    plat = [s for s in lattice_stubs(grid, prod, k_max, tube) if s.k >= 1]
    wvals = np.array([W(s) for s in plat])
    M_alpha = float(wvals.max())
    near = np.flatnonzero(wvals + 1.0 / alpha >= M_alpha)
    # interior stubs first, then the earliest time, then enumeration order
    start = plat[min(near, key=lambda i: (classify(plat[i], prod) is DomainClass.BOUNDARY,
                                          plat[i].k, i))]
    res = left_frozen_maximize(W, start, prod, k_max, value_filter=tube)
    wbar = res.maximizer
    w1, w2 = DoublingFunctional.split(wbar)
    details.update({"M_alpha": M_alpha, "maximizer": [w1.to_json(), w2.to_json()],
                    "diagonal": bool(np.array_equal(w1.values, w2.values)),
                    "tube": r_tube})
    pen = dbl.penalty(w1, w2)
    ledger += [
        LedgerEntry("near_max_start", M_alpha, W(start) + 1.0 / alpha, "replay",
                    "M_alpha <= w(start) + 1/alpha"),
        LedgerEntry("rmax_value", W(start), res.value, "replay", "w(start) <= w(maximizer)"),
        LedgerEntry("penalty_bound", pen, 0.5 * c, "replay",
                    "(alpha/2)||w1 - w2||^2 <= c/2"),
    ]
    ishii = None
    inside = classify(wbar, prod) is DomainClass.INTERIOR
    if inside:
        h = float(np.min(space.h))
        X1 = d_xx(us, w1, h)
        X2 = d_xx(v, w2, h)
        ext1 = PathStub(grid, np.vstack([w1.values, w1.values[-1:]]))
        ext2 = PathStub(grid, np.vstack([w2.values, w2.values[-1:]]))
        b1 = (us(ext1) - us(w1)) / grid.dt
        b2 = (v(ext2) - v(w2)) / grid.dt
        phit = dbl.dphi_t(w1, w2)
        cert_i = IshiiCertificate.from_doubling(alpha, X1, X2, b1, b2, phit)
        ishii = verify_ishii(cert_i)
        details["ishii"] = {"X1": X1.tolist(), "X2": X2.tolist(), "b1": b1, "b2": b2,
                            "dphi_t": phit, "eps": cert_i.eps}
        ledger += [
            LedgerEntry("ishii_lower", -ishii.lower_margin, 0.0, "replay",
                        "-(1/eps + |A|) I <= diag(X1, -X2)"),
            LedgerEntry("ishii_upper", -ishii.upper_margin, 0.0, "diagnostic",
                        "diag(X1, -X2) <= A + eps A^2 (lattice Hessians)"),
            LedgerEntry("ishii_time", b1 - b2, phit,
                        "replay" if wbar.k < (grid.N if k_max is None else k_max) else "diagnostic",
                        "b1 - b2 <= d_t phi"),
        ]
    if m_tilde is not None:
        ledger.append(LedgerEntry("maximizer_interior", 0.0 if inside else 1.0, 0.0, "replay",
                                  "a boundary maximizer gives m~ <= m~/2"))
        if inside:
            p = dbl.dphi_x(w1, w2)[:d]
            g1 = G(us(w1), p, X1, w1)
            g2 = G(v(w2), p, X2, w2)
            ledger += [
                LedgerEntry("sub_at_maximizer", c, b1 + g1, "replay", "c <= b1 + G(u~, p, X1)"),
                LedgerEntry("super_at_maximizer", b2 + g2, 0.0, "replay", "b2 + G(v, p, X2) <= 0"),
                LedgerEntry("contradiction", c, phit, "replay",
                            "c <= (alpha/2)|w1(t) - w2(t)|^2 <= c/2"),
            ]
    ledger.append(LedgerEntry("no_interior_offender", gap, tol, "conclusion",
                              "max u-v over interior stubs"))
    report = ComparisonReport(_verdict(ledger, gap, tol), ledger,
                              offender if gap > tol else None, res, details)
    report.details["ishii_passed_lower"] = None if ishii is None else ishii.lower_ok
    return _finish(report, strict)


# first-order comparison ------------------------------------------------------------

class AsyncDoubling:
    """``w(omega_t, upsilon_s) = u(omega_t) - v(upsilon_s) - (alpha/2) d(omega_t, upsilon_s)``."""

    def __init__(self, u, v, alpha: float):
        self.u, self.v, self.alpha = u, v, float(alpha)

    def __call__(self, a: PathStub, b: PathStub) -> float:
        return self.u(a) - self.v(b) - 0.5 * self.alpha * distance_first_order(a, b)

    def jet(self, a: PathStub, b: PathStub) -> tuple:
        """``(b, p) = (alpha (t - s), alpha (omega(t) - upsilon(s)))``."""
        return self.alpha * (a.t - b.t), self.alpha * (a.terminal - b.terminal)


def window_pairs(stubs: Sequence[PathStub], space: SpatialGrid, a_steps: int, n: int,
                 seed: int = 0) -> list:
    """Pairs of continuations of a common interior stub, both within ``a_steps``."""
    rng = np.random.default_rng(seed)
    roots = [s for s in stubs if classify(s, space) is DomainClass.INTERIOR]
    out = []
    cache = {}
    for _ in range(n):
        root = roots[int(rng.integers(len(roots)))]
        if root not in cache:
            kmax = min(root.grid.N, root.k + a_steps)
            cache[root] = list(frozen_continuations(root, space, kmax))
        conts = cache[root]
        i, j = rng.integers(len(conts), size=2)
        out.append((conts[i], conts[j]))
    return out


def compare_viscosity_1st(u: PathFunctional, v: PathFunctional, G: Generator,
                          config: DoublingConfig, grid: TimeGrid, space: SpatialGrid,
                          strict: bool = True, modulus_pairs: int = 400) -> ComparisonReport:
    """First-order comparison with asynchronous doubling, window by window from T backwards."""
    if config.rho is None:
        raise BadParams("a modulus rho is required")
    if G.order != 1:
        raise BadParams("compare_viscosity_1st needs a first-order generator")
    tol = config.tol
    a_bar = grid.T if config.a_bar is None else config.a_bar
    a_steps = max(1, int(round(a_bar / grid.dt)))
    lattice = lattice_stubs(grid, space)
    interior, boundary = _split(lattice, space)
    ledger = _hyp_sub_super(u, v, G, interior, space)
    b = boundary_ordering_check(u, v, boundary, tol)
    ledger.append(LedgerEntry("boundary_ordering", b.margin, tol, "hypothesis",
                              "max u-v over boundary stubs"))
    mono = check_monotonicity(G, "H3", config.monotonicity_samples, config.seed)
    ledger.append(LedgerEntry("G_H3", mono.worst, 0.0, "hypothesis",
                              f"{mono.n_violations} violations in {mono.n_samples} samples"))
    pairs = window_pairs(lattice, space, a_steps, modulus_pairs, config.seed)
    rep_u = modulus_probe(u, config.rho, pairs, "first_order")
    rep_v = modulus_probe(v, config.rho, pairs, "first_order")
    ledger.append(LedgerEntry("uv_window_modulus", max(rep_u.worst_excess, rep_v.worst_excess),
                              0.0, "hypothesis", "windowed continuity of u and v"))
    if G.uses_path and G.path_modulus is not None:
        worst = -np.inf
        rng = np.random.default_rng(config.seed)
        for a, b_ in pairs:
            uu = float(rng.normal())
            vv = uu - abs(float(rng.normal()))
            p = rng.normal(size=space.d)
            diff = G(uu, p, None, a) - G(vv, p, None, b_)
            worst = max(worst, diff - G.path_modulus(distance_first_order(a, b_)))
        ledger.append(LedgerEntry("G_path_modulus", worst, 0.0, "hypothesis",
                                  "G(path1,u,p) - G(path2,v,p) <= rho_G(d)"))

    T = grid.T
    ut = strictness_perturb(u, config.delta_bar, T)
    us = _Safe(ut)
    c = ut.margin
    uvals = [us(s) for s in lattice if s.k >= 1]
    vvals = [v(s) for s in lattice]
    C = float(config.C) if config.C is not None else max(max(uvals), max(-x for x in vvals))
    gap, offender = _interior_offender(u, v, interior)
    details = {"c": c, "C": C, "a_steps": a_steps, "windows": [], "max_u_minus_v": gap}
    cert = None
    N = grid.N
    hi = N
    i = 0
    while hi > 0:
        i += 1
        lo = max(0, hi - a_steps)
        win = [s for s in interior if lo <= s.k < hi and s.k >= 1]
        hi = lo
        if not win:
            continue
        diffs = np.array([us(s) - v(s) for s in win])
        j = int(np.argmax(diffs))
        root, m_w = win[j], float(diffs[j])
        conts = [s for s in frozen_continuations(root, space)]
        M_star = max(us(s) - v(s) for s in conts)
        m_tilde = m_w if m_w > tol else None
        alpha, lhs, rhs, _ = _pick_alpha(config, C, M_star, m_tilde, c)
        tag = f"w{i}"
        ledger.append(LedgerEntry(f"{tag}_alpha_admissible", lhs, rhs, "hypothesis",
                                  "admissible alpha for this window"))
        dbl = AsyncDoubling(us, v, alpha)
        # stage one: fix a near-maximal pair, then maximize from it
        U = np.array([[dbl(a, b_) for b_ in conts] for a in conts])
        M_alpha = float(U.max())
        ii, jj = np.nonzero(U + 1.0 / alpha >= M_alpha)
        sel = int(np.argmin(np.array([conts[x].k + conts[y].k for x, y in zip(ii, jj)])))
        g_bar, e_bar = conts[int(ii[sel])], conts[int(jj[sel])]
        res = left_frozen_maximize_pair(dbl, g_bar, e_bar, space)
        cert = res
        wh, uh = res.maximizer
        pen = 0.5 * alpha * distance_first_order(wh, uh)
        ledger += [
            LedgerEntry(f"{tag}_penalty_bound", pen, 0.5 * c, "replay", "(alpha/2) d <= c/2"),
            LedgerEntry(f"{tag}_rmax_value", dbl(g_bar, e_bar), res.value, "replay",
                        "w(stage one) <= w(maximizer)"),
        ]
        win_info = {"window": [lo, lo + a_steps], "alpha": alpha, "M_star": M_star,
                    "m_tilde": m_tilde, "M_alpha": M_alpha,
                    "maximizer": [wh.to_json(), uh.to_json()]}
        if m_tilde is not None:
            inside = (classify(wh, space) is DomainClass.INTERIOR
                      and classify(uh, space) is DomainClass.INTERIOR)
            ledger.append(LedgerEntry(f"{tag}_maximizer_interior", 0.0 if inside else 1.0, 0.0,
                                      "replay", "a boundary maximizer gives m~ <= m~/2"))
            if inside:
                bb, p = dbl.jet(wh, uh)
                g1 = bb + G(us(wh), p, None, wh)
                g2 = bb + G(v(uh), p, None, uh)
                ledger += [
                    LedgerEntry(f"{tag}_sub_at_maximizer", c, g1, "replay", "c <= b + G(u~, p)"),
                    LedgerEntry(f"{tag}_super_at_maximizer", g2, 0.0, "replay",
                                "b + G(v, p) <= 0"),
                    LedgerEntry(f"{tag}_contradiction", c, g1 - g2, "replay",
                                "c <= [b + G(u~, p)] - [b + G(v, p)] <= 0"),
                ]
        details["windows"].append(win_info)
    ledger.append(LedgerEntry("no_interior_offender", gap, tol, "conclusion",
                              "max u-v over interior stubs"))
    report = ComparisonReport(_verdict(ledger, gap, tol), ledger,
                              offender if gap > tol else None, cert, details)
    return _finish(report, strict)


# modulus probe ---------------------------------------------------------------------

@dataclass
class ModulusReport:
    passed: bool
    worst_ratio: float
    worst_excess: float
    witness: Optional[tuple]
    n_pairs: int

    def __bool__(self):
        return self.passed


def modulus_probe(u: PathFunctional, rho: Callable[[float], float], pairs,
                  metric: str = "parabolic", tol: float = 1e-12) -> ModulusReport:
    """Worst ``|u(a) - u(b)|`` against ``rho(d(a, b))`` over the sampled pairs."""
    dist = {"parabolic": distance_parabolic, "first_order": distance_first_order}[metric]
    worst_ratio, worst_excess, witness, n = 0.0, -np.inf, None, 0
    for a, b in pairs:
        diff = abs(u(a) - u(b))
        bound = rho(dist(a, b))
        n += 1
        if diff - bound > worst_excess:
            worst_excess, witness = diff - bound, (a, b)
        if bound > 0:
            worst_ratio = max(worst_ratio, diff / bound)
        elif diff > tol:
            worst_ratio = np.inf
    if not n:
        worst_excess = 0.0
    return ModulusReport(bool(worst_excess <= tol), float(worst_ratio), float(worst_excess),
                         witness, n)
