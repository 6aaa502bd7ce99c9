"""Parabolic jets, their sampled membership tests and the Ishii matrix check."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NotSmooth, OutOfDomain
from .functional import PathFunctional, d_t, derivatives, numeric_derivatives
from .paths import PathStub, SpatialGrid, flat_extend, vertical_bump

EIG_RTOL = 1e-10


@dataclass(frozen=True)
class Jet:
    a: float
    p: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.shape != (p.size, p.size):
            raise DimensionMismatch(f"X has shape {X.shape}, expected {(p.size, p.size)}")
        if not np.allclose(X, X.T, atol=1e-12):
            raise ValueError("X must be symmetric")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "X", 0.5 * (X + X.T))

    @property
    def d(self) -> int:
        return self.p.size

    def __neg__(self):
        return Jet(-self.a, -self.p, -self.X)

    def distance(self, other: "Jet") -> float:
        return float(abs(self.a - other.a) + np.max(np.abs(self.p - other.p))
                     + np.max(np.abs(self.X - other.X)))

    def to_dict(self) -> dict:
        return {"a": self.a, "p": self.p.tolist(), "X": self.X.tolist()}


@dataclass(frozen=True)
class FirstOrderJet:
    a: float
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, dtype=float)))

    @property
    def d(self) -> int:
        return self.p.size

    @property
    def X(self) -> np.ndarray:
        return np.zeros((self.d, self.d))

    def __neg__(self):
        return FirstOrderJet(-self.a, -self.p)

    def to_dict(self) -> dict:
        return {"a": self.a, "p": self.p.tolist()}


@dataclass
class JetTestResult:
    passed: bool
    margin: float
    per_radius: list
    skipped: int
    n_probes: int

    def __bool__(self):
        return self.passed


def _directions(d: int) -> list:
    eye = np.eye(d)
    dirs = [s * e for e in eye for s in (1.0, -1.0)]
    for i in range(d):
        for j in range(i + 1, d):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    dirs.append((si * eye[i] + sj * eye[j]) / np.sqrt(2.0))
    return dirs


def _default_radius(omega: PathStub, space: Optional[SpatialGrid]) -> float:
    if space is None:
        return 0.05
    return float(np.min(space.h)) / 4.0


def superjet_test(u: PathFunctional, omega: PathStub, jet, space: Optional[SpatialGrid] = None,
                  radius: Optional[float] = None, tol: float = 1e-8,
                  delta_steps: Sequence[int] = (0, 1, 2), levels: int = 3) -> JetTestResult:
    """Sampled test of ``jet`` in the parabolic superjet of ``u`` at ``omega``.

    Probes ``(omega^x)_{t,delta}`` over ``|x| = r, r/2, r/4`` and the given
    flat-extension steps.  The normalized excess (divided by ``delta + |x|^2``,
    or ``delta + |x|`` for a first-order jet) is collected per radius.  The
    test passes when the excess at the smallest radius is within ``tol``, or
    when the per-radius excesses decrease at least linearly in the radius
    (their linear extrapolation to r = 0 is below a quarter of the last one).
    """
    first_order = isinstance(jet, FirstOrderJet)
    r0 = _default_radius(omega, space) if radius is None else float(radius)
    dt = omega.grid.dt
    u0 = u(omega)
    steps_ok = [s for s in delta_steps if omega.k + s <= omega.grid.N]
    dirs = _directions(omega.d)
    per_radius = []
    skipped = 0
    n = 0
    for lev in range(levels):
        r = r0 / 2**lev
        worst = -np.inf
        for s in steps_ok:
            delta = s * dt
            xs = [r * v for v in dirs] + ([np.zeros(omega.d)] if s else [])
            for x in xs:
                if space is not None and not space.in_closure(omega.terminal + x):
                    skipped += 1
                    continue
                val = u(flat_extend(vertical_bump(omega, x), s))
                n += 1
                quad = 0.0 if first_order else 0.5 * float(x @ jet.X @ x)
                excess = val - (u0 + jet.a * delta + float(jet.p @ x) + quad)
                size = float(np.linalg.norm(x)) if first_order else float(x @ x)
                worst = max(worst, excess / (delta + size))
        per_radius.append(float(worst))
    margin = per_radius[-1]
    if margin <= tol:
        passed = True
    elif len(per_radius) >= 2:
        decreasing = all(b <= a + tol for a, b in zip(per_radius, per_radius[1:]))
        # halving r should at least halve an o(.) excess; a stalled excess fails
        limit = 2 * per_radius[-1] - per_radius[-2]
        passed = decreasing and per_radius[-1] < per_radius[0] and \
            limit <= tol + 0.25 * per_radius[-1]
    else:
        passed = False
    return JetTestResult(bool(passed), float(margin), per_radius, skipped, n)


def subjet_test(u: PathFunctional, omega: PathStub, jet, space: Optional[SpatialGrid] = None,
                radius: Optional[float] = None, tol: float = 1e-8,
                delta_steps: Sequence[int] = (0, 1, 2), levels: int = 3) -> JetTestResult:
    return superjet_test(-u, omega, -jet, space, radius, tol, delta_steps, levels)


def jet_from_test_function(phi: PathFunctional, omega: PathStub) -> Jet:
    if not phi.has_exact:
        raise NotSmooth(f"test function {phi.name} carries no exact derivatives")
    der = phi.exact_derivatives(omega)
    return Jet(der.dt, der.dx, der.dxx)


def touch_check(phi: PathFunctional, u: PathFunctional, omega: PathStub,
                space: Optional[SpatialGrid] = None, radius: Optional[float] = None,
                levels: int = 3, tol: float = 1e-10) -> tuple:
    """``phi(omega) == u(omega)`` and ``phi >= u`` on the bump/extend probe mesh.

    Returns ``(ok, worst)`` where ``worst`` is the largest ``u - phi`` seen.
    """
    worst = abs(phi(omega) - u(omega))
    r0 = _default_radius(omega, space) if radius is None else radius
    for lev in range(levels):
        r = r0 / 2**lev
        for s in range(0, min(2, omega.grid.N - omega.k) + 1):
            for x in [r * v for v in _directions(omega.d)] + [np.zeros(omega.d)]:
                if space is not None and not space.in_closure(omega.terminal + x):
                    continue
                w = flat_extend(vertical_bump(omega, x), s)
                worst = max(worst, u(w) - phi(w))
    return worst <= tol, float(worst)


def closure_jet_search(u: PathFunctional, omega: PathStub, jet: Jet,
                       space: Optional[SpatialGrid] = None, budget: int = 6,
                       radius: Optional[float] = None, jet_tol: float = 1e-3,
                       tol: float = 1e-8) -> bool:
    """Semi-decision for membership in the closed superjet.

    Tries the constant sequence first, then bump sequences ``omega^{x_n}``
    with ``x_n = +-r/2^n`` along each axis.  At each ``omega^{x_n}`` the
    candidates are the target jet and the numeric jet there; a candidate
    counts if it passes ``superjet_test`` with probe radius ``|x_n|/4`` and
    lies within ``jet_tol`` of the target.  A sequence succeeds when every
    one of its ``budget`` members has a candidate.  False negatives are
    possible.
    """
    if superjet_test(u, omega, jet, space, radius, tol):
        return True
    r0 = _default_radius(omega, space) if radius is None else float(radius)
    u0 = u(omega)
    for v in [s * e for e in np.eye(omega.d) for s in (1.0, -1.0)]:
        ok = True
        for n in range(1, budget + 1):
            x = (r0 / 2**n) * v
            try:
                w = vertical_bump(omega, x, space)
            except OutOfDomain:
                ok = False
                break
            if abs(u(w) - u0) > max(jet_tol, 4 * np.linalg.norm(x)):
                ok = False
                break
            rad = float(np.linalg.norm(x)) / 4.0
            cands = [jet]
            num = numeric_derivatives(u, w, h=rad / 8.0)
            cands.append(Jet(num.dt if w.k < w.grid.N else jet.a, num.dx, num.dxx))
            if not any(c.distance(jet) <= jet_tol and superjet_test(u, w, c, space, rad, tol)
                       for c in cands):
                ok = False
                break
        if ok:
            return True
    return False


# Ishii matrix condition ----------------------------------------------------------

def doubling_matrix(alpha: float, d: int) -> np.ndarray:
    """``alpha * J_{2d}`` with ``J = [[I, -I], [-I, I]]``."""
    eye = np.eye(d)
    return alpha * np.block([[eye, -eye], [-eye, eye]])


@dataclass
class IshiiCertificate:
    alpha: float
    eps: float
    A: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    b1: float = 0.0
    b2: float = 0.0
    dphi_t: Optional[float] = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.X1 = np.atleast_2d(np.asarray(self.X1, dtype=float))
        self.X2 = np.atleast_2d(np.asarray(self.X2, dtype=float))

    @classmethod
    def from_doubling(cls, alpha, X1, X2, b1=0.0, b2=0.0, dphi_t=None, eps=None):
        X1 = np.atleast_2d(np.asarray(X1, dtype=float))
        eps = 1.0 / alpha if eps is None else eps
        return cls(alpha, eps, doubling_matrix(alpha, X1.shape[0]), X1, X2, b1, b2, dphi_t)


@dataclass
class IshiiReport:
    lower_ok: bool
    upper_ok: bool
    time_ok: bool
    lower_margin: float
    upper_margin: float
    time_margin: float
    violating_vector: Optional[np.ndarray]

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok and self.time_ok

    def __bool__(self):
        return self.passed


def verify_ishii(cert: IshiiCertificate) -> IshiiReport:
    """``-(1/eps + |A|) I <= diag(X1, -X2) <= A + eps A^2`` and ``b1 - b2 <= dphi_t``.

    Margins are smallest eigenvalues of the slack matrices (negative means
    violated); the eigenvector of the worst failing side is returned.
    """
    d = cert.X1.shape[0]
    if cert.X1.shape != (d, d) or cert.X2.shape != (d, d) or cert.A.shape != (2 * d, 2 * d):
        raise DimensionMismatch(
            f"X1 {cert.X1.shape}, X2 {cert.X2.shape}, A {cert.A.shape} are inconsistent")
    if not cert.eps > 0:
        raise ValueError("eps must be > 0")
    z = np.zeros((d, d))
    B = np.block([[cert.X1, z], [z, -cert.X2]])
    normA = float(np.linalg.norm(cert.A, 2))
    lower = B + (1.0 / cert.eps + normA) * np.eye(2 * d)
    upper = cert.A + cert.eps * cert.A @ cert.A - B
    wl, vl = np.linalg.eigh(lower)
    wu, vu = np.linalg.eigh(upper)
    scale = EIG_RTOL * max(1.0, np.linalg.norm(lower, 2), np.linalg.norm(upper, 2))
    lower_ok = bool(wl[0] >= -scale)
    upper_ok = bool(wu[0] >= -scale)
    vec = None
    if not upper_ok and (lower_ok or wu[0] <= wl[0]):
        vec = vu[:, 0]
    elif not lower_ok:
        vec = vl[:, 0]
    if cert.dphi_t is None:
        time_ok, time_margin = True, np.inf
    else:
        time_margin = float(cert.dphi_t - (cert.b1 - cert.b2))
        time_ok = time_margin >= -1e-12
    return IshiiReport(lower_ok, upper_ok, time_ok, float(wl[0]), float(wu[0]),
                       time_margin, vec)


def jet_lift(u: PathFunctional, omega_hat: PathStub, p, X) -> Jet:
    """Attach the horizontal derivative of ``u`` to a spatial jet ``(p, X)``."""
    if omega_hat.k >= omega_hat.grid.N:
        raise NotSmooth("no horizontal derivative at the terminal time")
    if u.exact_dt is not None:
        a = float(u.exact_dt(omega_hat))
    elif u.smoothness in ("C10", "C12", None):
        a = d_t(u, omega_hat)
    else:
        raise NotSmooth(f"{u.name} has no horizontal derivative")
    return Jet(a, p, X)


def exact_jet(u: PathFunctional, omega: PathStub, space: Optional[SpatialGrid] = None) -> Jet:
    der = derivatives(u, omega, space)
    return Jet(der.dt, der.dx, der.dxx)
