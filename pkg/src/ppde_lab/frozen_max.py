"""Left frozen maximization over lattice continuations.

The search space of a stub ``c`` is the set of lattice stubs that agree with
``c`` strictly before its terminal index and end at or after it.  Every stage
records the pair ``(m_i, mbar_i)``: the value at the current stub and the sup
over its search space.  On a finite lattice the procedure always stops with
``m_i == mbar_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import NotSmooth, SearchSpaceTooLarge
from .functional import PathFunctional, derivatives
from .paths import (
    DomainClass,
    PathStub,
    SpatialGrid,
    ValueFilter,
    classify,
    count_continuations,
    frozen_continuations,
)

DEFAULT_CAP = 10**6
PairFunction = Callable[[PathStub, PathStub], float]


@dataclass
class MaximizationResult:
    maximizer: Union[PathStub, tuple]
    value: float
    certificate: list = field(default_factory=list)
    iterations: int = 0
    method: str = "frozen"
    root: str = "frozen"

    @property
    def gaps(self) -> list:
        return [mb - m for m, mb in self.certificate]

    def gap_halving(self) -> bool:
        """Check the stage invariants of the certificate."""
        cert = self.certificate
        for i, (m, mb) in enumerate(cert):
            if m > mb:
                return False
            if i:
                m0, mb0 = cert[i - 1]
                if m < m0 or mb > mb0 or (mb - m) > 0.5 * (mb0 - m0):
                    return False
        return not cert or cert[-1][0] == cert[-1][1]

    def to_dict(self) -> dict:
        if isinstance(self.maximizer, tuple):
            maxi = [s.to_json() for s in self.maximizer]
        else:
            maxi = self.maximizer.to_json()
        return {"value": self.value, "maximizer": maxi, "iterations": self.iterations,
                "method": self.method, "certificate": [list(c) for c in self.certificate]}


class _Table:
    """Flat array view of a continuation set, for prefix queries."""

    def __init__(self, stubs: list):
        self.stubs = stubs
        self.ks = np.array([s.k for s in stubs])
        K = int(self.ks.max()) + 1
        d = stubs[0].d
        self.vals = np.full((len(stubs), K, d), np.nan)
        for i, s in enumerate(stubs):
            self.vals[i, : s.k + 1] = s.values

    def __len__(self):
        return len(self.stubs)

    def frozen_mask(self, i: int) -> np.ndarray:
        """Members of the search space of stub ``i``."""
        k = self.ks[i]
        mask = self.ks >= k
        if k:
            same = np.all(self.vals[:, :k] == self.vals[i, :k], axis=(1, 2))
            mask &= same
        return mask

    def bumps(self, i: int) -> np.ndarray:
        return self.frozen_mask(i) & (self.ks == self.ks[i])


def _collect(omega: PathStub, space: SpatialGrid, k_max, cap, value_filter):
    n = count_continuations(omega, space, k_max, value_filter, force=True)
    if n > cap:
        raise SearchSpaceTooLarge(f"{n} continuations exceed cap {cap}")
    return _Table(list(frozen_continuations(omega, space, k_max, value_filter)))


def _is_boundary(omega: PathStub, space: SpatialGrid) -> bool:
    return classify(omega, space) is DomainClass.BOUNDARY


def _argmax_first(values: np.ndarray, mask: np.ndarray) -> int:
    idx = np.flatnonzero(mask)
    return int(idx[np.argmax(values[idx])])


def brute_force_sup(u: PathFunctional, omega0: PathStub, space: SpatialGrid,
                    k_max: Optional[int] = None, cap: int = DEFAULT_CAP,
                    value_filter: ValueFilter = None) -> MaximizationResult:
    """Exhaustive maximum over the continuations; ties go to the smallest
    terminal index, then enumeration order."""
    if _is_boundary(omega0, space):
        v = u(omega0)
        return MaximizationResult(omega0, v, [(v, v)], 1, "brute_force", "boundary")
    table = _collect(omega0, space, k_max, cap, value_filter)
    U = np.array([u(s) for s in table.stubs])
    best = np.flatnonzero(U == U.max())
    i = int(best[np.lexsort((best, table.ks[best]))[0]])
    return MaximizationResult(table.stubs[i], float(U[i]), [(float(U[i]), float(U[i]))], 1,
                              "brute_force")


def left_frozen_maximize(u: PathFunctional, omega0: PathStub, space: SpatialGrid,
                         k_max: Optional[int] = None, cap: int = DEFAULT_CAP,
                         slack: float = 0.0,
                         value_filter: ValueFilter = None) -> MaximizationResult:
    """Gap-halving left frozen maximization starting at ``omega0``.

    Stage ``i``: move to the best vertical bump of the current stub, record
    ``m_i`` and ``mbar_i``, stop if they agree (up to ``slack``), otherwise
    jump to a longer continuation worth at least the midpoint.  Among such
    continuations only those whose own search space still attains ``mbar_i``
    are admitted; ties go to the smallest terminal index, then enumeration
    order.
    """
    if _is_boundary(omega0, space):
        v = u(omega0)
        return MaximizationResult(omega0, v, [(v, v)], 1, "frozen", "boundary")
    table = _collect(omega0, space, k_max, cap, value_filter)
    U = np.array([u(s) for s in table.stubs])
    cur = 0
    cert = []
    while True:
        bumps = table.bumps(cur)
        best = _argmax_first(U, bumps)
        if U[best] > U[cur]:
            cur = best
        mask = table.frozen_mask(cur)
        m, mbar = float(U[cur]), float(np.max(U[mask]))
        cert.append((m, mbar))
        if mbar - m <= slack:
            break
        top = mask & (U == mbar)
        mid = 0.5 * (m + mbar)
        cand = np.flatnonzero(mask & (table.ks > table.ks[cur]) & (U >= mid))
        cand = cand[np.lexsort((cand, table.ks[cand]))]
        for j in cand:
            if np.any(top & table.frozen_mask(j)):
                cur = int(j)
                break
        else:  # pragma: no cover  (a global argmax always qualifies)
            raise RuntimeError("no sup-preserving continuation found")
    return MaximizationResult(table.stubs[cur], float(U[cur]), cert, len(cert), "frozen")


# two-path version -----------------------------------------------------------

def _pair_tables(omega0, upsilon0, space, space2, k_max, cap, value_filter):
    space2 = space if space2 is None else space2
    n1 = count_continuations(omega0, space, k_max, value_filter, force=True)
    n2 = count_continuations(upsilon0, space2, k_max, value_filter, force=True)
    if n1 * n2 > cap:
        raise SearchSpaceTooLarge(f"{n1}x{n2} continuation pairs exceed cap {cap}")
    t1 = _Table(list(frozen_continuations(omega0, space, k_max, value_filter)))
    t2 = _Table(list(frozen_continuations(upsilon0, space2, k_max, value_filter)))
    return t1, t2


def _pair_values(u: PairFunction, t1: _Table, t2: _Table) -> np.ndarray:
    return np.array([[u(a, b) for b in t2.stubs] for a in t1.stubs], dtype=float)


def brute_force_sup_pair(u: PairFunction, omega0: PathStub, upsilon0: PathStub,
                         space: SpatialGrid, k_max: Optional[int] = None,
                         cap: int = DEFAULT_CAP, space2: Optional[SpatialGrid] = None,
                         value_filter: ValueFilter = None) -> MaximizationResult:
    t1, t2 = _pair_tables(omega0, upsilon0, space, space2, k_max, cap, value_filter)
    U = _pair_values(u, t1, t2)
    i, j = np.unravel_index(int(np.argmax(U)), U.shape)
    v = float(U[i, j])
    return MaximizationResult((t1.stubs[i], t2.stubs[j]), v, [(v, v)], 1, "brute_force")


def left_frozen_maximize_pair(u: PairFunction, omega0: PathStub, upsilon0: PathStub,
                              space: SpatialGrid, k_max: Optional[int] = None,
                              cap: int = DEFAULT_CAP, slack: float = 0.0,
                              space2: Optional[SpatialGrid] = None,
                              value_filter: ValueFilter = None) -> MaximizationResult:
    """Two-path version: both time indices are nondecreasing and their sum
    strictly increases between stages."""
    t1, t2 = _pair_tables(omega0, upsilon0, space, space2, k_max, cap, value_filter)
    U = _pair_values(u, t1, t2)
    ci, cj = 0, 0
    cert = []
    sums = t1.ks[:, None] + t2.ks[None, :]
    while True:
        bi, bj = np.flatnonzero(t1.bumps(ci)), np.flatnonzero(t2.bumps(cj))
        sub = U[np.ix_(bi, bj)]
        a, b = np.unravel_index(int(np.argmax(sub)), sub.shape)
        if sub[a, b] > U[ci, cj]:
            ci, cj = int(bi[a]), int(bj[b])
        m1, m2 = t1.frozen_mask(ci), t2.frozen_mask(cj)
        block = np.where(m1[:, None] & m2[None, :], U, -np.inf)
        m, mbar = float(U[ci, cj]), float(block.max())
        cert.append((m, mbar))
        if mbar - m <= slack:
            break
        top = block == mbar
        mid = 0.5 * (m + mbar)
        ok = (block >= mid) & (sums > t1.ks[ci] + t2.ks[cj])
        ii, jj = np.nonzero(ok)
        order = np.lexsort((jj, ii, sums[ii, jj]))
        for i, j in zip(ii[order], jj[order]):
            sub_top = top[np.ix_(t1.frozen_mask(i), t2.frozen_mask(j))]
            if sub_top.any():
                ci, cj = int(i), int(j)
                break
        else:  # pragma: no cover
            raise RuntimeError("no sup-preserving continuation pair found")
    return MaximizationResult((t1.stubs[ci], t2.stubs[cj]), float(U[ci, cj]), cert, len(cert),
                              "frozen")


# verification -------------------------------------------------------------------

@dataclass
class RmaxReport:
    ok: bool
    violation: float
    sup: float
    n_checked: int

    def __bool__(self):
        return self.ok


def verify_rmax(u, result: MaximizationResult, space: SpatialGrid, k_max: Optional[int] = None,
                cap: int = DEFAULT_CAP, space2: Optional[SpatialGrid] = None,
                value_filter: ValueFilter = None) -> RmaxReport:
    """Re-enumerate the continuations of the maximizer; none may beat ``result.value``."""
    if isinstance(result.maximizer, tuple):
        w, y = result.maximizer
        t1, t2 = _pair_tables(w, y, space, space2, k_max, cap, value_filter)
        sup = float(_pair_values(u, t1, t2).max())
        n = len(t1) * len(t2)
    elif result.root == "boundary":
        sup, n = u(result.maximizer), 1
    else:
        table = _collect(result.maximizer, space, k_max, cap, value_filter)
        sup = max(u(s) for s in table.stubs)
        n = len(table)
    violation = sup - result.value
    return RmaxReport(violation <= 0.0, float(violation), float(sup), n)


@dataclass
class FirstOrderConditions:
    dt: float
    dx: np.ndarray
    dxx_max_eig: float
    dt_ok: bool
    dx_ok: bool
    dxx_ok: bool

    @property
    def passed(self) -> bool:
        return self.dt_ok and self.dx_ok and self.dxx_ok

    def __bool__(self):
        return self.passed


def first_order_conditions(u: PathFunctional, omega_bar: PathStub, tol: float = 1e-6,
                           space: Optional[SpatialGrid] = None) -> FirstOrderConditions:
    """Signs of the derivatives at a continuation-maximal stub: D_t <= 0, D_x = 0, D_xx <= 0."""
    if not u.has_exact and space is None:
        raise NotSmooth(f"{u.name} has no exact derivatives and no grid for numeric ones")
    der = derivatives(u, omega_bar, space)
    lam = float(np.max(np.linalg.eigvalsh(der.dxx)))
    return FirstOrderConditions(der.dt, der.dx, lam, der.dt <= tol,
                                bool(np.max(np.abs(der.dx)) <= tol), lam <= tol)
