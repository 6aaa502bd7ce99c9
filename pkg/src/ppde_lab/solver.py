"""Backward explicit scheme on the path lattice, a Markovian-lift variant and
Monte Carlo / classical oracles.

A lattice stub is keyed by the tuple of flat grid indices of its values.
The value at an interior key of level ``k`` is

    u = u_c + dt * G(path, u_c, p_h, X_h)

where ``u_c`` is the value at the flat extension and ``p_h``, ``X_h`` are
central differences across the bumped-then-extended keys of level ``k+1``.
A bump that lands on the boundary of Q takes the boundary data at the bumped
stub of level ``k``.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_points, check_positive_int
from .errors import (
    BadParams,
    CflViolation,
    LiftMismatch,
    SearchSpaceTooLarge,
    StubNotInLattice,
)
from .functional import PathFunctional
from .paths import PathStub, SpatialGrid, TimeGrid, simulate_continuations
from .viscosity import Generator

DEFAULT_CAP = 10**6
MC_CHUNK = 10_000


# shared stencil ---------------------------------------------------------------------

class _Stencil:
    """Neighbour offsets in flat-index space plus the difference formulas."""

    def __init__(self, space: SpatialGrid):
        self.space = space
        self.shape = (space.M,) * space.d
        self.h = np.asarray(space.h, dtype=float)
        self.boundary = np.array([space.on_boundary(p) for p in space.points])
        d = space.d
        self.axis_pairs = []
        for i in range(d):
            e = np.zeros(d, dtype=int)
            e[i] = 1
            self.axis_pairs.append((e, -e))
        self.mixed = []
        for i in range(d):
            for j in range(i + 1, d):
                e = np.zeros(d, dtype=int)
                f = np.zeros(d, dtype=int)
                e[i], f[j] = 1, 1
                self.mixed.append((i, j, (e + f, e - f, -e + f, -e - f)))

    def shift(self, flat: int, offset) -> int:
        idx = np.array(np.unravel_index(flat, self.shape)) + offset
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def neighbours(self, flat: int) -> list:
        """Flat indices used by the stencil around an interior point, centre first."""
        out = [flat]
        for e, me in self.axis_pairs:
            out += [self.shift(flat, e), self.shift(flat, me)]
        for _, _, offs in self.mixed:
            out += [self.shift(flat, o) for o in offs]
        return out

    def update(self, G: Generator, path, dt: float, vals: list) -> float:
        """Explicit step from the neighbour values (ordered as ``neighbours``)."""
        d = self.space.d
        uc = vals[0]
        p = np.empty(d)
        X = np.zeros((d, d))
        for i in range(d):
            up, dn = vals[1 + 2 * i], vals[2 + 2 * i]
            p[i] = (up - dn) / (2 * self.h[i])
            X[i, i] = (up - 2 * uc + dn) / self.h[i] ** 2
        pos = 1 + 2 * d
        for i, j, _ in self.mixed:
            pp, pm, mp, mm = vals[pos:pos + 4]
            pos += 4
            X[i, j] = X[j, i] = (pp - pm - mp + mm) / (4 * self.h[i] * self.h[j])
        return uc + dt * G(uc, p, X if G.order == 2 else None, path)


def _check_cfl(G: Generator, grid: TimeGrid, space: SpatialGrid) -> float:
    h = float(np.min(space.h))
    ratio = 0.0
    if G.sigma_eff > 0:
        ratio = grid.dt * space.d * G.sigma_eff**2 / h**2
    if G.drift > 0:
        ratio = max(ratio, grid.dt * G.drift / h)
    if ratio > 1.0 + 1e-12:
        raise CflViolation(f"CFL ratio {ratio:.4g} > 1 (dt={grid.dt:g}, h={h:g})")
    return ratio


# lattice solver ----------------------------------------------------------------------

class LatticeSolution:
    """Lazily evaluated lattice solution; values are memoized by key."""

    def __init__(self, G: Generator, phi: PathFunctional, grid: TimeGrid, space: SpatialGrid,
                 cap: int = DEFAULT_CAP):
        self.G, self.phi, self.grid, self.space, self.cap = G, phi, grid, space, cap
        self.stencil = _Stencil(space)
        self.cfl_ratio = _check_cfl(G, grid, space)
        self.values: dict = {}
        self._points = np.array(space.points)

    @property
    def meta(self) -> dict:
        return {"dt": self.grid.dt, "h": np.asarray(self.space.h).tolist(),
                "cfl_ratio": self.cfl_ratio, "generator": self.G.name, "payoff": self.phi.name,
                "n_values": len(self.values)}

    def stub(self, key: tuple) -> PathStub:
        return PathStub(self.grid, self._points[list(key)])

    def key(self, stub: PathStub) -> tuple:
        out = []
        for v in stub.values:
            idx = self.space.index_of(v)
            if idx is None:
                raise StubNotInLattice(f"value {v.tolist()} is not a grid point")
            out.append(int(np.ravel_multi_index(idx, self.stencil.shape)))
        return tuple(out)

    def __len__(self):
        return len(self.values)

    def __contains__(self, stub: PathStub) -> bool:
        try:
            return self.key(stub) in self.values
        except StubNotInLattice:
            return False

    def _store(self, key, val):
        if len(self.values) >= self.cap:
            raise SearchSpaceTooLarge(f"more than {self.cap} lattice values")
        self.values[key] = val
        return val

    def value_at(self, key: tuple) -> float:
        """Evaluate (and memoize) the scheme at ``key``."""
        if key in self.values:
            return self.values[key]
        st = self.stencil
        for j in key[:-1]:
            if st.boundary[j]:
                raise StubNotInLattice("values before the terminal index must lie inside Q")
        if len(key) - 1 == self.grid.N or st.boundary[key[-1]]:
            return self._store(key, self.phi(self.stub(key)))
        # iterative post-order to keep the recursion flat
        stack = [key]
        while stack:
            cur = stack[-1]
            if cur in self.values:
                stack.pop()
                continue
            pending = []
            kids = []
            for nb in st.neighbours(cur[-1]):
                if st.boundary[nb]:
                    kk = cur[:-1] + (nb,)
                else:
                    kk = cur[:-1] + (nb, nb)
                kids.append(kk)
                if kk not in self.values:
                    if len(kk) - 1 == self.grid.N or st.boundary[kk[-1]]:
                        self._store(kk, self.phi(self.stub(kk)))
                    else:
                        pending.append(kk)
            if pending:
                stack.extend(pending)
                continue
            path = self.stub(cur) if self.G.uses_path else None
            self._store(cur, st.update(self.G, path, self.grid.dt, [self.values[k] for k in kids]))
            stack.pop()
        return self.values[key]

    def __call__(self, stub: PathStub) -> float:
        return self.value_at(self.key(stub))

    def at(self, x, k: int = 0) -> float:
        """Value at the flat stub sitting at grid point ``x`` up to index ``k``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self(PathStub(self.grid, np.repeat(x[None, :], k + 1, axis=0)))

    def to_jsonl(self, path) -> None:
        """One header line (grids and scheme metadata), then one line per key."""
        header = {"meta": dict(self.meta, grid=self.grid.to_dict(), space=self.space.to_dict())}
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for key in sorted(self.values, key=lambda k: (len(k), k)):
                fh.write(json.dumps({"key": list(key), "value": self.values[key]}) + "\n")

    def load_jsonl(self, path) -> "LatticeSolution":
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                if "meta" in rec:
                    continue
                self.values[tuple(rec["key"])] = float(rec["value"])
        return self


def solve_lattice(G: Generator, phi: PathFunctional, grid: TimeGrid, space: SpatialGrid,
                  roots: Optional[Sequence[PathStub]] = None,
                  cap: int = DEFAULT_CAP) -> LatticeSolution:
    """Backward explicit scheme from the given roots (default: every flat interior
    stub at index 0).  Further stubs are evaluated on demand."""
    sol = LatticeSolution(G, phi, grid, space, cap)
    if roots is None:
        roots = [PathStub(grid, [p]) for p in space.interior_points]
    for r in roots:
        sol(r)
    return sol


def solution_as_functional(sol: LatticeSolution, strict: bool = True) -> PathFunctional:
    """Lookup-backed functional.  Off-lattice stubs raise ``StubNotInLattice``
    in strict mode; otherwise they are projected onto the nearest grid values
    and counted in ``.meta["projected"]``."""
    meta = {"projected": 0}

    def f(w: PathStub) -> float:
        try:
            return sol(w)
        except StubNotInLattice:
            if strict:
                raise
            meta["projected"] += 1
            vals = [sol.space.point(sol.space.nearest_index(v)) for v in w.values]
            return sol(PathStub(w.grid, vals))

    out = PathFunctional(f, name=f"solution({sol.G.name}, {sol.phi.name})")
    out.meta = meta
    return out


def read_solution(path) -> PathFunctional:
    """Lookup-only functional over a stored solution; unknown stubs raise
    ``StubNotInLattice``."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        if "meta" not in header:
            raise BadParams(f"{path} has no metadata header")
        meta = header["meta"]
        grid = TimeGrid(**meta["grid"])
        sp = meta["space"]
        space = SpatialGrid(sp["lower"], sp["upper"], sp["M"])
        table = {}
        for line in fh:
            rec = json.loads(line)
            table[tuple(rec["key"])] = float(rec["value"])
    shape = (space.M,) * space.d

    def f(w: PathStub) -> float:
        key = []
        for v in w.values:
            idx = space.index_of(v)
            if idx is None:
                raise StubNotInLattice(f"value {v.tolist()} is not a grid point")
            key.append(int(np.ravel_multi_index(idx, shape)))
        try:
            return table[tuple(key)]
        except KeyError:
            raise StubNotInLattice(f"{w} is not stored in {path}") from None

    out = PathFunctional(f, name=f"stored({meta.get('generator')}, {meta.get('payoff')})")
    out.meta = dict(meta, n_values=len(table))
    out.grid, out.space = grid, space
    return out


# Markovian lift -------------------------------------------------------------------------

LIFT_KINDS = ("none", "running_integral", "running_max")


@dataclass(frozen=True)
class LiftSpec:
    """Finite-dimensional statistic carried along the path.

    The integer state is the sum (``running_integral``) or the maximum
    (``running_max``) of the grid indices of the values strictly before the
    terminal index, along ``axis``.
    """
    kind: str = "none"
    axis: int = 0

    def __post_init__(self):
        if self.kind not in LIFT_KINDS:
            raise BadParams(f"unknown lift {self.kind!r}; choose from {LIFT_KINDS}")

    def initial(self):
        return {"none": 0, "running_integral": 0, "running_max": -1}[self.kind]

    def advance(self, state: int, idx: int) -> int:
        if self.kind == "running_integral":
            return state + idx
        if self.kind == "running_max":
            return max(state, idx)
        return 0

    def statistic(self, state: int, k: int, idx_terminal: int, grid: TimeGrid,
                  axis_values: np.ndarray) -> float:
        """The lifted quantity for a stub: integral or running max (terminal included)."""
        if self.kind == "running_integral":
            lo, h = axis_values[0], axis_values[1] - axis_values[0]
            return grid.dt * (k * lo + h * state)
        if self.kind == "running_max":
            return float(axis_values[max(state, idx_terminal)])
        return 0.0

    def state_of(self, stub: PathStub, space: SpatialGrid) -> int:
        st = self.initial()
        for v in stub.values[:-1]:
            st = self.advance(st, space.nearest_index(v)[self.axis])
        return st


class LiftedSolution:
    """Values on the lifted grid ``(k, flat index, state)``."""

    def __init__(self, G, phi_lift, lift: LiftSpec, grid, space, cap=DEFAULT_CAP):
        self.G, self.phi_lift, self.lift = G, phi_lift, lift
        self.grid, self.space, self.cap = grid, space, cap
        self.stencil = _Stencil(space)
        self.cfl_ratio = _check_cfl(G, grid, space)
        self.values: dict = {}
        self._points = np.array(space.points)
        self._axis_vals = space.axes[lift.axis]

    def _axis_idx(self, flat):
        return int(np.unravel_index(flat, self.stencil.shape)[self.lift.axis])

    def _terminal(self, k, flat, state):
        x = self._points[flat]
        stat = self.lift.statistic(state, k, self._axis_idx(flat), self.grid, self._axis_vals)
        return float(self.phi_lift(self.grid.time(k), x if x.size > 1 else float(x[0]), stat))

    def _store(self, key, val):
        if len(self.values) >= self.cap:
            raise SearchSpaceTooLarge(f"more than {self.cap} lifted values")
        self.values[key] = val
        return val

    def value_at(self, k: int, flat: int, state: int) -> float:
        key = (k, flat, state)
        if key in self.values:
            return self.values[key]
        st = self.stencil
        if k == self.grid.N or st.boundary[flat]:
            return self._store(key, self._terminal(k, flat, state))
        stack = [key]
        while stack:
            cur = stack[-1]
            if cur in self.values:
                stack.pop()
                continue
            ck, cf, cs = cur
            kids, pending = [], []
            for nb in st.neighbours(cf):
                if st.boundary[nb]:
                    kk = (ck, nb, cs)
                else:
                    kk = (ck + 1, nb, self.lift.advance(cs, self._axis_idx(nb)))
                kids.append(kk)
                if kk not in self.values:
                    if kk[0] == self.grid.N or st.boundary[kk[1]]:
                        self._store(kk, self._terminal(*kk))
                    else:
                        pending.append(kk)
            if pending:
                stack.extend(pending)
                continue
            path = None
            if self.G.uses_path:
                path = PathStub(self.grid, np.repeat(self._points[cf][None, :], ck + 1, axis=0))
            self._store(cur, st.update(self.G, path, self.grid.dt, [self.values[x] for x in kids]))
            stack.pop()
        return self.values[key]

    def __call__(self, stub: PathStub) -> float:
        """Pull a lattice stub back through the lift map."""
        idx = self.space.index_of(stub.terminal)
        if idx is None:
            raise StubNotInLattice("terminal value is not a grid point")
        flat = int(np.ravel_multi_index(idx, self.stencil.shape))
        return self.value_at(stub.k, flat, self.lift.state_of(stub, self.space))

    def at(self, x, k: int = 0) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self(PathStub(self.grid, np.repeat(x[None, :], k + 1, axis=0)))


def solve_lifted(G: Generator, phi_lift: Callable, lift: LiftSpec, grid: TimeGrid,
                 space: SpatialGrid, roots: Optional[Sequence[PathStub]] = None,
                 phi: Optional[PathFunctional] = None, n_check: int = 64, seed: int = 0,
                 tol: float = 1e-10, cap: int = DEFAULT_CAP) -> LiftedSolution:
    """Backward scheme on ``(t, x, lifted state)``.

    ``phi_lift(t, x, stat)`` must reproduce the path payoff; when the path
    functional ``phi`` is given, the two are compared on random lattice paths.
    """
    sol = LiftedSolution(G, phi_lift, lift, grid, space, cap)
    if phi is not None:
        rng = np.random.default_rng(seed)
        inner = space.interior_points
        pts = space.points
        for _ in range(n_check):
            k = int(rng.integers(0, grid.N + 1))
            vals = [inner[i] for i in rng.integers(len(inner), size=k)]
            vals.append(pts[int(rng.integers(len(pts)))])
            stub = PathStub(grid, vals)
            idx = space.index_of(stub.terminal)
            flat = int(np.ravel_multi_index(idx, sol.stencil.shape))
            lifted = sol._terminal(k, flat, lift.state_of(stub, space))
            if abs(lifted - phi(stub)) > tol * (1.0 + abs(lifted)):
                raise LiftMismatch(f"lift gives {lifted}, payoff gives {phi(stub)} on {stub}")
    if roots is None:
        roots = [PathStub(grid, [p]) for p in space.interior_points]
    for r in roots:
        sol(r)
    return sol


# oracles ----------------------------------------------------------------------------------

def _stream(seed: int, omega: PathStub, chunk: int) -> np.random.Generator:
    words = np.frombuffer(omega.digest(), dtype=np.uint32).tolist()
    return np.random.default_rng(np.random.SeedSequence([int(seed), *words, int(chunk)]))


def mc_feynman_kac(phi: PathFunctional, omega: PathStub, sigma: float, n_paths: int,
                   seed: int, space: SpatialGrid, threads: int = 1) -> tuple:
    """Mean and standard error of ``phi`` over Brownian continuations of ``omega``.

    Paths are stopped at their first exit from Q (clipped onto the boundary)
    and ``phi`` is read at the exit stub.  Paths are drawn in fixed chunks
    with per-chunk streams keyed by ``(seed, omega)``, so the result does not
    depend on ``threads``.
    """
    if n_paths < 2:
        raise BadParams("n_paths must be >= 2")
    grid = omega.grid
    if omega.k == grid.N or space.on_boundary(omega.terminal):
        return float(phi(omega)), 0.0
    sizes = [min(MC_CHUNK, n_paths - s) for s in range(0, n_paths, MC_CHUNK)]

    def run(ci):
        rng = _stream(seed, omega, ci)
        total = np.zeros(2)
        for _, vals in simulate_continuations(omega, space, sigma, sizes[ci], rng):
            y = phi.batch(grid, vals)
            total += (y.sum(), (y * y).sum())
        return total

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    s, s2 = np.sum(parts, axis=0)
    mean = s / n_paths
    var = max(s2 / n_paths - mean**2, 0.0) * n_paths / (n_paths - 1)
    return float(mean), float(np.sqrt(var / n_paths))


def classical_oracle_1d(G: Generator, payoff: Callable[[float], float], T: float,
                        lower: float, upper: float, M: int = 161,
                        N: Optional[int] = None) -> Callable[[float, float], float]:
    """Explicit finite differences for ``u_t + G(u, u_x, u_xx) = 0`` on a fine 1D grid,
    with ``payoff`` as terminal and lateral data.  Returns ``u(t, x)`` by linear
    interpolation in x, at the time nodes of the fine grid."""
    x = np.linspace(lower, upper, M)
    h = x[1] - x[0]
    s2 = max(G.sigma_eff**2, 1e-300)
    if N is None:
        N = int(np.ceil(T * s2 / (0.9 * h * h)))
    dt = T / N
    if G.sigma_eff > 0 and dt * s2 / h**2 > 1 + 1e-12:
        raise CflViolation("classical oracle grid violates CFL")
    u = np.array([payoff(xi) for xi in x])
    layers = [u.copy()]
    for _ in range(N):
        new = u.copy()
        for i in range(1, M - 1):
            p = (u[i + 1] - u[i - 1]) / (2 * h)
            X = (u[i + 1] - 2 * u[i] + u[i - 1]) / h**2
            new[i] = u[i] + dt * G(u[i], p, X if G.order == 2 else None)
        u = new
        layers.append(u.copy())
    layers = layers[::-1]

    def value(t: float, xq: float) -> float:
        n = int(round(t / dt))
        return float(np.interp(xq, x, layers[n]))

    return value


# estimators -------------------------------------------------------------------------------

class LatticeSolver(BaseEstimator):
    """Estimator front end to ``solve_lattice``.

    ``fit(X)`` solves from the flat stubs at the points ``X`` (default: every
    interior point); ``predict(X)`` returns the values at time index 0.
    """

    def __init__(self, generator: Optional[Generator] = None,
                 payoff: Optional[PathFunctional] = None, T: float = 1.0, N: int = 8,
                 lower=-4.0, upper=4.0, M: int = 33, cap: int = DEFAULT_CAP):
        self.generator = generator
        self.payoff = payoff
        self.T = T
        self.N = N
        self.lower = lower
        self.upper = upper
        self.M = M
        self.cap = cap

    def _grids(self):
        check_positive_int(self.N, "N")
        return TimeGrid(self.T, self.N), SpatialGrid(self.lower, self.upper, self.M)

    def fit(self, X=None, y=None):
        if self.generator is None or self.payoff is None:
            raise BadParams("generator and payoff are required")
        grid, space = self._grids()
        roots = None
        if X is not None:
            roots = [PathStub(grid, [x]) for x in as_points(X, space.d)]
        self.solution_ = solve_lattice(self.generator, self.payoff, grid, space, roots, self.cap)
        self.grid_, self.space_ = grid, space
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "solution_")
        return np.array([self.solution_.at(x) for x in as_points(X, self.space_.d)])


class MonteCarloOracle(BaseEstimator):
    """Estimator front end to ``mc_feynman_kac`` for flat stubs at time index 0."""

    def __init__(self, payoff: Optional[PathFunctional] = None, sigma: float = 1.0,
                 n_paths: int = 100_000, seed: int = 0, T: float = 1.0, N: int = 8,
                 lower=-4.0, upper=4.0, M: int = 33, threads: int = 1):
        self.payoff = payoff
        self.sigma = sigma
        self.n_paths = n_paths
        self.seed = seed
        self.T = T
        self.N = N
        self.lower = lower
        self.upper = upper
        self.M = M
        self.threads = threads

    def fit(self, X=None, y=None):
        if self.payoff is None:
            raise BadParams("payoff is required")
        check_positive_int(self.n_paths, "n_paths")
        self.grid_ = TimeGrid(self.T, self.N)
        self.space_ = SpatialGrid(self.lower, self.upper, self.M)
        return self

    def predict(self, X, return_std: bool = False):
        check_is_fitted(self, "grid_")
        res = [mc_feynman_kac(self.payoff, PathStub(self.grid_, [x]), self.sigma, self.n_paths,
                              self.seed, self.space_, self.threads)
               for x in as_points(X, self.space_.d)]
        mean = np.array([r[0] for r in res])
        if return_std:
            return mean, np.array([r[1] for r in res])
        return mean
