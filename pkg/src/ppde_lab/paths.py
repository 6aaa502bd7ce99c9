"""Discretized path space: grids, path stubs and the operations on them.

A path stub is a right-continuous, piecewise-constant path observed on
``[0, t_k]`` of a uniform time grid.  ``values[j]`` is the value on
``[t_j, t_{j+1})`` and ``values[k]`` is the terminal value ``omega(t_k)``.
"""
from __future__ import annotations

import enum
import hashlib
import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import (
    GridMismatch,
    HorizonExceeded,
    IndexMismatch,
    NotInClosure,
    OutOfDomain,
)

ValueFilter = Optional[Callable[[np.ndarray], bool]]


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be > 0")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("steps N must be an integer >= 1")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "N", int(self.N))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = np.arange(self.N + 1) * self.dt
        nodes[-1] = self.T
        return nodes

    def time(self, k: int) -> float:
        return self.T if k == self.N else k * self.dt

    def to_dict(self) -> dict:
        return {"T": self.T, "N": self.N}


class SpatialGrid:
    """Axis-aligned open box Q with ``M`` equispaced points per axis.

    The two extreme points of every axis lie on the boundary of Q.
    """

    def __init__(self, lower, upper, M: int):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-D of equal length")
        if np.any(lower >= upper):
            raise ValueError("need lower < upper on every axis")
        if int(M) != M or M < 3:
            raise ValueError("M must be an integer >= 3")
        self.lower = lower
        self.upper = upper
        self.M = int(M)
        self.lower.setflags(write=False)
        self.upper.setflags(write=False)

    @property
    def d(self) -> int:
        return self.lower.size

    @cached_property
    def h(self) -> np.ndarray:
        return (self.upper - self.lower) / (self.M - 1)

    @cached_property
    def axes(self) -> list:
        return [np.linspace(lo, up, self.M) for lo, up in zip(self.lower, self.upper)]

    @cached_property
    def _atol(self) -> float:
        return 1e-12 * (1.0 + float(np.max(np.abs(np.r_[self.lower, self.upper]))))

    @cached_property
    def points(self) -> list:
        """All grid points of the closed box, lexicographic order."""
        return [np.array(p) for p in itertools.product(*self.axes)]

    @cached_property
    def interior_points(self) -> list:
        return [p for p in self.points if self.in_open(p)]

    def in_open(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x > self.lower + self._atol) and np.all(x < self.upper - self._atol))

    def in_closure(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - self._atol) and np.all(x <= self.upper + self._atol))

    def on_boundary(self, x) -> bool:
        return self.in_closure(x) and not self.in_open(x)

    def distance_to_boundary(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.lower), np.min(self.upper - x)))

    def index_of(self, x) -> Optional[tuple]:
        """Per-axis grid indices of ``x``, or None when ``x`` is off-grid."""
        x = np.asarray(x, dtype=float)
        idx = []
        for ax, xi in zip(self.axes, x):
            j = int(np.argmin(np.abs(ax - xi)))
            if abs(ax[j] - xi) > 1e-9 * (1.0 + abs(xi)):
                return None
            idx.append(j)
        return tuple(idx)

    def nearest_index(self, x) -> tuple:
        x = np.asarray(x, dtype=float)
        return tuple(int(np.argmin(np.abs(ax - xi))) for ax, xi in zip(self.axes, x))

    def point(self, idx) -> np.ndarray:
        return np.array([ax[i] for ax, i in zip(self.axes, idx)])

    def product(self, other: "SpatialGrid") -> "SpatialGrid":
        """The box Q x Q' used for doubling of variables."""
        if other.M != self.M:
            raise ValueError("product grids need equal M")
        return SpatialGrid(np.r_[self.lower, other.lower], np.r_[self.upper, other.upper], self.M)

    def __eq__(self, other):
        return (
            isinstance(other, SpatialGrid)
            and self.M == other.M
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self):
        return hash((self.M, self.lower.tobytes(), self.upper.tobytes()))

    def __repr__(self):
        return f"SpatialGrid(lower={self.lower.tolist()}, upper={self.upper.tolist()}, M={self.M})"

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "M": self.M}


class PathStub:
    """Immutable piecewise-constant path on ``[0, t_k]``."""

    __slots__ = ("grid", "values", "_hash")

    def __init__(self, grid: TimeGrid, values):
        arr = np.array(values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError("values must have shape (k+1, d) with k >= 0")
        if arr.shape[0] - 1 > grid.N:
            raise HorizonExceeded(f"stub index {arr.shape[0] - 1} exceeds N={grid.N}")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr
        self._hash = None

    @property
    def k(self) -> int:
        return self.values.shape[0] - 1

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def t(self) -> float:
        return self.grid.time(self.k)

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def restrict(self, k: int) -> "PathStub":
        """The stub observed up to index ``k`` (``omega_{t_k}``)."""
        if not 0 <= k <= self.k:
            raise IndexMismatch(f"cannot restrict index {self.k} stub to {k}")
        return PathStub(self.grid, self.values[: k + 1])

    def __len__(self):
        return self.k + 1

    def __eq__(self, other):
        return (
            isinstance(other, PathStub)
            and self.grid == other.grid
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.grid, self.values.shape, self.values.tobytes()))
        return self._hash

    def __repr__(self):
        vals = self.values[:, 0].tolist() if self.d == 1 else self.values.tolist()
        return f"PathStub(k={self.k}, values={vals})"

    def digest(self) -> bytes:
        """Stable content digest, used to key per-path random streams."""
        h = hashlib.blake2b(digest_size=16)
        h.update(np.array([self.grid.T, self.grid.N, self.k, self.d]).tobytes())
        h.update(np.ascontiguousarray(self.values).tobytes())
        return h.digest()

    def to_json(self) -> dict:
        return {"k": self.k, "values": self.values.tolist(), "grid": self.grid.to_dict()}

    @classmethod
    def from_json(cls, obj: dict, grid: Optional[TimeGrid] = None) -> "PathStub":
        if grid is None:
            grid = TimeGrid(**obj["grid"])
        stub = cls(grid, obj["values"])
        if "k" in obj and obj["k"] != stub.k:
            raise IndexMismatch(f"declared k={obj['k']} but {stub.k + 1} values given")
        return stub


class DomainClass(enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"


def vertical_bump(omega: PathStub, x, space: Optional[SpatialGrid] = None) -> PathStub:
    """``omega_t^x``: shift only the terminal value by ``x``."""
    x = np.broadcast_to(np.asarray(x, dtype=float), (omega.d,))
    vals = np.array(omega.values)
    vals[-1] = vals[-1] + x
    if space is not None and not space.in_closure(vals[-1]):
        raise OutOfDomain(f"bumped terminal value {vals[-1].tolist()} leaves the closed domain")
    return PathStub(omega.grid, vals)


def flat_extend(omega: PathStub, steps: int) -> PathStub:
    """``omega_{t, delta}`` with ``delta = steps * dt``."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if omega.k + steps > omega.grid.N:
        raise HorizonExceeded(f"k + steps = {omega.k + steps} > N = {omega.grid.N}")
    if steps == 0:
        return omega
    tail = np.repeat(omega.values[-1:], steps, axis=0)
    return PathStub(omega.grid, np.vstack([omega.values, tail]))


def concat(head: PathStub, tail, start: Optional[int] = None,
           space: Optional[SpatialGrid] = None) -> PathStub:
    """``head (x) tail``: head's values before its terminal index, then the tail.

    ``tail`` holds values for indices ``start..k``; ``start`` must equal the
    head's terminal index (it defaults to it).  A full-length ``PathStub`` may
    be passed as tail, in which case only its entries from ``head.k`` on are used.
    """
    kbar = head.k
    if isinstance(tail, PathStub):
        if tail.grid != head.grid:
            raise GridMismatch("head and tail live on different time grids")
        if tail.k < kbar:
            raise IndexMismatch(f"tail ends at {tail.k} before head index {kbar}")
        tail_vals = tail.values[kbar:]
        start = kbar
    else:
        tail_vals = np.array(tail, dtype=float)
        if tail_vals.ndim == 1:
            tail_vals = tail_vals[:, None]
        if start is None:
            start = kbar
    if start != kbar:
        raise IndexMismatch(f"tail starts at index {start}, head ends at {kbar}")
    out = PathStub(head.grid, np.vstack([head.values[:kbar], tail_vals]))
    if space is not None:
        classify(out, space)
    return out


def _check_same_grid(a: PathStub, b: PathStub):
    if a.grid != b.grid:
        raise GridMismatch("stubs live on different time grids")


def distance_parabolic(omega: PathStub, upsilon: PathStub) -> float:
    """``|w(t)-u(s)|^2 + int_0^{t v s} |w(r ^ t) - u(r ^ s)|^2 dr`` (left Riemann)."""
    _check_same_grid(omega, upsilon)
    K = max(omega.k, upsilon.k)
    j = np.arange(K)
    a = omega.values[np.minimum(j, omega.k)]
    b = upsilon.values[np.minimum(j, upsilon.k)]
    integral = omega.grid.dt * float(np.sum((a - b) ** 2))
    return float(np.sum((omega.terminal - upsilon.terminal) ** 2)) + integral


def distance_first_order(gamma: PathStub, gamma_bar: PathStub) -> float:
    """Time-asymmetric metric of the first-order comparison.

    ``|g(s)-gb(sb)|^2 + |s-sb|^2 + int_0^{s ^ sb} (s ^ sb - r)|g(r)-gb(r)|^2 dr``.
    """
    _check_same_grid(gamma, gamma_bar)
    grid = gamma.grid
    m = min(gamma.k, gamma_bar.k)
    smin = grid.time(m)
    r = np.arange(m) * grid.dt
    diff = np.sum((gamma.values[:m] - gamma_bar.values[:m]) ** 2, axis=1)
    integral = grid.dt * float(np.sum((smin - r) * diff))
    terminal = float(np.sum((gamma.terminal - gamma_bar.terminal) ** 2))
    return terminal + (gamma.t - gamma_bar.t) ** 2 + integral


def classify(omega: PathStub, space: SpatialGrid) -> DomainClass:
    if omega.d != space.d:
        raise ValueError(f"stub dimension {omega.d} != domain dimension {space.d}")
    for j in range(omega.k):
        if not space.in_open(omega.values[j]):
            raise NotInClosure(f"value at index {j} is not inside the open domain")
    if not space.in_closure(omega.terminal):
        raise NotInClosure("terminal value outside the closed domain")
    if omega.k == omega.grid.N or space.on_boundary(omega.terminal):
        return DomainClass.BOUNDARY
    return DomainClass.INTERIOR


def is_interior(omega: PathStub, space: SpatialGrid) -> bool:
    return classify(omega, space) is DomainClass.INTERIOR


def _candidates(space: SpatialGrid, value_filter: ValueFilter) -> list:
    pts = space.points
    if value_filter is not None:
        pts = [p for p in pts if value_filter(p)]
    return pts


def _descend(grid, prefix: list, level: int, candidates: list, space, k_max,
             all_pts: list) -> Iterator[PathStub]:
    for y in candidates:
        vals = prefix + [y]
        yield PathStub(grid, vals)
        if level < k_max and space.in_open(y):
            yield from _descend(grid, vals, level + 1, all_pts, space, k_max, all_pts)


def frozen_continuations(omega: PathStub, space: SpatialGrid, k_max: Optional[int] = None,
                        value_filter: ValueFilter = None) -> Iterator[PathStub]:
    """Every lattice stub ``gamma`` with ``gamma = omega (x) gamma`` and index in [k, k_max].

    Only the values strictly before ``omega``'s terminal index are frozen, so
    the terminal value itself may move (vertical bumps onto grid points).
    Yields ``omega`` first, then depth-first in lexicographic order.
    """
    N = omega.grid.N
    k_max = N if k_max is None else k_max
    if not omega.k <= k_max <= N:
        raise HorizonExceeded(f"need k <= k_max <= N, got k={omega.k}, k_max={k_max}")
    pts = _candidates(space, value_filter)
    first = [omega.terminal] + [p for p in pts if not np.array_equal(p, omega.terminal)]
    prefix = list(omega.values[:-1])
    return _descend(omega.grid, prefix, omega.k, first, space, k_max, pts)


def enumerate_continuations(omega: PathStub, space: SpatialGrid, k_max: Optional[int] = None,
                            value_filter: ValueFilter = None) -> Iterator[PathStub]:
    """Lattice continuations of ``omega``; a boundary stub has none but itself."""
    if classify(omega, space) is DomainClass.BOUNDARY:
        return iter([omega])
    return frozen_continuations(omega, space, k_max, value_filter)


def count_continuations(omega: PathStub, space: SpatialGrid, k_max: Optional[int] = None,
                        value_filter: ValueFilter = None, force: bool = False) -> int:
    """Closed-form size of the continuation set (no enumeration)."""
    if not force and classify(omega, space) is DomainClass.BOUNDARY:
        return 1
    N = omega.grid.N
    k_max = N if k_max is None else k_max
    pts = _candidates(space, value_filter)
    n_all = len(pts)
    n_int = sum(1 for p in pts if space.in_open(p))
    on_grid = any(np.array_equal(p, omega.terminal) for p in pts)
    nodes = n_all + (0 if on_grid else 1)
    inner = n_int + (0 if on_grid or not space.in_open(omega.terminal) else 1)
    total = nodes
    for _ in range(omega.k, k_max):
        nodes, inner = inner * n_all, inner * n_int
        total += nodes
    return total


def lattice_stubs(grid: TimeGrid, space: SpatialGrid, k_max: Optional[int] = None,
                  value_filter: ValueFilter = None) -> list:
    """Every lattice stub with grid values, indices ``0..k_max``, each exactly once."""
    pts = _candidates(space, value_filter)
    root = PathStub(grid, [pts[0]])
    return list(frozen_continuations(root, space, k_max, value_filter))


def random_stubs(grid: TimeGrid, space: SpatialGrid, n: int, rng=None, on_grid: bool = False,
                 k_range: Optional[Sequence[int]] = None) -> list:
    """Random interior stubs (values strictly inside Q, index below N)."""
    rng = np.random.default_rng(rng)
    lo_k, hi_k = (0, grid.N - 1) if k_range is None else k_range
    out = []
    interior = space.interior_points
    for _ in range(n):
        k = int(rng.integers(lo_k, hi_k + 1))
        if on_grid:
            vals = [interior[i] for i in rng.integers(0, len(interior), size=k + 1)]
        else:
            # keep at least half a grid step away from the boundary
            pad = 0.5 * space.h
            vals = rng.uniform(space.lower + pad, space.upper - pad, size=(k + 1, space.d))
        out.append(PathStub(grid, vals))
    return out


def simulate_continuations(omega: PathStub, space: SpatialGrid, sigma: float, n: int,
                           rng) -> list:
    """Brownian continuations of ``omega`` sampled on the time grid.

    Each path is ``omega (x)`` a sigma-Brownian motion started at ``omega(t)``;
    a path leaving Q is clipped onto the boundary and stopped there.  Returns
    ``(exit_index, values)`` groups with ``values`` shaped ``(n_e, exit_index+1, d)``.
    """
    grid = omega.grid
    steps = grid.N - omega.k
    d = omega.d
    incr = sigma * np.sqrt(grid.dt) * rng.standard_normal((n, steps, d))
    path = omega.terminal + np.cumsum(incr, axis=1)
    inside = np.all((path > space.lower) & (path < space.upper), axis=2)
    exited = ~inside
    first = np.where(exited.any(axis=1), exited.argmax(axis=1), steps)
    groups = []
    head = np.broadcast_to(omega.values, (n,) + omega.values.shape)
    for e in np.unique(first):
        sel = first == e
        length = min(e + 1, steps)
        tail = path[sel, :length].copy()
        if e < steps:
            tail[:, -1] = np.clip(tail[:, -1], space.lower, space.upper)
        vals = np.concatenate([head[sel], tail], axis=1)
        groups.append((omega.k + length, vals))
    return groups
