"""Path functionals, numeric Dupire derivatives and the builtin corpus."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BadParams, NotSmooth, OutOfDomain, UnknownName
from .paths import (
    PathStub,
    SpatialGrid,
    TimeGrid,
    flat_extend,
    simulate_continuations,
    vertical_bump,
)

SMOOTHNESS = ("C12", "C10", "USCstar", "LSCstar", None)


@dataclass(frozen=True)
class DupireDerivatives:
    dt: float
    dx: np.ndarray
    dxx: np.ndarray
    h: Optional[float] = None
    steps: Optional[int] = None


def _combine_smoothness(a, b):
    if a == b:
        return a
    if {a, b} == {"C12", "C10"}:
        return "C10"
    return None


def _negate_smoothness(s):
    return {"USCstar": "LSCstar", "LSCstar": "USCstar"}.get(s, s)


class PathFunctional:
    """A real functional ``u(omega_t)`` on lattice stubs.

    ``dt``, ``dx`` and ``dxx`` are optional exact-derivative oracles.  ``batch``
    optionally evaluates many equal-length paths at once from an array shaped
    ``(n, k+1, d)``; it only serves the Monte Carlo routines.
    """

    def __init__(self, func: Callable[[PathStub], float], *, dt=None, dx=None, dxx=None,
                 smoothness=None, batch=None, name: str = "functional",
                 upper: Optional[float] = None, lower: Optional[float] = None):
        if smoothness not in SMOOTHNESS:
            raise BadParams(f"unknown smoothness tag {smoothness!r}")
        if smoothness == "C12" and (dt is None or dx is None or dxx is None):
            raise BadParams("a C12 functional needs exact D_t, D_x and D_xx")
        self.func = func
        self.exact_dt = dt
        self.exact_dx = dx
        self.exact_dxx = dxx
        self.smoothness = smoothness
        self._batch = batch
        self.name = name
        self.upper = upper
        self.lower = lower

    def __call__(self, omega: PathStub) -> float:
        return float(self.func(omega))

    def __repr__(self):
        return f"PathFunctional({self.name}, smoothness={self.smoothness})"

    @property
    def has_exact(self) -> bool:
        return None not in (self.exact_dt, self.exact_dx, self.exact_dxx)

    def exact_derivatives(self, omega: PathStub) -> DupireDerivatives:
        if not self.has_exact:
            raise NotSmooth(f"{self.name} carries no exact derivatives")
        d = omega.d
        return DupireDerivatives(
            float(self.exact_dt(omega)),
            np.broadcast_to(np.asarray(self.exact_dx(omega), dtype=float), (d,)).copy(),
            np.broadcast_to(np.asarray(self.exact_dxx(omega), dtype=float), (d, d)).copy(),
        )

    def batch(self, grid: TimeGrid, values: np.ndarray) -> np.ndarray:
        if self._batch is not None:
            return np.asarray(self._batch(grid, values), dtype=float)
        return np.array([self(PathStub(grid, v)) for v in values])

    # arithmetic keeps exact derivatives whenever both operands carry them
    def _binary(self, other, sign: float, label: str) -> "PathFunctional":
        if not isinstance(other, PathFunctional):
            c = float(other)
            fb = self._batch
            return PathFunctional(
                lambda w: self(w) + sign * c,
                dt=self.exact_dt, dx=self.exact_dx, dxx=self.exact_dxx,
                smoothness=self.smoothness,
                batch=None if fb is None else (lambda g, v: fb(g, v) + sign * c),
                name=f"({self.name} {label} {c:g})",
            )

        def lin(fa, fb):
            if fa is None or fb is None:
                return None
            return lambda w: np.asarray(fa(w), dtype=float) + sign * np.asarray(fb(w), dtype=float)

        ba, bb = self._batch, other._batch
        batch = None
        if ba is not None and bb is not None:
            batch = lambda g, v: ba(g, v) + sign * bb(g, v)
        smooth = _combine_smoothness(self.smoothness, other.smoothness)
        dt, dx, dxx = lin(self.exact_dt, other.exact_dt), lin(self.exact_dx, other.exact_dx), \
            lin(self.exact_dxx, other.exact_dxx)
        if smooth == "C12" and None in (dt, dx, dxx):
            smooth = None
        return PathFunctional(lambda w: self(w) + sign * other(w), dt=dt, dx=dx, dxx=dxx,
                              smoothness=smooth, batch=batch,
                              name=f"({self.name} {label} {other.name})")

    def __add__(self, other):
        return self._binary(other, 1.0, "+")

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, -1.0, "-")

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, c):
        c = float(c)

        def sc(f):
            return None if f is None else (lambda w: c * np.asarray(f(w), dtype=float))

        smooth = self.smoothness if c >= 0 else _negate_smoothness(self.smoothness)
        fb = self._batch
        return PathFunctional(lambda w: c * self(w), dt=sc(self.exact_dt), dx=sc(self.exact_dx),
                              dxx=sc(self.exact_dxx), smoothness=smooth,
                              batch=None if fb is None else (lambda g, v: c * fb(g, v)),
                              name=f"{c:g}*{self.name}")

    __rmul__ = __mul__

    def __neg__(self):
        out = self * -1.0
        out.name = f"-{self.name}"
        return out


def default_h(omega: PathStub, space: Optional[SpatialGrid], h: Optional[float] = None) -> float:
    """Grid spacing / 8, clipped so the bumps stay inside the closed domain."""
    if h is None:
        if space is None:
            raise ValueError("pass either h or a SpatialGrid")
        h = float(np.min(space.h)) / 8.0
    if space is not None:
        dist = space.distance_to_boundary(omega.terminal)
        if dist <= 0:
            raise OutOfDomain("terminal value sits on the boundary; no vertical room")
        h = min(h, dist)
    return h


def d_t(u: PathFunctional, omega: PathStub, steps: int = 1) -> float:
    """Forward horizontal difference along the flat extension."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    ext = flat_extend(omega, steps)
    return (u(ext) - u(omega)) / (steps * omega.grid.dt)


def _bump(omega, vec, space):
    return vertical_bump(omega, vec, space)


def d_x(u: PathFunctional, omega: PathStub, h: Optional[float] = None,
        space: Optional[SpatialGrid] = None) -> np.ndarray:
    h = default_h(omega, space, h)
    d = omega.d
    out = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[i] = (u(_bump(omega, e, space)) - u(_bump(omega, -e, space))) / (2 * h)
    return out


def d_xx(u: PathFunctional, omega: PathStub, h: Optional[float] = None,
         space: Optional[SpatialGrid] = None) -> np.ndarray:
    h = default_h(omega, space, h)
    d = omega.d
    u0 = u(omega)
    out = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[i, i] = (u(_bump(omega, e, space)) - 2 * u0 + u(_bump(omega, -e, space))) / h**2
        for j in range(i):
            f = np.zeros(d)
            f[j] = h
            pp = u(_bump(omega, e + f, space))
            pm = u(_bump(omega, e - f, space))
            mp = u(_bump(omega, -e + f, space))
            mm = u(_bump(omega, -e - f, space))
            out[i, j] = out[j, i] = (pp - pm - mp + mm) / (4 * h**2)
    return 0.5 * (out + out.T)


def numeric_derivatives(u: PathFunctional, omega: PathStub, space: Optional[SpatialGrid] = None,
                        h: Optional[float] = None, steps: int = 1) -> DupireDerivatives:
    h = default_h(omega, space, h)
    return DupireDerivatives(d_t(u, omega, steps), d_x(u, omega, h, space),
                             d_xx(u, omega, h, space), h=h, steps=steps)


def derivatives(u: PathFunctional, omega: PathStub, space: Optional[SpatialGrid] = None,
                h: Optional[float] = None) -> DupireDerivatives:
    """Exact derivatives when available, numeric ones otherwise."""
    if u.has_exact:
        return u.exact_derivatives(omega)
    return numeric_derivatives(u, omega, space, h)


def _xarg(x: np.ndarray):
    return float(x[0]) if x.size == 1 else x


def classical_lift(ubar: Callable, dt: Optional[Callable] = None, dx: Optional[Callable] = None,
                   dxx: Optional[Callable] = None, name: str = "classical") -> PathFunctional:
    """``u(omega_t) := ubar(t, omega(t))``.

    ``ubar`` and the optional partials receive ``x`` as a float in one
    dimension and as an array otherwise.
    """
    def wrap(f):
        if f is None:
            return None
        return lambda w: f(w.t, _xarg(w.terminal))

    exact = None not in (dt, dx, dxx)
    return PathFunctional(wrap(ubar), dt=wrap(dt), dx=wrap(dx), dxx=wrap(dxx),
                          smoothness="C12" if exact else None, name=name)


# builtin corpus -------------------------------------------------------------

def _terminal(axis=0):
    def f(w):
        return w.terminal[axis]

    def grad(w):
        g = np.zeros(w.d)
        g[axis] = 1.0
        return g

    return PathFunctional(f, dt=lambda w: 0.0, dx=grad, dxx=lambda w: np.zeros((w.d, w.d)),
                          smoothness="C12", batch=lambda g, v: v[:, -1, axis], name="terminal")


def _running_integral(axis=0):
    def f(w):
        return w.grid.dt * float(np.sum(w.values[:-1, axis]))

    return PathFunctional(f, dt=lambda w: w.terminal[axis], dx=lambda w: np.zeros(w.d),
                          dxx=lambda w: np.zeros((w.d, w.d)), smoothness="C12",
                          batch=lambda g, v: g.dt * v[:, :-1, axis].sum(axis=1),
                          name="running_integral")


def _running_max(axis=0):
    return PathFunctional(lambda w: float(np.max(w.values[:, axis])), smoothness="C10",
                          dt=None, batch=lambda g, v: v[:, :, axis].max(axis=1),
                          name="running_max")


def _asian_martingale(T, axis=0):
    T = float(T)

    def f(w):
        return w.grid.dt * float(np.sum(w.values[:-1, axis])) + w.terminal[axis] * (T - w.t)

    def grad(w):
        g = np.zeros(w.d)
        g[axis] = T - w.t
        return g

    def batch(g, v):
        t = g.time(v.shape[1] - 1)
        return g.dt * v[:, :-1, axis].sum(axis=1) + v[:, -1, axis] * (T - t)

    return PathFunctional(f, dt=lambda w: 0.0, dx=grad, dxx=lambda w: np.zeros((w.d, w.d)),
                          smoothness="C12", batch=batch, name="asian_martingale")


def _heat_solution(T, sigma=1.0):
    T, s2 = float(T), float(sigma) ** 2

    def f(w):
        return float(w.terminal @ w.terminal) + w.d * s2 * (T - w.t)

    def batch(g, v):
        t = g.time(v.shape[1] - 1)
        return np.sum(v[:, -1] ** 2, axis=1) + v.shape[2] * s2 * (T - t)

    return PathFunctional(f, dt=lambda w: -w.d * s2, dx=lambda w: 2.0 * w.terminal,
                          dxx=lambda w: 2.0 * np.eye(w.d), smoothness="C12", batch=batch,
                          name="heat_solution")


def _quadratic_test(curvature=1.0, center=0.0, time_rate=0.0, running_weight=0.0):
    """``-a|w(t)-c|^2 - b t - lam int_0^t |w(s)-c|^2 ds``."""
    a, b, lam = float(curvature), float(time_rate), float(running_weight)
    c = np.atleast_1d(np.asarray(center, dtype=float))

    def f(w):
        dev = w.values - c
        sq = np.sum(dev**2, axis=1)
        return -a * sq[-1] - b * w.t - lam * w.grid.dt * float(np.sum(sq[:-1]))

    def dt(w):
        return -b - lam * float(np.sum((w.terminal - c) ** 2))

    return PathFunctional(f, dt=dt, dx=lambda w: -2.0 * a * (w.terminal - c),
                          dxx=lambda w: -2.0 * a * np.eye(w.d), smoothness="C12",
                          name="quadratic_test")


def _mc_conditional(payoff, sigma, n, seed, space):
    if payoff is None or space is None:
        raise BadParams("mc_conditional needs a payoff functional and a SpatialGrid")
    if seed is None:
        raise BadParams("mc_conditional needs an explicit seed")

    def f(w):
        from .solver import mc_feynman_kac  # late import: solver depends on this module
        return mc_feynman_kac(payoff, w, sigma, n, seed, space)[0]

    return PathFunctional(f, smoothness=None, name="mc_conditional")


def _constant(value=0.0):
    c = float(value)
    return PathFunctional(lambda w: c, dt=lambda w: 0.0, dx=lambda w: np.zeros(w.d),
                          dxx=lambda w: np.zeros((w.d, w.d)), smoothness="C12",
                          batch=lambda g, v: np.full(v.shape[0], c), name="constant")


_BUILTINS = {
    "terminal": _terminal,
    "running_integral": _running_integral,
    "running_max": _running_max,
    "asian_martingale": _asian_martingale,
    "heat_solution": _heat_solution,
    "quadratic_test": _quadratic_test,
    "mc_conditional": _mc_conditional,
    "constant": _constant,
}


def builtin(name: str, **params) -> PathFunctional:
    """Look up a builtin functional by name; ``params`` go to its constructor.

    >>> builtin("heat_solution", T=1.0, sigma=1.0).name
    'heat_solution'
    """
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise UnknownName(f"unknown functional {name!r}; choose from {sorted(_BUILTINS)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise BadParams(f"bad parameters for {name}: {exc}") from None


def builtin_names() -> list:
    return sorted(_BUILTINS)


# semicontinuity diagnostics ----------------------------------------------------

@dataclass
class SemicontinuityReport:
    """Sampled USC* diagnostic; never a certificate."""
    margin: float
    margin_left_limit: float
    margin_usc: float
    witness: Optional[str]
    n_probes: int
    diagnostic: bool = True

    @property
    def violated(self) -> bool:
        return self.margin > 1e-9


def check_usc_star(u: PathFunctional, omega: PathStub, space: SpatialGrid,
                   budget: int = 4, radius: Optional[float] = None) -> SemicontinuityReport:
    """Probe both USC* conditions around ``omega``.

    Left-limit condition: ``u`` along the restrictions ``omega_{t_i}`` (the
    last ``budget`` grid times before t) against the sup over grid bumps of
    ``omega``.  USC condition: on the map ``(s, x) -> u((omega^x)_{t,s})``
    for each grid offset ``s``, the excess ``max_{|y|<=r} u(x+y) - u(x)`` is
    extrapolated to ``r -> 0`` from a radius ladder.
    """
    n = 0
    # condition (ii)
    bump_vals = []
    for p in space.points:
        bump_vals.append(u(vertical_bump(omega, p - omega.terminal)))
        n += 1
    sup_bumps = max(bump_vals)
    left = -np.inf
    for j in range(max(0, omega.k - budget), omega.k):
        left = max(left, u(omega.restrict(j)))
        n += 1
    margin_ii = float(left - sup_bumps) if np.isfinite(left) else -np.inf

    # condition (i)
    r0 = float(np.min(space.h)) / 4.0 if radius is None else radius
    ladder = [r0 / 2**i for i in range(budget)]
    d = omega.d
    dirs = [s * e for e in np.eye(d) for s in (1.0, -1.0)]
    margin_i = -np.inf
    witness_i = None
    max_steps = min(2, omega.grid.N - omega.k)
    for steps in range(max_steps + 1):
        centers = [np.zeros(d)] + [0.5 * r0 * v for v in dirs]
        for x0 in centers:
            base_stub = vertical_bump(omega, x0)
            if not space.in_closure(base_stub.terminal):
                continue
            base = u(flat_extend(base_stub, steps))
            n += 1
            excess = []
            for r in ladder:
                best = -np.inf
                for v in dirs:
                    y = x0 + r * v
                    if not space.in_closure(omega.terminal + y):
                        continue
                    best = max(best, u(flat_extend(vertical_bump(omega, y), steps)))
                    n += 1
                excess.append(best - base)
            if len(excess) >= 2 and np.all(np.isfinite(excess[-2:])):
                lim = 2 * excess[-1] - excess[-2]
                if lim > margin_i:
                    margin_i, witness_i = float(lim), f"steps={steps}, x={x0.tolist()}"
    margin = max(margin_i, margin_ii)
    witness = witness_i if margin_i >= margin_ii else "left limit along t_i -> t"
    return SemicontinuityReport(float(margin), float(margin_ii), float(margin_i), witness, n)


def check_lsc_star(u: PathFunctional, omega: PathStub, space: SpatialGrid,
                   budget: int = 4, radius: Optional[float] = None) -> SemicontinuityReport:
    return check_usc_star(-u, omega, space, budget, radius)
