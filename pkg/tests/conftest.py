import numpy as np
import pytest

from ppde_lab.functional import PathFunctional, classical_lift
from ppde_lab.paths import PathStub, SpatialGrid, TimeGrid


@pytest.fixture
def grid():
    return TimeGrid(1.0, 4)


@pytest.fixture
def space():
    return SpatialGrid(-2.0, 2.0, 5)


@pytest.fixture
def small():
    """T=1, N=3, Q=(-2,2), M=5: the comparison fixture lattice."""
    return TimeGrid(1.0, 3), SpatialGrid(-2.0, 2.0, 5)


def stub(grid, *vals):
    return PathStub(grid, [[v] for v in vals])


def lift(a: float, b0: float = 0.0, T: float = 1.0) -> PathFunctional:
    """x^2 + a(T - t) + b0 with exact derivatives."""
    return classical_lift(lambda t, x: x * x + a * (T - t) + b0,
                          dt=lambda t, x: -a, dx=lambda t, x: 2 * x,
                          dxx=lambda t, x: 2.0, name=f"lift({a},{b0})")


def square() -> PathFunctional:
    return PathFunctional(lambda w: float(w.terminal @ w.terminal), name="square",
                          batch=lambda g, v: np.sum(v[:, -1] ** 2, axis=1))
