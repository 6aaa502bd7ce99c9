import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppde_lab.errors import NotSmooth, SearchSpaceTooLarge
from ppde_lab.frozen_max import (
    MaximizationResult,
    brute_force_sup,
    brute_force_sup_pair,
    first_order_conditions,
    left_frozen_maximize,
    left_frozen_maximize_pair,
    verify_rmax,
)
from ppde_lab.functional import PathFunctional, builtin, classical_lift
from ppde_lab.paths import PathStub, SpatialGrid, TimeGrid, distance_parabolic

from conftest import stub


def hashed(seed: int, levels: int = 0) -> PathFunctional:
    """Arbitrary deterministic function of the stub; ``levels`` > 0 forces ties."""
    def f(w):
        h = int.from_bytes(w.digest()[:8], "little") ^ (seed * 0x9E3779B97F4A7C15 % 2**64)
        x = np.random.default_rng(h).random()
        return float(np.floor(x * levels)) if levels else float(x)
    return PathFunctional(f, name=f"hashed({seed})")


@pytest.fixture
def lat():
    return TimeGrid(1.0, 2), SpatialGrid(-2.0, 2.0, 5)


def test_terminal_jumps_to_boundary(lat):
    g, sp = lat
    bf = brute_force_sup(builtin("terminal"), stub(g, 0.0), sp)
    assert bf.value == 2.0 and bf.maximizer.values[:, 0].tolist() == [2.0]
    lf = left_frozen_maximize(builtin("terminal"), stub(g, 0.0), sp)
    assert lf.value == 2.0
    assert lf.certificate[-1][0] == lf.certificate[-1][1]


def test_negative_running_square(lat):
    g, sp = lat
    u = PathFunctional(lambda w: -w.grid.dt * float(np.sum(w.values[:-1] ** 2)))
    w0 = stub(g, 0.0)
    for fn in (brute_force_sup, left_frozen_maximize):
        res = fn(u, w0, sp)
        assert res.value == 0.0
        assert res.maximizer == w0


def test_constant(lat):
    g, sp = lat
    res = left_frozen_maximize(builtin("constant", value=3.0), stub(g, 1.0), sp)
    assert res.value == 3.0 and res.maximizer == stub(g, 1.0)
    assert verify_rmax(builtin("constant", value=3.0), res, sp).ok


def test_boundary_root_returned(lat):
    g, sp = lat
    w = stub(g, 0.0, 2.0)
    res = left_frozen_maximize(builtin("terminal"), w, sp)
    assert res.maximizer == w and res.root == "boundary"


def test_unique_strict_maximizer():
    g, sp = TimeGrid(1.0, 3), SpatialGrid(-2.0, 2.0, 5)
    target = stub(g, 0.0, 1.0, -1.0, 1.0)
    u = PathFunctional(lambda w: -distance_parabolic(w, target))
    res = left_frozen_maximize(u, stub(g, 0.0), sp)
    assert res.maximizer == target and res.value == 0.0


def test_verify_rmax_detects_lowered_value(lat):
    g, sp = lat
    u = hashed(3)
    res = left_frozen_maximize(u, stub(g, 0.0), sp)
    assert verify_rmax(u, res, sp).ok
    bad = MaximizationResult(res.maximizer, res.value - 1.0, res.certificate)
    rep = verify_rmax(u, bad, sp)
    assert not rep.ok and rep.violation == pytest.approx(1.0)


def test_cap_enforced():
    g, sp = TimeGrid(1.0, 8), SpatialGrid(-2.0, 2.0, 9)
    with pytest.raises(SearchSpaceTooLarge):
        left_frozen_maximize(builtin("terminal"), stub(g, 0.0), sp, cap=1000)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0, 3]), st.floats(-1.0, 1.0))
def test_oracle_equivalence(seed, levels, x0):
    g, sp = TimeGrid(1.0, 3), SpatialGrid(-2.0, 2.0, 5)
    u = hashed(seed, levels)
    w0 = stub(g, round(x0))
    lf, bf = left_frozen_maximize(u, w0, sp), brute_force_sup(u, w0, sp)
    assert lf.value == bf.value
    assert lf.gap_halving()
    assert verify_rmax(u, lf, sp).ok
    # prefix preserved and value improved
    assert np.array_equal(lf.maximizer.values[: w0.k], w0.values[: w0.k])
    assert lf.value >= u(w0)


def test_pair_separable_equals_single_runs(lat):
    g, sp = lat
    f, h = hashed(1), hashed(2)
    res = left_frozen_maximize_pair(lambda a, b: f(a) + h(b), stub(g, 0.0), stub(g, 1.0), sp)
    single = (left_frozen_maximize(f, stub(g, 0.0), sp).value
              + left_frozen_maximize(h, stub(g, 1.0), sp).value)
    assert res.value == pytest.approx(single)
    assert res.gap_halving()


def test_pair_distance_diagonal(lat):
    g, sp = lat
    w = stub(g, 0.0)
    res = left_frozen_maximize_pair(lambda a, b: -distance_parabolic(a, b), w, w, sp)
    a, b = res.maximizer
    assert res.value == 0.0 and a == b


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_pair_oracle_equivalence(seed):
    g, sp = TimeGrid(1.0, 2), SpatialGrid(-1.0, 1.0, 3)
    f = hashed(seed)
    u = lambda a, b: f(a) - 0.7 * f(b) - 2.0 * distance_parabolic(a, b) if a.k == b.k else \
        f(a) - f(b) - 5.0
    w = stub(g, 0.0)
    lf, bf = left_frozen_maximize_pair(u, w, w, sp), brute_force_sup_pair(u, w, w, sp)
    assert lf.value == bf.value
    assert lf.gap_halving()
    assert verify_rmax(u, lf, sp).ok
    ks = [(a.k, b.k) for a, b in [lf.maximizer]]
    assert ks[0][0] >= 0 and ks[0][1] >= 0


def test_first_order_conditions_examples(grid):
    u = PathFunctional(lambda w: -float(w.terminal @ w.terminal), dt=lambda w: 0.0,
                       dx=lambda w: -2 * w.terminal, dxx=lambda w: -2 * np.eye(w.d),
                       smoothness="C12")
    foc = first_order_conditions(u, stub(grid, 0.0, 0.0))
    assert foc.passed and foc.dxx_max_eig == -2.0
    minus_t = classical_lift(lambda t, x: -t, dt=lambda t, x: -1.0, dx=lambda t, x: 0.0,
                             dxx=lambda t, x: 0.0)
    foc = first_order_conditions(minus_t, stub(grid, 0.5, 0.5))
    assert foc.passed and foc.dt == -1.0
    foc = first_order_conditions(builtin("terminal"), stub(grid, 0.5))
    assert not foc.dx_ok and not foc.passed
    with pytest.raises(NotSmooth):
        first_order_conditions(builtin("running_max"), stub(grid, 0.5))
