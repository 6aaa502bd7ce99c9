import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppde_lab.errors import DimensionMismatch, NotSmooth
from ppde_lab.functional import PathFunctional, builtin, classical_lift
from ppde_lab.jets import (
    FirstOrderJet,
    IshiiCertificate,
    Jet,
    closure_jet_search,
    doubling_matrix,
    exact_jet,
    jet_from_test_function,
    jet_lift,
    subjet_test,
    superjet_test,
    touch_check,
    verify_ishii,
)
from ppde_lab.paths import SpatialGrid, TimeGrid, random_stubs

from conftest import lift, square, stub

T = 1.0


@pytest.fixture
def w(grid):
    return stub(grid, 0.3, 0.5)


def test_superjet_examples(w):
    x = w.terminal[0]
    assert superjet_test(square(), w, Jet(0, 2 * x, 2)).passed
    assert superjet_test(square(), w, Jet(0, 2 * x, 2)).margin == pytest.approx(0, abs=1e-12)
    assert superjet_test(square(), w, Jet(1, 2 * x, 2)).passed
    assert not superjet_test(square(), w, Jet(0, 2 * x, 1.9)).passed


def test_subjet_examples(w):
    x = w.terminal[0]
    assert subjet_test(square(), w, Jet(0, 2 * x, 2)).passed
    assert subjet_test(square(), w, Jet(-1, 2 * x, 2)).passed
    assert not subjet_test(square(), w, Jet(0, 2 * x, 2.1)).passed


def test_first_order_jet(w):
    assert superjet_test(builtin("terminal"), w, FirstOrderJet(0.0, 1.0)).passed
    assert not superjet_test(builtin("terminal"), w, FirstOrderJet(0.0, 0.5)).passed


def test_jet_symmetry_enforced():
    with pytest.raises(ValueError):
        Jet(0, [0, 0], [[1, 2], [0, 1]])
    with pytest.raises(DimensionMismatch):
        Jet(0, [0], [[1, 0], [0, 1]])


def test_test_function_jets(grid, w):
    assert jet_from_test_function(lift(1.0), w).to_dict() == {"a": -1.0, "p": [1.0],
                                                               "X": [[2.0]]}
    c = jet_from_test_function(builtin("constant", value=4.0), w)
    assert (c.a, c.p[0], c.X[0, 0]) == (0, 0, 0)
    am = jet_from_test_function(builtin("asian_martingale", T=T), w)
    assert (am.a, am.p[0], am.X[0, 0]) == (0, T - w.t, 0)
    with pytest.raises(NotSmooth):
        jet_from_test_function(builtin("running_max"), w)


def test_touch_check(w):
    u = square()
    phi = square() + builtin("constant", value=0.0)
    assert touch_check(phi, u, w)[0]
    assert not touch_check(square() * 0.5, u, w)[0]


def test_closure_search_abs(grid):
    u = PathFunctional(lambda s: float(abs(s.terminal[0])))
    zero = stub(grid, 0.0, 0.0)
    assert closure_jet_search(u, zero, Jet(0, 1, 0))
    assert not closure_jet_search(u, zero, Jet(0, 2, 0))
    # a genuine superjet is found by the constant sequence
    assert closure_jet_search(square(), stub(grid, 0.3), Jet(0, 0.6, 2))


def test_ishii_examples():
    ok = IshiiCertificate(1.0, 1.0, doubling_matrix(1.0, 1), [[0]], [[0]], 0, 0, 0.0)
    rep = verify_ishii(ok)
    assert rep.passed and rep.upper_margin == pytest.approx(0.0, abs=1e-12)
    bad = IshiiCertificate(1.0, 1.0, doubling_matrix(1.0, 1), [[1]], [[0]], 0, 0, 0.0)
    rep = verify_ishii(bad)
    assert not rep.upper_ok and rep.lower_ok
    v = rep.violating_vector
    A = doubling_matrix(1.0, 1)
    B = np.diag([1.0, 0.0])
    assert v @ (A + A @ A - B) @ v < 0
    tiny = IshiiCertificate(1.0, 10.0, doubling_matrix(1.0, 1), [[-10]], [[0]])
    assert not verify_ishii(tiny).lower_ok
    with pytest.raises(DimensionMismatch):
        verify_ishii(IshiiCertificate(1.0, 1.0, doubling_matrix(1.0, 2), [[0]], [[0]]))


def test_ishii_time_check():
    c = IshiiCertificate.from_doubling(2.0, [[0]], [[0]], b1=1.0, b2=0.0, dphi_t=0.5)
    assert c.eps == 0.5
    assert not verify_ishii(c).time_ok


def test_jet_lift_examples(grid, w):
    heat = builtin("heat_solution", T=T)
    x = w.terminal[0]
    j = jet_lift(heat, w, 2 * x, 2)
    assert (j.a, j.p[0], j.X[0, 0]) == (-1.0, 2 * x, 2.0)
    assert superjet_test(heat, w, j).passed and subjet_test(heat, w, j).passed
    ident = classical_lift(lambda t, x: x, dt=lambda t, x: 0.0, dx=lambda t, x: 1.0,
                           dxx=lambda t, x: 0.0)
    j = jet_lift(ident, w, 1, 0)
    assert (j.a, j.p[0], j.X[0, 0]) == (0, 1, 0)
    j = jet_lift(builtin("asian_martingale", T=T), w, T - w.t, 0)
    assert j.a == 0.0
    with pytest.raises(NotSmooth):
        jet_lift(heat, stub(grid, 0, 0, 0, 0, 0), 0, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 2), st.floats(0, 2))
def test_loosening_and_duality(seed, da, dX):
    g, sp = TimeGrid(1.0, 8), SpatialGrid(-2.0, 2.0, 17)
    w = random_stubs(g, sp, 1, rng=seed)[0]
    u = builtin("heat_solution", T=1.0) + builtin("running_integral")
    j = exact_jet(u, w)
    assert superjet_test(u, w, j, sp).passed and subjet_test(u, w, j, sp).passed
    looser = Jet(j.a + da, j.p, j.X + dX)
    assert superjet_test(u, w, looser, sp).passed
    # sub side is the super side of -u with the negated jet, by construction
    a = subjet_test(u, w, looser, sp)
    b = superjet_test(-u, w, -looser, sp)
    assert (a.passed, a.margin) == (b.passed, b.margin)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10), st.floats(-3, 3), st.floats(-3, 3))
def test_upper_block_implies_order(alpha, x1, x2):
    rep = verify_ishii(IshiiCertificate.from_doubling(alpha, [[x1]], [[x2]]))
    if rep.upper_ok:
        assert x1 <= x2 + 1e-8
