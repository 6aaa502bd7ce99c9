import numpy as np
import pytest

from ppde_lab.errors import BadParams, UnknownName, ZeroTime
from ppde_lab.functional import builtin, classical_lift
from ppde_lab.paths import SpatialGrid, TimeGrid, lattice_stubs, random_stubs
from ppde_lab.viscosity import (
    Generator,
    builtin_generator,
    check_monotonicity,
    is_subsolution,
    is_supersolution,
    strictness_perturb,
)

from conftest import lift, stub

T = 1.0


@pytest.fixture
def stubs():
    g, sp = TimeGrid(T, 3), SpatialGrid(-2.0, 2.0, 5)
    return lattice_stubs(g, sp), sp


def test_g_heat_values():
    G = builtin_generator("g_heat", sigma_low=0.5, sigma_high=1.0)
    assert G(0.0, 0.0, 2.0) == 1.0
    assert G(0.0, 0.0, -2.0) == -0.25
    assert builtin_generator("linear_heat", sigma=1.0)(0.0, 0.0, 0.0) == 0.0
    with pytest.raises(BadParams):
        builtin_generator("g_heat", sigma_low=2.0, sigma_high=1.0)
    with pytest.raises(UnknownName):
        builtin_generator("nope")


def test_g_heat_branches():
    lo, hi = 0.5, 1.0
    G = builtin_generator("g_heat", sigma_low=lo, sigma_high=hi)
    for X in np.linspace(-3, 3, 61):
        expected = 0.5 * (hi**2 if X >= 0 else lo**2) * X
        assert G(0.0, 0.0, X) == pytest.approx(expected)


def test_monotonicity_reports():
    assert check_monotonicity(builtin_generator("linear_heat"), "H2").passed
    assert check_monotonicity(builtin_generator("g_heat"), "H2").passed
    assert check_monotonicity(builtin_generator("g_heat"), "H1", n=2000).passed
    assert check_monotonicity(builtin_generator("transport", lam=0.5), "H3", n=2000).passed
    bad = Generator(lambda w, u, p, X: u, order=2)
    rep = check_monotonicity(bad, "H2", n=200)
    assert not rep.passed and rep.witness["u"] < rep.witness["v"]
    bad1 = Generator(lambda w, u, p, X: u, order=1)
    assert not check_monotonicity(bad1, "H3", n=200).passed


def test_heat_solution_is_solution(stubs):
    lat, sp = stubs
    G = builtin_generator("linear_heat", sigma=1.0)
    heat = builtin("heat_solution", T=T)
    sub, sup = is_subsolution(heat, G, lat, space=sp), is_supersolution(heat, G, lat, space=sp)
    assert sub.passed and sup.passed
    assert abs(sub.margin) <= 1e-8 and abs(sup.margin) <= 1e-8
    assert sub.n_checked == 3 + 9 + 27 and sub.n_skipped == len(lat) - sub.n_checked


def test_two_t_quadratic(stubs):
    lat, sp = stubs
    G = builtin_generator("linear_heat", sigma=1.0)
    u = lift(2.0)
    sub = is_subsolution(u, G, lat, space=sp)
    assert not sub.passed and sub.margin == pytest.approx(-1.0, abs=1e-8)
    assert is_supersolution(u, G, lat, space=sp).passed
    assert not is_supersolution(lift(0.5), G, lat, space=sp).passed
    assert is_supersolution(lift(0.5), G, lat, space=sp).margin == pytest.approx(0.5)


def test_g_heat_convex_solution(stubs):
    lat, sp = stubs
    hi = 1.0
    G = builtin_generator("g_heat", sigma_low=0.5, sigma_high=hi)
    u = lift(hi**2)
    for fn in (is_subsolution, is_supersolution):
        rep = fn(u, G, lat, space=sp)
        assert rep.passed and abs(rep.margin) <= 1e-8


def test_numeric_jets_agree(stubs):
    lat, sp = stubs
    G = builtin_generator("linear_heat", sigma=1.0)
    heat = builtin("heat_solution", T=T)
    rep = is_subsolution(heat, G, lat, jet_source="numeric", space=sp)
    assert rep.passed and rep.tol == 1e-4 and rep.jet_source == "numeric"


def test_direct_evaluation_agrees():
    g, sp = TimeGrid(T, 8), SpatialGrid(-2.0, 2.0, 17)
    G = builtin_generator("g_heat", sigma_low=0.3, sigma_high=0.9)
    u = builtin("quadratic_test", curvature=-0.4, time_rate=-0.2)
    stubs = random_stubs(g, sp, 40, rng=2)
    rep = is_subsolution(u, G, stubs, space=sp)
    direct = []
    for w in stubs:
        der = u.exact_derivatives(w)
        direct.append(der.dt + G(u(w), der.dx, der.dxx, w))
    assert rep.margin == pytest.approx(min(direct))


def test_monotone_in_u_shift(stubs):
    lat, sp = stubs
    G = builtin_generator("linear_heat")
    heat = builtin("heat_solution", T=T)
    m = is_subsolution(heat, G, lat, space=sp).margin
    assert is_subsolution(heat - 1.0, G, lat, space=sp).margin >= m


def test_strictness_perturb_examples():
    g = TimeGrid(T, 4)
    heat = builtin("heat_solution", T=T)
    pu = strictness_perturb(heat, 0.01, T=T)
    assert pu.margin == 0.01
    w = stub(g, 0.0, 0.2, 0.4)
    assert pu(w) == pytest.approx(heat(w) - 0.02)
    assert pu.exact_derivatives(w).dt == pytest.approx(-1 + 0.04)
    with pytest.raises(ZeroTime):
        pu(stub(g, 0.0))
    ident = strictness_perturb(heat, 0.0, T=T)
    assert ident.margin == 0.0 and ident(stub(g, 0.3)) == heat(stub(g, 0.3))


def test_perturbed_subsolution_margin(stubs):
    lat, sp = stubs
    G = builtin_generator("linear_heat")
    pu = strictness_perturb(builtin("heat_solution", T=T), 0.1, T=T)
    rep = is_subsolution(pu, G, [w for w in lat if w.k >= 1], space=sp)
    assert rep.margin >= pu.margin - 1e-12


def test_first_order_sub_super():
    g, sp = TimeGrid(T, 4), SpatialGrid(-2.0, 2.0, 9)
    G = builtin_generator("transport", c=1.0)
    u = classical_lift(lambda t, x: x + t, dt=lambda t, x: 1.0, dx=lambda t, x: 1.0,
                       dxx=lambda t, x: 0.0)
    lat = lattice_stubs(g, sp, k_max=1)
    assert is_subsolution(u, G, lat, space=sp).passed
    assert is_supersolution(u, G, lat, space=sp).passed
    v = u + classical_lift(lambda t, x: T - t, dt=lambda t, x: -1.0, dx=lambda t, x: 0.0,
                           dxx=lambda t, x: 0.0)
    assert is_supersolution(v, G, lat, space=sp).passed
    assert not is_subsolution(v, G, lat, space=sp).passed
