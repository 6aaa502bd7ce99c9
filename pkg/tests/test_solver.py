import json

import numpy as np
import pytest
from sklearn.base import clone

from ppde_lab.errors import CflViolation, LiftMismatch, SearchSpaceTooLarge, StubNotInLattice
from ppde_lab.functional import PathFunctional, builtin
from ppde_lab.paths import DomainClass, PathStub, SpatialGrid, TimeGrid, classify, \
    lattice_stubs, random_stubs
from ppde_lab.solver import (
    LatticeSolver,
    LiftSpec,
    MonteCarloOracle,
    classical_oracle_1d,
    mc_feynman_kac,
    read_solution,
    solution_as_functional,
    solve_lattice,
    solve_lifted,
)
from ppde_lab.viscosity import builtin_generator, is_subsolution, is_supersolution

from conftest import square, stub

T = 0.5
LH = builtin_generator("linear_heat", sigma=1.0)
ZERO = builtin_generator("zero")


@pytest.fixture(scope="module")
def wide():
    return TimeGrid(T, 8), SpatialGrid(-4.0, 4.0, 33)


@pytest.fixture(scope="module")
def heat_sol(wide):
    g, sp = wide
    return solve_lattice(LH, square(), g, sp, roots=[stub(g, x) for x in (-1.0, 0.0, 1.0)])


@pytest.fixture
def tiny():
    return TimeGrid(0.5, 4), SpatialGrid(-2.0, 2.0, 9)


def test_heat_second_moment(heat_sol):
    for x in (-1.0, 0.0, 1.0):
        assert abs(heat_sol.at(x) - (x * x + T)) <= 0.05
    assert heat_sol.meta["cfl_ratio"] == pytest.approx(1.0)


def test_heat_against_monte_carlo(wide, heat_sol):
    g, sp = wide
    for x in (-1.0, 0.0, 1.0):
        est, se = mc_feynman_kac(square(), stub(g, x), 1.0, 100_000, 7, sp)
        assert abs(heat_sol.at(x) - est) <= max(3 * se, 0.05)


def test_monte_carlo_examples():
    g, sp = TimeGrid(1.0, 8), SpatialGrid(-8.0, 8.0, 33)
    w = stub(g, 0.0)
    est, se = mc_feynman_kac(square(), w, 1.0, 100_000, 3, sp)
    assert abs(est - 1.0) <= 3 * se
    est, se = mc_feynman_kac(builtin("terminal"), w, 1.0, 100_000, 3, sp)
    assert abs(est) <= 3 * se
    est, se = mc_feynman_kac(builtin("running_integral"), stub(g, 0.5), 1.0, 100_000, 3, sp)
    assert abs(est - 0.5) <= 3 * se


def test_monte_carlo_thread_independent(wide):
    g, sp = wide
    a = mc_feynman_kac(square(), stub(g, 0.5), 1.0, 30_000, 11, sp, threads=1)
    b = mc_feynman_kac(square(), stub(g, 0.5), 1.0, 30_000, 11, sp, threads=4)
    assert a == b


def test_g_heat_against_classical_oracle(wide):
    g, sp = wide
    G = builtin_generator("g_heat", sigma_low=0.5, sigma_high=1.0)
    xs = [x for x in sp.axes[0][1:-1] if abs(x) <= 2.0]
    sol = solve_lattice(G, square(), g, sp, roots=[stub(g, x) for x in xs])
    oracle = classical_oracle_1d(G, lambda x: x * x, T, -4.0, 4.0)
    gap = max(abs(sol.at(x) - oracle(0.0, x)) for x in xs)
    assert gap <= 0.05
    assert abs(sol.at(0.5) - (0.25 + T)) <= 0.05


def test_zero_generator_copies_payoff(tiny):
    g, sp = tiny
    sol = solve_lattice(ZERO, builtin("terminal"), g, sp)
    for w in random_stubs(g, sp, 20, rng=0, on_grid=True):
        assert sol(w) == w.terminal[0]


def test_constant_preserved(tiny):
    g, sp = tiny
    sol = solve_lattice(LH, builtin("constant", value=2.5), g, sp)
    assert set(sol.values.values()) == {2.5}


def test_boundary_gets_payoff(tiny):
    g, sp = tiny
    sol = solve_lattice(LH, square(), g, sp)
    u = solution_as_functional(sol)
    for w in (stub(g, 0.0, 2.0), stub(g, 0.5, 0.5, 0.0, -0.5, 1.0)):
        assert classify(w, sp) is DomainClass.BOUNDARY
        assert u(w) == square()(w)


def hashed_payoff(seed: int) -> PathFunctional:
    def f(w):
        h = int.from_bytes(w.digest()[:8], "little") ^ seed
        return float(np.random.default_rng(h).normal())
    return PathFunctional(f, name=f"hashed({seed})")


@pytest.mark.parametrize("seed", range(20))
def test_discrete_comparison(tiny, seed):
    g, sp = tiny
    phi1 = hashed_payoff(seed)
    bump = hashed_payoff(seed + 1000)
    phi2 = PathFunctional(lambda w: phi1(w) + abs(bump(w)))
    s1 = solve_lattice(LH, phi1, g, sp)
    s2 = solve_lattice(LH, phi2, g, sp)
    assert s1.values.keys() == s2.values.keys()
    assert all(s1.values[k] <= s2.values[k] for k in s1.values)


def test_cfl_violation():
    with pytest.raises(CflViolation):
        solve_lattice(LH, square(), TimeGrid(1.0, 8), SpatialGrid(-4.0, 4.0, 33))


def test_cap(tiny):
    g, sp = tiny
    with pytest.raises(SearchSpaceTooLarge):
        solve_lattice(LH, square(), g, sp, cap=10)


def test_jsonl_round_trip(tiny, tmp_path):
    g, sp = tiny
    sol = solve_lattice(LH, square(), g, sp)
    path = tmp_path / "solution.jsonl"
    sol.to_jsonl(path)
    header = json.loads(path.read_text().splitlines()[0])
    assert header["meta"]["space"]["M"] == 9
    stored = read_solution(path)
    for key, val in sol.values.items():
        assert stored(sol.stub(key)) == val
    with pytest.raises(StubNotInLattice):
        stored(stub(g, 0.1))


def test_solution_functional_modes(tiny):
    g, sp = tiny
    sol = solve_lattice(LH, square(), g, sp)
    strict = solution_as_functional(sol)
    with pytest.raises(StubNotInLattice):
        strict(stub(g, 0.1))
    loose = solution_as_functional(sol, strict=False)
    assert loose(stub(g, 0.1)) == sol.at(0.0)
    assert loose.meta["projected"] == 1


def test_solution_is_viscosity_solution_within_scheme_error(tiny):
    g, sp = tiny
    sol = solve_lattice(LH, square(), g, sp)
    u = solution_as_functional(sol)
    h = float(sp.h[0])
    stubs = [w for w in random_stubs(g, sp, 20, rng=4, on_grid=True)
             if np.all(np.abs(w.terminal) < 1.5)]
    tol = 10 * (g.dt + h * h)
    sub = is_subsolution(u, LH, stubs, jet_source="numeric", space=sp, h=h, tol=tol)
    sup = is_supersolution(u, LH, stubs, jet_source="numeric", space=sp, h=h, tol=tol)
    assert sub.passed and sup.passed


def test_lift_running_integral(wide):
    g, sp = wide
    ri = builtin("running_integral")
    lifted = solve_lifted(LH, lambda t, x, a: a, LiftSpec("running_integral"), g, sp,
                          roots=[stub(g, 0.5)], phi=ri)
    assert abs(lifted.at(0.5) - 0.5 * T) <= 1e-2
    w = stub(g, 0.0, 0.25, 0.5)
    direct = solve_lattice(LH, ri, g, sp, roots=[w])
    assert abs(lifted(w) - direct(w)) <= 1e-12


def test_lift_none_matches_lattice(tiny):
    g, sp = tiny
    sol = solve_lattice(LH, square(), g, sp)
    lifted = solve_lifted(LH, lambda t, x, s: x * x, LiftSpec("none"), g, sp, phi=square())
    for x in sp.interior_points:
        assert lifted.at(x) == sol.at(x)


def test_lift_running_max_brute_force():
    g, sp = TimeGrid(1.0, 3), SpatialGrid(-2.0, 2.0, 5)
    rm = builtin("running_max")
    lifted = solve_lifted(ZERO, lambda t, x, m: m, LiftSpec("running_max"), g, sp, phi=rm)
    for w in lattice_stubs(g, sp):
        if classify(w, sp) is DomainClass.INTERIOR:
            assert lifted(w) == rm(w)


def test_lift_mismatch(tiny):
    g, sp = tiny
    with pytest.raises(LiftMismatch):
        solve_lifted(LH, lambda t, x, a: a + 1.0, LiftSpec("running_integral"), g, sp,
                     phi=builtin("running_integral"))


def test_estimators(wide):
    g, sp = wide
    est = LatticeSolver(generator=LH, payoff=square(), T=T).fit([[0.0], [1.0]])
    assert est.predict([[0.0], [1.0]]) == pytest.approx([0.5, 1.5], abs=0.05)
    assert clone(est).get_params()["N"] == 8
    mc = MonteCarloOracle(payoff=square(), T=T, n_paths=20_000, seed=5).fit()
    mean, std = mc.predict([[0.0]], return_std=True)
    assert abs(mean[0] - 0.5) <= max(3 * std[0], 0.05)
