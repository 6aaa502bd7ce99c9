import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppde_lab.errors import GridMismatch, HorizonExceeded, IndexMismatch, NotInClosure, OutOfDomain
from ppde_lab.paths import (
    DomainClass,
    PathStub,
    SpatialGrid,
    TimeGrid,
    classify,
    concat,
    count_continuations,
    distance_first_order,
    distance_parabolic,
    enumerate_continuations,
    flat_extend,
    lattice_stubs,
    frozen_continuations,
    random_stubs,
    simulate_continuations,
    vertical_bump,
)

from conftest import stub


def test_time_grid_nodes():
    g = TimeGrid(1.0, 4)
    assert g.dt == 0.25
    assert np.all(np.diff(g.nodes) > 0)
    assert g.time(4) == 1.0
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_spatial_grid_boundary_points(space):
    assert space.on_boundary([2.0]) and space.on_boundary([-2.0])
    assert len(space.interior_points) == 3
    assert space.index_of([0.5]) is None
    assert space.index_of([1.0]) == (3,)
    with pytest.raises(ValueError):
        SpatialGrid(1.0, 0.0, 5)


def test_vertical_bump(grid, space):
    w = stub(grid, 0.0, 0.5)
    out = vertical_bump(w, 0.5)
    assert out.values[:, 0].tolist() == [0.0, 1.0]
    assert w.values[:, 0].tolist() == [0.0, 0.5]
    assert vertical_bump(w, 0.0) == w
    with pytest.raises(OutOfDomain):
        vertical_bump(stub(grid, 0.0, 1.5), 1.0, space)


def test_flat_extend(grid):
    w = stub(grid, 0.0, 0.5)
    assert flat_extend(w, 2).values[:, 0].tolist() == [0.0, 0.5, 0.5, 0.5]
    assert flat_extend(w, 0) == w
    with pytest.raises(HorizonExceeded):
        flat_extend(stub(grid, 0, 0, 0, 0), 2)


def test_concat(grid):
    head = stub(grid, 0.0, 0.5)
    assert concat(head, [1.0, 1.0]).values[:, 0].tolist() == [0.0, 1.0, 1.0]
    w = stub(grid, 0.0, 0.5, 1.0, -0.5)
    assert concat(w.restrict(2), w) == w
    with pytest.raises(IndexMismatch):
        concat(head, [1.0], start=2)


def test_distance_parabolic_examples(grid):
    a, b = stub(grid, 0, 1, 1), stub(grid, 0, 0, 0)
    assert distance_parabolic(a, a) == 0.0
    assert distance_parabolic(a, b) == pytest.approx(1.25)
    assert distance_parabolic(stub(grid, 0), stub(grid, 1)) == 1.0
    with pytest.raises(GridMismatch):
        distance_parabolic(a, stub(TimeGrid(2.0, 4), 0))


def test_distance_first_order_examples(grid):
    assert distance_first_order(stub(grid, 0), stub(grid, 0)) == 0.0
    assert distance_first_order(stub(grid, 0), stub(grid, 0, 0)) == pytest.approx(0.0625)
    assert distance_first_order(stub(grid, 1), stub(grid, 0)) == 1.0


def test_classify(grid, space):
    assert classify(stub(grid, 0, 0.5), space) is DomainClass.INTERIOR
    assert classify(stub(grid, 0, 2.0), space) is DomainClass.BOUNDARY
    assert classify(stub(grid, 0, 0, 0, 0, 0.5), space) is DomainClass.BOUNDARY
    with pytest.raises(NotInClosure):
        classify(stub(grid, 2.0, 0.0), space)


def test_enumerate_at_horizon_gives_bumps(grid, space):
    w = stub(grid, 0, 1.0)
    got = list(enumerate_continuations(w, space, k_max=1))
    assert got[0] == w
    assert sorted(s.terminal[0] for s in got) == [-2, -1, 0, 1, 2]
    assert all(s.k == 1 for s in got)


def test_enumerate_count_one_step(grid, space):
    w = stub(grid, 0.0)
    got = list(enumerate_continuations(w, space, k_max=1))
    assert len(got) == 5 + 3 * 5 == count_continuations(w, space, k_max=1)
    assert len(set(got)) == len(got)


def test_boundary_stub_has_no_continuations(grid, space):
    w = stub(grid, 0.0, 2.0)
    assert list(enumerate_continuations(w, space)) == [w]
    # the frozen set still moves the terminal value
    assert len(list(frozen_continuations(w, space, k_max=1))) == 5


def test_lattice_stubs_unique(space):
    g = TimeGrid(1.0, 3)
    all_stubs = lattice_stubs(g, space)
    assert len(set(all_stubs)) == len(all_stubs)
    # 5 at level 0, then 3 interior points branching into 5 at each level
    assert len(all_stubs) == 5 + 15 + 45 + 135


def test_json_round_trip(grid):
    w = stub(grid, 0.0, 0.5, -1.0)
    obj = json.loads(json.dumps(w.to_json()))
    assert obj["k"] == 2
    assert PathStub.from_json(obj) == w
    with pytest.raises(IndexMismatch):
        PathStub.from_json(dict(obj, k=1))


def test_simulate_continuations_stay_in_closure(grid, space):
    rng = np.random.default_rng(0)
    groups = simulate_continuations(stub(grid, 0.0), space, 1.0, 500, rng)
    assert sum(v.shape[0] for _, v in groups) == 500
    for k, vals in groups:
        assert vals.shape[1] == k + 1
        for v in vals[:20]:
            classify(PathStub(grid, v), space)


values = st.lists(st.floats(-1.9, 1.9), min_size=1, max_size=5)


@settings(max_examples=60, deadline=None)
@given(values, values)
def test_metric_properties(a, b):
    g = TimeGrid(1.0, 4)
    w, u = PathStub(g, a), PathStub(g, b)
    for dist in (distance_parabolic, distance_first_order):
        assert dist(w, u) >= 0
        assert dist(w, u) == pytest.approx(dist(u, w))
        assert dist(w, w) == 0.0


@settings(max_examples=60, deadline=None)
@given(values, st.floats(-0.5, 0.5), st.integers(0, 3))
def test_bump_then_extend_matches_definition(a, x, s):
    g = TimeGrid(1.0, 8)
    w = PathStub(g, a)
    out = flat_extend(vertical_bump(w, x), s)
    expected = list(a[:-1]) + [a[-1] + x] * (s + 1)
    assert np.allclose(out.values[:, 0], expected)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 1000))
def test_classify_stable_under_extension(seed):
    g, sp = TimeGrid(1.0, 5), SpatialGrid(-2.0, 2.0, 9)
    w = random_stubs(g, sp, 1, rng=seed)[0]
    for s in range(g.N - w.k):
        assert classify(flat_extend(w, s), sp) is DomainClass.INTERIOR
    assert classify(flat_extend(w, g.N - w.k), sp) is DomainClass.BOUNDARY
