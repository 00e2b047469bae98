import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbmp_sim.errors import InvalidArgumentError
from mbmp_sim.geometry import (
    ArenaConfig,
    MobilityConfig,
    NeighborClass,
    RadioConfig,
    Topology,
    classify,
    cneighbors,
    init_waypoints,
    place_uniform,
    step_mobility,
)

ARENA = ArenaConfig(width=1000, height=1000)
RADIO = RadioConfig(tx_range=250, cs_range=550)

coords = st.tuples(st.floats(0, 1000), st.floats(0, 1000))


def _line():
    # A and E are 600 m apart, C sits in the middle.
    return Topology([(100, 0), (100, 200), (300, 0), (500, 0), (700, 0)], RADIO, ARENA,
                    labels=list("ABCDE"))


def test_radio_defaults_ncs_to_twice_cs():
    assert RadioConfig(tx_range=250, cs_range=550).ncs_range == 1100


def test_radio_rings_must_nest():
    with pytest.raises(ValueError):
        RadioConfig(tx_range=600, cs_range=550)


def test_classify_rings():
    topo = _line()
    a, b, c, d, e = (topo.node_id(x) for x in "ABCDE")
    assert classify(topo, a, b) is NeighborClass.TX
    assert classify(topo, a, d) is NeighborClass.CS
    assert classify(topo, a, e) is NeighborClass.NCS


def test_classify_ties_go_to_inner_ring():
    topo = Topology([(0, 0), (250, 0), (800, 0)], RADIO, ARENA)
    assert classify(topo, 0, 1) is NeighborClass.TX
    assert classify(topo, 1, 2) is NeighborClass.CS


def test_cneighbors_of_middle_node():
    topo = _line()
    c = topo.node_id("C")
    assert {topo.label(n) for n in cneighbors(topo, c)} == {"A", "B", "D", "E"}
    assert topo.node_id("A") not in cneighbors(topo, topo.node_id("E"))


def test_unknown_node_raises():
    topo = _line()
    with pytest.raises(InvalidArgumentError):
        topo.distance(0, 17)
    with pytest.raises(InvalidArgumentError):
        topo.node_id("Z")


def test_positions_outside_arena_raise():
    with pytest.raises(InvalidArgumentError):
        Topology([(0, 0), (1200, 10)], RADIO, ARENA)


@given(st.lists(coords, min_size=2, max_size=12))
def test_classify_is_symmetric(points):
    topo = Topology(points, RADIO, ARENA)
    for a in topo.node_ids:
        for b in topo.node_ids:
            if a != b:
                assert classify(topo, a, b) is classify(topo, b, a)


@given(st.lists(coords, min_size=2, max_size=12))
def test_cneighbors_match_brute_force(points):
    topo = Topology(points, RADIO, ARENA)
    for a in topo.node_ids:
        expected = {b for b in topo.node_ids
                    if b != a and np.hypot(*(np.array(points[a]) - np.array(points[b]))) <= 550}
        assert cneighbors(topo, a) == expected


@given(st.lists(coords, min_size=3, max_size=12))
def test_cneighbors_of_cneighbors_stay_inside_ncs(points):
    topo = Topology(points, RADIO, ARENA)
    for a in topo.node_ids:
        for b in cneighbors(topo, a):
            for c in cneighbors(topo, b):
                if c != a:
                    assert topo.distance(a, c) <= RADIO.ncs_range + 1e-9


# ----------------- mobility -----------------
def _mobile(n=30, seed=4):
    rng = np.random.default_rng(seed)
    topo = Topology(place_uniform(n, ARENA, rng), RADIO, ARENA)
    mob = MobilityConfig(enabled=True, min_speed=1, max_speed=5, pause_time=2, tick=0.5)
    return topo, mob, rng


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mobility_stays_in_arena_and_respects_speed(seed):
    topo, mob, rng = _mobile(seed=seed)
    state = init_waypoints(topo, mob, rng)
    for _ in range(40):
        moved, state = step_mobility(topo, state, mob.tick, rng, mob)
        step = np.hypot(*(moved.positions - topo.positions).T)
        assert np.all(step <= mob.max_speed * mob.tick + 1e-9)
        assert moved.positions[:, 0].min() >= 0 and moved.positions[:, 0].max() <= 1000
        assert moved.positions[:, 1].min() >= 0 and moved.positions[:, 1].max() <= 1000
        topo = moved


def test_mobility_is_deterministic_for_a_seed():
    runs = []
    for _ in range(2):
        topo, mob, rng = _mobile(seed=11)
        state = init_waypoints(topo, mob, rng)
        for _ in range(50):
            topo, state = step_mobility(topo, state, mob.tick, rng, mob)
        runs.append(topo.positions.copy())
    np.testing.assert_array_equal(runs[0], runs[1])


def test_paused_nodes_do_not_move():
    topo, mob, rng = _mobile(n=5)
    state = init_waypoints(topo, mob, rng)
    state.pause_remaining[:] = 10.0
    moved, _ = step_mobility(topo, state, 1.0, rng, mob)
    np.testing.assert_array_equal(moved.positions, topo.positions)


def test_step_mobility_rejects_non_positive_dt():
    topo, mob, rng = _mobile(n=3)
    with pytest.raises(InvalidArgumentError):
        step_mobility(topo, init_waypoints(topo, mob, rng), 0.0, rng, mob)


def test_waypoint_motion_concentrates_towards_the_centre():
    rng = np.random.default_rng(5)
    n = 200
    topo = Topology(place_uniform(n, ARENA, rng), RADIO, ARENA)
    mob = MobilityConfig(enabled=True, min_speed=5, max_speed=20, pause_time=0, tick=1.0)
    state = init_waypoints(topo, mob, rng)
    samples = []
    for i in range(1500):
        topo, state = step_mobility(topo, state, mob.tick, rng, mob)
        if i >= 500 and i % 10 == 0:
            samples.append(np.hypot(*(topo.positions - 500.0).T).mean())
    uniform = np.hypot(*(place_uniform(20000, ARENA, rng) - 500.0).T).mean()
    assert np.mean(samples) < uniform
