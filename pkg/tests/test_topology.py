import numpy as np
import pytest

from conftest import make_config
from models import TopologyConfig
from schemas import TopologyError
from topology import Topology, advance_mobility, build_topology


def _cfg(**kwargs) -> TopologyConfig:
    return TopologyConfig(**kwargs)


def test_even_split_twelve_transmitters():
    topo = build_topology(_cfg(aps_per_ec=4, transmitters=12, rng_seed=7))
    assert topo.num_transmitters == 12
    assert [len(topo.transmitters_of_ap(u)) for u in range(4)] == [3, 3, 3, 3]


def test_even_split_twenty_transmitters():
    topo = build_topology(_cfg(aps_per_ec=4, transmitters=20, rng_seed=7))
    assert [len(topo.transmitters_of_ap(u)) for u in range(4)] == [5, 5, 5, 5]


def test_uneven_counts_still_cover_all_transmitters():
    topo = build_topology(_cfg(aps_per_ec=4, transmitters=10))
    counts = [len(topo.transmitters_of_ap(u)) for u in range(topo.num_aps)]
    assert sum(counts) == 10
    assert max(counts) - min(counts) <= 1


def test_same_seed_same_positions():
    a = build_topology(_cfg(rng_seed=7))
    b = build_topology(_cfg(rng_seed=7))
    np.testing.assert_array_equal(a.tx_positions, b.tx_positions)
    np.testing.assert_array_equal(a.ap_positions, b.ap_positions)


def test_transmitters_start_inside_their_disk():
    topo = build_topology(_cfg(transmitters=50, rng_seed=3))
    assert np.all(topo.serving_distances() <= topo.coverage_radius)


def test_rejects_zero_transmitters():
    cfg = TopologyConfig.model_construct(transmitters=0)
    with pytest.raises(TopologyError):
        build_topology(cfg)


def test_rejects_zero_aps():
    cfg = TopologyConfig.model_construct(aps_per_ec=0)
    with pytest.raises(TopologyError):
        build_topology(cfg)


def test_multiple_edge_clouds():
    topo = build_topology(_cfg(num_edge_clouds=2, aps_per_ec=3, transmitters=6))
    assert topo.num_aps == 6
    assert topo.num_transmitters == 12
    assert topo.aps_of_ec(0) == [0, 1, 2]
    assert topo.aps_of_ec(1) == [3, 4, 5]
    assert [topo.ec_of_transmitter(n) for n in range(12)] == [0] * 6 + [1] * 6


def test_distance_matrix_shape():
    topo = build_topology(_cfg(aps_per_ec=4, transmitters=12))
    dist = topo.distances_to_aps()
    assert dist.shape == (12, 4)
    np.testing.assert_allclose(dist[np.arange(12), topo.association], topo.serving_distances())


def test_topology_arrays_are_read_only():
    topo = build_topology(_cfg())
    with pytest.raises(ValueError):
        topo.tx_positions[0, 0] = 1.0


def test_zero_speed_keeps_positions():
    cfg = _cfg(speed=0.0)
    topo = build_topology(cfg)
    moved = advance_mobility(topo, cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(moved.tx_positions, topo.tx_positions)


def test_displacement_is_speed_times_step():
    cfg = _cfg(speed=0.8333, step_duration=1e-3)
    topo = build_topology(cfg)
    moved = advance_mobility(topo, cfg, np.random.default_rng(0))
    step = np.linalg.norm(moved.tx_positions - topo.tx_positions, axis=1)
    np.testing.assert_allclose(step, 8.333e-4, rtol=1e-9)


def test_association_never_changes():
    cfg = _cfg(speed=50.0, step_duration=1e-1)
    topo = build_topology(cfg)
    rng = np.random.default_rng(1)
    moved = topo
    for _ in range(20):
        moved = advance_mobility(moved, cfg, rng)
    np.testing.assert_array_equal(moved.association, topo.association)


def test_reflection_keeps_transmitters_inside():
    # transmitters on the disk edge with steps large enough to leave it
    rng = np.random.default_rng(11)
    cfg = _cfg(aps_per_ec=1, transmitters=1, speed=5.0, step_duration=1.0)
    n = 10_000
    angles = 2 * np.pi * rng.random(n)
    edge = 100.0 * np.column_stack((np.cos(angles), np.sin(angles)))
    topo = Topology(
        ap_positions=np.zeros((1, 2)),
        tx_positions=edge,
        association=np.zeros(n, dtype=int),
        ec_of_ap=np.zeros(1, dtype=int),
        coverage_radius=100.0,
    )
    moved = advance_mobility(topo, cfg, rng)
    assert np.all(moved.serving_distances() <= 100.0 + 1e-9)


def test_positions_stay_in_disk_over_many_steps():
    cfg = make_config(topology={"speed": 20.0, "step_duration": 0.5}).topology
    topo = build_topology(cfg)
    rng = np.random.default_rng(5)
    for _ in range(300):
        topo = advance_mobility(topo, cfg, rng)
        assert np.all(topo.serving_distances() <= cfg.coverage_radius + 1e-9)


def test_equal_seeds_give_identical_traces():
    cfg = _cfg()

    def trace(seed):
        topo = build_topology(cfg, np.random.default_rng(seed))
        rng = np.random.default_rng(seed + 1)
        positions = []
        for _ in range(50):
            topo = advance_mobility(topo, cfg, rng)
            positions.append(topo.tx_positions.copy())
        return np.stack(positions)

    np.testing.assert_array_equal(trace(3), trace(3))
