import numpy as np
import pytest
from scipy import stats

from models import ReplayConfig
from replay import PerBuffer, SumTree
from schemas import ReplayError

STATE_DIM = 6


def _fill(buffer, count, rng):
    for i in range(count):
        buffer.push(rng.normal(size=STATE_DIM), i % 7, float(i), rng.normal(size=STATE_DIM))


def _draw(buffer, rng, draws, batch):
    counts = np.zeros(len(buffer), dtype=int)
    for _ in range(draws // batch):
        batch_ = buffer.sample(batch, rng)
        np.add.at(counts, batch_.indices % buffer.capacity, 1)
    return counts


def test_sum_tree_root_tracks_leaves():
    rng = np.random.default_rng(0)
    tree = SumTree(257)
    for _ in range(10_000):
        tree.update(int(rng.integers(257)), float(rng.uniform(0, 5)))
    assert tree.total == pytest.approx(tree.leaves().sum(), rel=1e-12)


def test_sum_tree_find_skips_empty_leaves():
    tree = SumTree(8)
    tree.update(2, 1.0)
    tree.update(5, 3.0)
    assert tree.find(0.0) == 2
    assert tree.find(0.5) == 2
    assert tree.find(1.5) == 5
    assert tree.find(4.0) == 5


def test_new_transitions_get_max_priority():
    buffer = PerBuffer(ReplayConfig(capacity=10), STATE_DIM)
    _fill(buffer, 3, np.random.default_rng(0))
    buffer.update_priorities([0], [4.0])
    _fill(buffer, 1, np.random.default_rng(1))
    assert buffer.priority(3) == pytest.approx(4.0 + buffer.priority_epsilon)


def test_proportional_sampling_ratio():
    rng = np.random.default_rng(3)
    cfg = ReplayConfig(capacity=10, alpha=1.0, priority_epsilon=1e-6)
    buffer = PerBuffer(cfg, STATE_DIM)
    _fill(buffer, 10, rng)
    td = [9.0 - 1e-6] + [1.0 - 1e-6] * 9
    buffer.update_priorities(list(range(10)), td)
    counts = _draw(buffer, rng, 100_000, batch=10)
    ratio = counts[0] / counts[1:].mean()
    assert 9.0 * 0.9 <= ratio <= 9.0 * 1.1


def test_zero_alpha_is_uniform():
    rng = np.random.default_rng(4)
    buffer = PerBuffer(ReplayConfig(capacity=50, alpha=0.0), STATE_DIM)
    _fill(buffer, 50, rng)
    buffer.update_priorities(list(range(50)), rng.uniform(0, 10, size=50))
    np.testing.assert_allclose(buffer.probabilities(), 1 / 50)
    counts = _draw(buffer, rng, 100_000, batch=32)
    assert stats.chisquare(counts).pvalue > 0.01


def test_importance_weights_are_normalized():
    rng = np.random.default_rng(5)
    buffer = PerBuffer(ReplayConfig(capacity=64), STATE_DIM)
    _fill(buffer, 64, rng)
    buffer.update_priorities(list(range(64)), rng.uniform(0, 3, size=64))
    batch = buffer.sample(32, rng, beta=0.4)
    assert len(batch) == 32
    assert batch.weights.max() == pytest.approx(1.0)
    assert np.all(batch.weights > 0)


def test_beta_anneals_linearly():
    buffer = PerBuffer(ReplayConfig(beta_start=0.4, beta_end=1.0), STATE_DIM, total_steps=1000)
    assert buffer.beta_at(0) == pytest.approx(0.4)
    assert buffer.beta_at(500) == pytest.approx(0.7)
    assert buffer.beta_at(1000) == pytest.approx(1.0)
    assert buffer.beta_at(5000) == pytest.approx(1.0)


def test_sample_needs_enough_transitions():
    buffer = PerBuffer(ReplayConfig(capacity=64), STATE_DIM)
    _fill(buffer, 5, np.random.default_rng(0))
    with pytest.raises(ReplayError):
        buffer.sample(8, np.random.default_rng(0))


def test_ring_overwrite_and_ordinals():
    rng = np.random.default_rng(6)
    buffer = PerBuffer(ReplayConfig(capacity=4), STATE_DIM)
    _fill(buffer, 10, rng)
    assert len(buffer) == 4
    assert sorted(buffer.ordinals.tolist()) == [6, 7, 8, 9]
    batch = buffer.sample(4, rng)
    assert set(batch.indices.tolist()) <= {6, 7, 8, 9}
    np.testing.assert_array_equal(batch.rewards, batch.indices.astype(float))


def test_stale_and_unknown_updates():
    rng = np.random.default_rng(7)
    buffer = PerBuffer(ReplayConfig(capacity=4), STATE_DIM)
    _fill(buffer, 10, rng)
    buffer.update_priorities([1], [5.0])
    assert buffer.stale_updates == 1
    assert buffer.priority(9) == 1.0
    with pytest.raises(ReplayError):
        buffer.update_priorities([10], [1.0])
    with pytest.raises(ReplayError):
        buffer.update_priorities([-1], [1.0])


def test_tree_total_tracks_raw_priorities_through_overwrites():
    rng = np.random.default_rng(8)
    buffer = PerBuffer(ReplayConfig(capacity=37, alpha=0.6), STATE_DIM)
    for _ in range(10_000):
        if buffer.pushed == 0 or rng.uniform() < 0.5:
            _fill(buffer, 1, rng)
        else:
            oldest = max(0, buffer.pushed - buffer.capacity - 3)
            ordinals = rng.integers(oldest, buffer.pushed, size=int(rng.integers(1, 6)))
            buffer.update_priorities(ordinals, rng.exponential(2.0, size=len(ordinals)))
        expected = np.sum(buffer.raw_priorities[: len(buffer)] ** buffer.alpha)
        assert buffer.tree.total == pytest.approx(expected, rel=1e-9)
    assert buffer.pushed > buffer.capacity
    assert buffer.stale_updates > 0
