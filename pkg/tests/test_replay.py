"""Replay: sum-tree exactness, sampling distribution, sequence contracts."""

import numpy as np
import pytest

from sprlab import replay as R
from sprlab import tensor as T


def tree_order_sum(leaves: np.ndarray) -> float:
    """Bottom-up pairwise sum in the tree's association order (exact oracle)."""
    level = leaves.astype(np.float64).copy()
    while len(level) > 1:
        level = level[0::2] + level[1::2]
    return float(level[0])


def filled_buffer(n=64, capacity=64, d_obs=3, done_every=None, seed=0):
    rng = np.random.default_rng(seed)
    buf = R.ReplayBuffer(capacity)
    for i in range(n):
        done = done_every is not None and (i % done_every == done_every - 1)
        buf.push(R.Transition(obs=rng.uniform(0, 1, d_obs), action=int(i % 4), reward=float(i), done=done))
    return buf


def test_sum_tree_update_and_total():
    tree = R.SumTree(8)
    for i, v in enumerate([1.0, 2.0, 3.0, 4.0]):
        tree.update(i, v)
    assert tree.total == 10.0
    before = tree.total
    tree.update(2, 7.0)
    assert tree.total == before + 4.0  # root moves by exactly the delta
    with pytest.raises(T.DomainError):
        tree.update(99, 1.0)


def test_sum_tree_exactness_after_interleaved_updates():
    rng = np.random.default_rng(1)
    tree = R.SumTree(16)
    for _ in range(20000):
        tree.update(int(rng.integers(0, 16)), float(rng.uniform(0, 10)))
        if rng.uniform() < 0.01:
            assert tree.total == tree_order_sum(tree.leaves())
    assert tree.total == tree_order_sum(tree.leaves())


def test_sum_tree_prefix_sampling_proportions():
    tree = R.SumTree(4)
    for i, v in enumerate([1.0, 2.0, 3.0, 4.0]):
        tree.update(i, v)
    rng = np.random.default_rng(2)
    draws = 200_000
    counts = np.zeros(4)
    for u in rng.uniform(0, tree.total, draws):
        counts[tree.find_prefix(u)] += 1
    np.testing.assert_allclose(counts / draws, [0.1, 0.2, 0.3, 0.4], atol=0.01)


def test_push_ring_semantics():
    buf = R.ReplayBuffer(4)
    buf.push(R.Transition(np.zeros(2), 0, 0.0, False))
    assert buf.size == 1
    assert buf.tree.leaf(0) == 1.0  # bootstrap max priority
    for i in range(4):
        buf.push(R.Transition(np.full(2, float(i + 1)), 0, 0.0, False))
    assert buf.size == 4
    np.testing.assert_array_equal(buf._obs[buf._slot(4)], [4.0, 4.0])  # oldest overwritten


def test_update_priorities_hand_value():
    buf = filled_buffer(8, 8)
    buf.update_priorities([3], [0.0], eps_p=0.01, alpha=0.5)
    assert buf.tree.leaf(3) == pytest.approx(0.1, abs=1e-15)
    assert R.priority_from_td(0.0, 0.01, 0.5) == pytest.approx(0.1, abs=1e-15)
    buf.update_priorities(np.arange(8), np.full(8, 2.0), alpha=0.0)
    np.testing.assert_allclose(buf.tree.leaves()[:8], 1.0)  # alpha=0 -> uniform
    with pytest.raises(T.DomainError):
        buf.update_priorities([999], [0.1])


def test_sample_uniform_weights_are_exactly_one():
    buf = filled_buffer(32, 32)
    batch, w = buf.sample_sequences(4, horizon=3, n_step=3, mode="uniform", rng=np.random.default_rng(3))
    np.testing.assert_array_equal(w.omega, np.ones(4))
    assert batch.obs.shape == (4, 4, 3)
    assert batch.actions.shape == (4, 3)
    assert batch.rewards.shape == (4, 3)


def test_sample_equal_priorities_equal_weights():
    buf = filled_buffer(32, 32)
    batch, w = buf.sample_sequences(6, horizon=2, n_step=2, mode="prioritized", rng=np.random.default_rng(4))
    np.testing.assert_allclose(w.omega, w.omega[0])
    norm = w.normalized("sum-to-one")
    np.testing.assert_allclose(norm.omega, 1.0 / 6.0)


def test_sample_underflow():
    buf = filled_buffer(4, 8)
    with pytest.raises(R.UnderflowError):
        buf.sample_sequences(8, horizon=3, n_step=3, mode="uniform", rng=np.random.default_rng(0))


def test_sequences_never_start_beyond_valid_window():
    buf = filled_buffer(40, 16)  # wrapped ring
    rng = np.random.default_rng(5)
    for _ in range(50):
        batch, _ = buf.sample_sequences(4, horizon=3, n_step=3, mode="prioritized", rng=rng)
        # All gathered rewards must match the pushed values (reward == abs index).
        for i in range(4):
            slot = batch.sample_indices[i]
            first = buf._rewards[slot]
            np.testing.assert_array_equal(batch.rewards[i], first + np.arange(3))


def test_done_flags_absorbing_and_mask_rules():
    buf = filled_buffer(32, 32, done_every=5)
    rng = np.random.default_rng(6)
    batch, _ = buf.sample_sequences(8, horizon=3, n_step=3, mode="uniform", rng=rng)
    assert np.all(np.diff(batch.done_flags, axis=1) >= 0)
    mask = R.build_terminal_mask(batch)
    np.testing.assert_array_equal(mask.values[:, 0], 1.0)
    np.testing.assert_array_equal(mask.values[:, 1:], 1.0 - batch.done_flags[:, :3])


def test_build_terminal_mask_hand_rows():
    def batch_with_dones(raw_dones):
        raw = np.array(raw_dones, dtype=np.float64)[None, :]
        flags = np.minimum(np.cumsum(raw, axis=1), 1.0)
        return R.SequenceBatch(
            obs=np.zeros((1, raw.shape[1], 2)),
            actions=np.zeros((1, raw.shape[1] - 1), dtype=np.int64),
            rewards=np.zeros((1, 3)),
            done_flags=flags,
            sample_indices=np.zeros(1, dtype=np.int64),
            probabilities=np.ones(1),
            horizon=3,
            n_step=3,
        )

    no_dones = batch_with_dones([0, 0, 0, 0])
    np.testing.assert_array_equal(R.build_terminal_mask(no_dones).values, [[1, 1, 1, 1]])
    done_at_1 = batch_with_dones([0, 1, 0, 0])
    np.testing.assert_array_equal(R.build_terminal_mask(done_at_1).values, [[1, 1, 0, 0]])
    done_at_final = batch_with_dones([0, 0, 1, 0])
    np.testing.assert_array_equal(R.build_terminal_mask(done_at_final).values, [[1, 1, 1, 0]])
    with pytest.raises(T.ContractError):
        R.SequenceBatch(
            obs=np.zeros((1, 4, 2)),
            actions=np.zeros((1, 3), dtype=np.int64),
            rewards=np.zeros((1, 3)),
            done_flags=np.array([[0.0, 1.0, 0.0, 0.0]]),  # not absorbing
            sample_indices=np.zeros(1, dtype=np.int64),
            probabilities=np.ones(1),
            horizon=3,
            n_step=3,
        )


def test_prioritized_sampling_matches_distribution_16_leaves():
    # Smaller sibling of the acceptance check (10^5 draws here).
    tree = R.SumTree(16)
    priorities = np.arange(1.0, 17.0)
    for i, p in enumerate(priorities):
        tree.update(i, p)
    rng = np.random.default_rng(7)
    draws = 100_000
    counts = np.zeros(16)
    for _ in range(draws):
        counts[tree.find_prefix(rng.uniform(0, tree.total))] += 1
    expected = priorities / priorities.sum()
    tv = 0.5 * np.abs(counts / draws - expected).sum()
    assert tv < 0.01
