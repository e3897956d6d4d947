"""Loss modifiers: masking, split, weighted combination, sample exclusion."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sprlab import modifiers as M
from sprlab import tensor as T
from sprlab.tensor import Tensor


def mask_of(rows):
    return M.TerminalMask(np.array(rows, dtype=float))


def test_mask_validation():
    with pytest.raises(T.ContractError):
        mask_of([[0.0, 1.0]])  # column 0 must be 1
    with pytest.raises(T.ContractError):
        mask_of([[1.0, 0.0, 1.0]])  # not absorbing
    with pytest.raises(T.ContractError):
        mask_of([[1.0, 0.5]])  # not boolean


def test_apply_mask_identity_and_zero():
    loss = Tensor(np.ones((2, 3)))
    all_ones = mask_of(np.ones((2, 3)))
    np.testing.assert_array_equal(M.apply_terminal_mask(loss, all_ones).data, np.ones((2, 3)))
    zeroing = mask_of([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    np.testing.assert_array_equal(
        M.apply_terminal_mask(loss, zeroing).data, [[1, 0, 0], [1, 0, 0]]
    )


def test_apply_mask_hand_counted_row_sums():
    loss = Tensor(np.ones((2, 3)))
    m = mask_of([[1.0, 1.0, 1.0], [1.0, 0.0, 0.0]])
    out = M.apply_terminal_mask(loss, m)
    np.testing.assert_array_equal(out.data.sum(axis=1), [3.0, 1.0])
    with pytest.raises(T.ShapeError):
        M.apply_terminal_mask(Tensor(np.ones((2, 4))), m)


def test_masked_entries_carry_zero_gradient():
    m = mask_of([[1.0, 1.0, 0.0]])
    with T.Tape() as tape:
        loss = Tensor([[2.0, 3.0, 4.0]], grad_enabled=True)
        total = T.tsum(M.apply_terminal_mask(loss, m))
    T.backward(total, tape)
    np.testing.assert_array_equal(loss.grad, [[1.0, 1.0, 0.0]])


def test_split_zero_horizon_gives_zero_future():
    current, future = M.split_components(Tensor([[5.0], [7.0]]))
    np.testing.assert_array_equal(current.data, [5.0, 7.0])
    np.testing.assert_array_equal(future.data, [0.0, 0.0])


def test_split_row_definition():
    current, future = M.split_components(Tensor([[1.0, 2.0, 4.0]]))
    np.testing.assert_array_equal(current.data, [1.0])
    np.testing.assert_array_equal(future.data, [3.0])  # (2+4)/2


def test_split_after_masking_kills_future():
    masked = M.apply_terminal_mask(
        Tensor(np.ones((1, 3))), mask_of([[1.0, 0.0, 0.0]])
    )
    current, future = M.split_components(masked)
    np.testing.assert_array_equal(current.data, [1.0])
    np.testing.assert_array_equal(future.data, [0.0])


def test_combine_hand_arithmetic():
    w = M.PriorityWeights(np.array([0.5, 0.5]), "sum-to-one")
    out = M.combine_spr_loss(
        Tensor([-1.0, -1.0]), Tensor([-1.0, -1.0]), w, lam=1.0, gam=0.5
    )
    assert out.item() == pytest.approx(-0.75, abs=1e-15)


def test_combine_raw_weights_reduce_to_mean():
    current = Tensor([1.0, 3.0, 5.0])
    out = M.combine_spr_loss(current, Tensor(np.zeros(3)), M.PriorityWeights.ones(3), 1.0, 0.0)
    assert out.item() == pytest.approx(3.0, abs=1e-15)


def test_combine_sum_to_one_is_raw_divided_by_batch():
    rng = np.random.default_rng(0)
    b = 5
    cur, fut = rng.normal(size=b), rng.normal(size=b)
    uniform = M.PriorityWeights(np.full(b, 1.0 / b), "sum-to-one")
    raw = M.PriorityWeights.ones(b)
    a = M.combine_spr_loss(Tensor(cur), Tensor(fut), uniform, 1.0, 0.5).item()
    r = M.combine_spr_loss(Tensor(cur), Tensor(fut), raw, 1.0, 0.5).item()
    assert a == pytest.approx(r / b, rel=1e-12)


def test_combine_shape_error():
    with pytest.raises(T.ShapeError):
        M.combine_spr_loss(Tensor([1.0]), Tensor([1.0, 2.0]), M.PriorityWeights.ones(1), 1, 1)
    with pytest.raises(T.ShapeError):
        M.combine_spr_loss(Tensor([1.0, 2.0]), Tensor([1.0, 2.0]), M.PriorityWeights.ones(3), 1, 1)


def test_priority_weights_modes():
    w = M.PriorityWeights(np.array([1.0, 3.0]), "raw")
    s = w.normalized("sum-to-one")
    assert s.omega.sum() == pytest.approx(1.0, abs=1e-12)
    m = w.normalized("max-normalized")
    assert m.omega.max() == 1.0
    with pytest.raises(T.ContractError):
        M.PriorityWeights(np.array([0.7, 0.2]), "sum-to-one")
    with pytest.raises(T.ContractError):
        M.PriorityWeights(np.array([0.5, 0.2]), "max-normalized")
    with pytest.raises(T.ContractError):
        M.PriorityWeights(np.array([-1.0, 2.0]), "raw")


def test_mask_batch_samples_rules():
    assert M.mask_batch_samples([0, 1, 2], [False, False, False]) == [0, 1, 2]
    assert M.mask_batch_samples([0, 1, 2], [False, True, False]) == [0, 2]
    with pytest.raises(T.DegenerateBatchError):
        M.mask_batch_samples([0, 1], [True, True])
    with pytest.raises(T.ShapeError):
        M.mask_batch_samples([0, 1], [True])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mask_idempotent_and_linear(seed):
    rng = np.random.default_rng(seed)
    b, k1 = 4, 5
    loss = rng.normal(size=(b, k1))
    lengths = rng.integers(0, k1 + 1, size=b)
    mask_rows = np.ones((b, k1))
    for i, cut in enumerate(lengths):
        if cut < k1:
            mask_rows[i, max(cut, 1):] = 0.0
    m = M.TerminalMask(mask_rows)
    once = M.apply_terminal_mask(Tensor(loss), m).data
    twice = M.apply_terminal_mask(Tensor(once), m).data
    np.testing.assert_array_equal(once, twice)

    # Linearity of the combination in each argument.
    cur, fut = rng.normal(size=b), rng.normal(size=b)
    w = M.PriorityWeights(np.abs(rng.normal(size=b)) + 0.1, "raw")
    lam, gam, scale = 1.3, 0.4, rng.uniform(0.1, 3.0)
    base = M.combine_spr_loss(Tensor(cur), Tensor(fut), w, lam, gam).item()
    scaled_cur = M.combine_spr_loss(Tensor(scale * cur), Tensor(fut), w, lam, gam).item()
    only_fut = M.combine_spr_loss(Tensor(np.zeros(b)), Tensor(fut), w, lam, gam).item()
    only_cur = M.combine_spr_loss(Tensor(cur), Tensor(np.zeros(b)), w, lam, gam).item()
    assert base == pytest.approx(only_cur + only_fut, rel=1e-9, abs=1e-12)
    assert scaled_cur == pytest.approx(scale * only_cur + only_fut, rel=1e-9, abs=1e-12)
    w_scaled = M.PriorityWeights(scale * w.omega, "raw")
    assert M.combine_spr_loss(Tensor(cur), Tensor(fut), w_scaled, lam, gam).item() == pytest.approx(
        scale * base, rel=1e-9, abs=1e-12
    )


def test_full_pipeline_matches_unmodified_loss():
    # Raw weights + all-ones mask = plain mean of lam*current + gam*future.
    rng = np.random.default_rng(42)
    b, cols = 6, 4
    loss = rng.normal(size=(b, cols))
    m = M.TerminalMask(np.ones((b, cols)))
    masked = M.apply_terminal_mask(Tensor(loss), m)
    cur, fut = M.split_components(masked)
    got = M.combine_spr_loss(cur, fut, M.PriorityWeights.ones(b), 1.0, 0.5).item()
    expected = np.mean(1.0 * loss[:, 0] + 0.5 * loss[:, 1:].mean(axis=1))
    assert got == pytest.approx(expected, abs=1e-12)


def test_gradcheck_combine():
    rng = np.random.default_rng(1)
    b = 8
    fut = rng.normal(size=b)
    w = M.PriorityWeights(np.abs(rng.normal(size=b)) + 0.2, "raw")
    err = T.grad_check(
        lambda t: M.combine_spr_loss(t, Tensor(fut), w, 1.0, 0.5), Tensor(rng.normal(size=b))
    )
    assert err < 1e-6
