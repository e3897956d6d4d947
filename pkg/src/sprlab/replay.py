"""Uniform and prioritized (sum-tree) replay over transition sequences.

Transitions live in a ring buffer addressed by absolute push index. Sampling
returns length-(L+1) state windows where L = max(K, n_step): the SSL loss and
terminal mask read the first K+1 columns, the n-step TD target reads up to
column n_step. Sequences may cross episode boundaries; their done flags drive
the terminal mask instead.

Mask alignment: the masked entry is the first state *after* a terminal
transition (predicting past a terminal is meaningless). The terminal state
itself, reached by the terminating transition, is still predicted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .modifiers import PriorityWeights, TerminalMask
from .tensor import ContractError, DomainError, ShapeError


class UnderflowError(RuntimeError):
    """Not enough stored transitions to sample the requested batch."""


def _next_power_of_two(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


class SumTree:
    """Binary sum tree over a power-of-two leaf array.

    Parents are recomputed as the exact sum of their children on every update,
    so every internal node equals the sum of its subtree bit-exactly at all
    times.
    """

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise DomainError("capacity must be positive")
        self.capacity = _next_power_of_two(capacity)
        self._nodes = np.zeros(2 * self.capacity, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self._nodes[1])

    def leaf(self, idx: int) -> float:
        return float(self._nodes[self.capacity + idx])

    def leaves(self) -> np.ndarray:
        return self._nodes[self.capacity:].copy()

    def update(self, idx: int, value: float) -> None:
        if not 0 <= idx < self.capacity:
            raise DomainError(f"leaf index {idx} outside capacity {self.capacity}")
        if not value >= 0.0:
            raise DomainError(f"leaf value must be >= 0, got {value}")
        node = self.capacity + idx
        self._nodes[node] = value
        node //= 2
        while node >= 1:
            self._nodes[node] = self._nodes[2 * node] + self._nodes[2 * node + 1]
            node //= 2

    def find_prefix(self, mass: float) -> int:
        """Leaf index whose cumulative-sum interval contains ``mass``."""
        node = 1
        while node < self.capacity:
            left = 2 * node
            if mass <= self._nodes[left] or self._nodes[left + 1] == 0.0:
                node = left
            else:
                mass -= self._nodes[left]
                node = left + 1
        return node - self.capacity


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    done: bool


@dataclass
class SequenceBatch:
    """B contiguous transition windows.

    obs[b, k] is the state at step k (k = 0..L); actions[b, k] and
    done_flags[b, k] describe the transition taken from step k, with done
    flags made absorbing within each row. rewards covers steps 0..n_step-1.
    """

    obs: np.ndarray          # (B, L+1, d_obs)
    actions: np.ndarray      # (B, L) int
    rewards: np.ndarray      # (B, n_step)
    done_flags: np.ndarray   # (B, L+1) in {0,1}, absorbing
    sample_indices: np.ndarray  # (B,) leaf/data indices for priority updates
    probabilities: np.ndarray   # (B,) sampling probability of each start
    horizon: int             # K
    n_step: int

    def __post_init__(self):
        if np.any(np.diff(self.done_flags, axis=1) < 0):
            raise ContractError("done flags must be absorbing within each row")

    @property
    def batch_size(self) -> int:
        return self.obs.shape[0]


def build_terminal_mask(batch: SequenceBatch) -> TerminalMask:
    """M[i, k] = 0 iff a done flag is set at any step < k; M[:, 0] = 1."""
    b, k1 = batch.batch_size, batch.horizon + 1
    mask = np.ones((b, k1))
    if k1 > 1:
        mask[:, 1:] = 1.0 - batch.done_flags[:, : k1 - 1]
    return TerminalMask(mask)


def priority_from_td(td_error: float, eps_p: float, alpha: float) -> float:
    """Leaf value (|td| + eps_p) ** alpha."""
    return float((abs(td_error) + eps_p) ** alpha)


class ReplayBuffer:
    """Ring buffer of transitions with prioritized or uniform sequence sampling."""

    def __init__(
        self,
        capacity: int,
        alpha: float = 0.5,
        beta: float = 0.4,
        eps_p: float = 1e-2,
    ) -> None:
        self.capacity = _next_power_of_two(capacity)
        self.alpha = alpha
        self.beta = beta
        self.eps_p = eps_p
        self.tree = SumTree(self.capacity)
        self._obs: np.ndarray | None = None
        self._actions = np.zeros(self.capacity, dtype=np.int64)
        self._rewards = np.zeros(self.capacity, dtype=np.float64)
        self._dones = np.zeros(self.capacity, dtype=np.int8)
        self._pushed = 0  # absolute count of pushes
        self._max_leaf = 1.0  # bootstrap priority for fresh transitions

    @property
    def size(self) -> int:
        return min(self._pushed, self.capacity)

    def _slot(self, abs_index: int) -> int:
        return abs_index % self.capacity

    def push(self, t: Transition) -> None:
        """Store a transition, overwriting the oldest when full."""
        obs = np.asarray(t.obs, dtype=np.float64)
        if self._obs is None:
            self._obs = np.zeros((self.capacity, obs.size), dtype=np.float64)
        slot = self._slot(self._pushed)
        self._obs[slot] = obs
        self._actions[slot] = int(t.action)
        self._rewards[slot] = float(t.reward)
        self._dones[slot] = 1 if t.done else 0
        self.tree.update(slot, self._max_leaf)
        self._pushed += 1

    def update_priorities(
        self,
        indices: np.ndarray,
        td_errors: np.ndarray,
        eps_p: float | None = None,
        alpha: float | None = None,
    ) -> None:
        eps_p = self.eps_p if eps_p is None else eps_p
        alpha = self.alpha if alpha is None else alpha
        for idx, td in zip(np.asarray(indices), np.asarray(td_errors)):
            idx = int(idx)
            if not 0 <= idx < self.capacity:
                raise DomainError(f"index {idx} outside capacity {self.capacity}")
            leaf = priority_from_td(float(td), eps_p, alpha)
            self.tree.update(idx, leaf)
            self._max_leaf = max(self._max_leaf, leaf)

    def _valid_start_bounds(self, window: int) -> tuple[int, int]:
        """Absolute [lo, hi] range of start indices with a full window ahead."""
        oldest = max(0, self._pushed - self.capacity)
        newest_start = self._pushed - 1 - window
        return oldest, newest_start

    def sample_sequences(
        self,
        batch_size: int,
        horizon: int,
        n_step: int,
        mode: str,
        rng: np.random.Generator,
    ) -> tuple[SequenceBatch, PriorityWeights]:
        """Draw B start indices and build length-(L+1) state windows.

        Prioritized mode stratifies the tree's total mass into B equal
        segments; uniform mode draws starts uniformly. Importance weights are
        (size * P(i)) ** -beta, returned raw (normalize downstream).
        """
        if mode not in ("prioritized", "uniform"):
            raise DomainError(f"mode must be prioritized/uniform, got {mode!r}")
        window = max(horizon, n_step)
        lo, hi = self._valid_start_bounds(window)
        if hi < lo or self.size < batch_size:
            raise UnderflowError(
                f"buffer holds {self.size} transitions; cannot sample B={batch_size}, window={window}"
            )

        starts = np.zeros(batch_size, dtype=np.int64)
        probs = np.zeros(batch_size, dtype=np.float64)
        if mode == "uniform":
            starts = rng.integers(lo, hi + 1, size=batch_size)
            probs[:] = 1.0 / self.size
        else:
            total = self.tree.total
            for i in range(batch_size):
                abs_idx = -1
                for _ in range(64):  # stratified draw, retried while invalid
                    seg_lo = total * i / batch_size
                    seg_hi = total * (i + 1) / batch_size
                    leaf_idx = self.tree.find_prefix(rng.uniform(seg_lo, seg_hi))
                    candidate = self._abs_from_slot(leaf_idx)
                    if candidate is not None and lo <= candidate <= hi:
                        abs_idx = candidate
                        break
                if abs_idx < 0:
                    abs_idx = int(rng.integers(lo, hi + 1))  # rare fallback
                starts[i] = abs_idx
                probs[i] = self.tree.leaf(self._slot(abs_idx)) / total

        return self._gather(starts, probs, horizon, n_step, window)

    def _abs_from_slot(self, slot: int) -> int | None:
        """Map a ring slot back to its current absolute index, if occupied."""
        if self._pushed <= self.capacity:
            return slot if slot < self._pushed else None
        oldest = self._pushed - self.capacity
        return oldest + ((slot - oldest) % self.capacity)

    def _gather(
        self,
        starts: np.ndarray,
        probs: np.ndarray,
        horizon: int,
        n_step: int,
        window: int,
    ) -> tuple[SequenceBatch, PriorityWeights]:
        idx = (starts[:, None] + np.arange(window + 1)[None, :]) % self.capacity
        obs = self._obs[idx]
        actions = self._actions[idx[:, :-1]]
        rewards = self._rewards[idx[:, :n_step]]
        dones = np.minimum(np.cumsum(self._dones[idx].astype(np.float64), axis=1), 1.0)
        weights = (self.size * probs) ** (-self.beta)
        batch = SequenceBatch(
            obs=obs,
            actions=actions,
            rewards=rewards,
            done_flags=dones,
            sample_indices=np.array([self._slot(s) for s in starts], dtype=np.int64),
            probabilities=probs,
            horizon=horizon,
            n_step=n_step,
        )
        return batch, PriorityWeights(weights, "raw")
