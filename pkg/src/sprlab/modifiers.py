"""RL-specific transformations of the SSL loss under study.

The per-sample loss matrix is masked by a 0/1 non-terminal matrix (Hadamard
product), split into the current-step component and the temporal mean over
predicted steps, then combined into a scalar with per-sample priority weights:

    (1/B) * sum_i omega_i * (lam * current_i + gam * future_i)

exactly as printed, even though sum-to-one weights make the leading 1/B an
extra division; the normalization mode is a knob precisely because this
under-documented choice is what the laboratory studies. Feature-dimension
objectives cannot be masked per sample after the fact, so ``mask_batch_samples``
instead drops whole sequences that contain a terminal before the loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import ContractError, DegenerateBatchError, ShapeError, Tensor

NORMALIZATION_MODES = ("sum-to-one", "max-normalized", "raw")


@dataclass(frozen=True)
class TerminalMask:
    """B x (K+1) matrix of {0, 1}; entry (i, k) is 0 at or beyond a terminal."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ShapeError(f"mask must be rank 2, got shape {v.shape}")
        if not np.isin(v, (0.0, 1.0)).all():
            raise ContractError("mask entries must be 0 or 1")
        if not np.all(v[:, 0] == 1.0):
            raise ContractError("current states are never terminal when sampled")
        if np.any(np.diff(v, axis=1) > 0):
            raise ContractError("mask must be absorbing: once 0, stays 0")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


@dataclass(frozen=True)
class PriorityWeights:
    """Length-B positive weights with a declared normalization mode."""

    omega: np.ndarray
    mode: str = "raw"

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=np.float64)
        object.__setattr__(self, "omega", w)
        if w.ndim != 1:
            raise ShapeError(f"weights must be a vector, got shape {w.shape}")
        if not np.all(w > 0):
            raise ContractError("priority weights must be positive")
        if self.mode not in NORMALIZATION_MODES:
            raise ContractError(f"mode must be one of {NORMALIZATION_MODES}")
        if self.mode == "sum-to-one" and abs(w.sum() - 1.0) > 1e-9:
            raise ContractError(f"sum-to-one weights must sum to 1, got {w.sum()}")
        if self.mode == "max-normalized" and abs(w.max() - 1.0) > 1e-9:
            raise ContractError(f"max-normalized weights must peak at 1, got {w.max()}")

    def normalized(self, mode: str) -> "PriorityWeights":
        if mode == "raw":
            return PriorityWeights(self.omega.copy(), "raw")
        if mode == "sum-to-one":
            return PriorityWeights(self.omega / self.omega.sum(), "sum-to-one")
        if mode == "max-normalized":
            return PriorityWeights(self.omega / self.omega.max(), "max-normalized")
        raise ContractError(f"mode must be one of {NORMALIZATION_MODES}")

    @classmethod
    def ones(cls, n: int) -> "PriorityWeights":
        return cls(np.ones(n), "raw")

    def __len__(self) -> int:
        return len(self.omega)


def apply_terminal_mask(loss_matrix: Tensor, mask: TerminalMask) -> Tensor:
    """Hadamard product; masked entries are exactly 0 with zero gradient."""
    if loss_matrix.shape != mask.shape:
        raise ShapeError(f"loss {loss_matrix.shape} vs mask {mask.shape}")
    return T.mul(loss_matrix, Tensor(mask.values))


def split_components(loss_matrix: Tensor) -> tuple[Tensor, Tensor]:
    """(current_i, future_i): column 0, and the mean over columns 1..K.

    K=0 yields an all-zero future component (no transition model term).
    """
    if loss_matrix.ndim != 2:
        raise ShapeError(f"loss matrix must be rank 2, got {loss_matrix.shape}")
    b, cols = loss_matrix.shape
    current = T.reshape(T.slice_axis(loss_matrix, 1, 0, 1), (b,))
    if cols == 1:
        return current, Tensor(np.zeros(b))
    future = T.tmean(T.slice_axis(loss_matrix, 1, 1, cols), axis=1)
    return current, future


def combine_spr_loss(
    current: Tensor,
    future: Tensor,
    weights: PriorityWeights,
    lam: float,
    gam: float,
) -> Tensor:
    """(1/B) * sum_i omega_i * (lam * current_i + gam * future_i)."""
    if current.shape != future.shape or current.ndim != 1:
        raise ShapeError(f"component shapes differ: {current.shape} vs {future.shape}")
    if len(weights) != current.shape[0]:
        raise ShapeError(f"{len(weights)} weights for batch of {current.shape[0]}")
    mixed = T.add(T.mul(current, Tensor(np.full(current.shape, lam))),
                  T.mul(future, Tensor(np.full(future.shape, gam))))
    return T.tmean(T.mul(mixed, Tensor(weights.omega)))


def mask_batch_samples(indices: Sequence[int], has_terminal: Sequence[bool]) -> list[int]:
    """Indices of sequences with no terminal inside the prediction window.

    Feature-dimension objectives run on the retained sub-batch; fewer than two
    survivors is a degenerate batch (the trainer skips the SSL term that step).
    """
    indices = list(indices)
    flags = list(has_terminal)
    if len(indices) != len(flags):
        raise ShapeError(f"{len(flags)} flags for {len(indices)} indices")
    kept = [i for i, flagged in zip(indices, flags) if not flagged]
    if len(kept) < 2:
        raise DegenerateBatchError(
            f"only {len(kept)} terminal-free sequences; feature losses need >= 2"
        )
    return kept
