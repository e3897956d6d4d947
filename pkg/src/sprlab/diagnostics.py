"""Representation diagnostics: effective rank and dormant-neuron fractions.

Singular values of a feature matrix F come from the eigenvalues of the
symmetric Gram matrix F^T F, computed by cyclic Jacobi rotations (forward
only, no gradients). The effective rank is the shortest spectrum prefix
capturing a (1 - delta) share of the total singular mass; a neuron is dormant
when its mean absolute activation, normalized by the layer average, falls at
or below tau.

The dormancy threshold tau defaults to 0.025 — a configuration choice, not a
published constant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .tensor import ContractError, DomainError, NumericError

SRANK_DELTA_DEFAULT = 0.01
DORMANT_TAU_DEFAULT = 0.025
PROBE_LAYERS = ("encoder-out", "value-hidden", "advantage-hidden")


def _jacobi_eigenvalues(gram: np.ndarray, rel_residual: float = 1e-10, max_sweeps: int = 60) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps.

    Sweeps run until the off-diagonal Frobenius mass falls below
    rel_residual * ||A||_F, making the rotation sequence (and therefore the
    result) invariant to positive rescaling of the input.
    """
    a = np.array(gram, dtype=np.float64)
    d = a.shape[0]
    if d == 1:
        return a.reshape(1).copy()
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(d)
    threshold = rel_residual * norm
    off_mask = ~np.eye(d, dtype=bool)

    def off_mass() -> float:
        # Summed directly over off-diagonal entries; subtracting the diagonal
        # mass from the total cancels catastrophically near convergence.
        return float(np.sqrt(np.sum(a[off_mask] ** 2)))

    for _ in range(max_sweeps):
        off = off_mass()
        if off <= threshold:
            return np.diag(a).copy()
        # Threshold schedule: early sweeps rotate only above-average entries;
        # the floor keeps skipped mass below the residual target.
        skip_below = max(0.2 * off / np.sqrt(d * (d - 1)), threshold / d)
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= skip_below:
                    continue
                # Stable rotation choice (smaller angle root).
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)  # first-order root, avoids theta**2 overflow
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                a[p, q] = a[q, p] = 0.0
    if off_mass() > threshold:
        raise NumericError("Jacobi sweeps did not reach the residual target")
    return np.diag(a).copy()


def singular_values(features: np.ndarray) -> np.ndarray:
    """Nonincreasing singular values of a B x d matrix (no gradients)."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ContractError(f"need a rank-2 feature matrix, got shape {f.shape}")
    if not np.isfinite(f).all():
        raise NumericError("feature matrix must be finite")
    gram = f.T @ f
    eigs = _jacobi_eigenvalues(gram)
    return np.sqrt(np.maximum(eigs, 0.0))[np.argsort(-eigs, kind="stable")]


def srank(spectrum: np.ndarray, delta: float = SRANK_DELTA_DEFAULT) -> int:
    """Smallest k with (sum of the top k singular values) >= (1 - delta) * total."""
    sigma = np.asarray(spectrum, dtype=np.float64)
    if sigma.ndim != 1 or sigma.size == 0:
        raise ContractError("spectrum must be a nonempty vector")
    if np.any(np.diff(sigma) > 1e-12 * max(1.0, sigma[0])) or np.any(sigma < 0):
        raise ContractError("spectrum must be nonincreasing and nonnegative")
    if not 0.0 < delta < 1.0:
        raise DomainError("delta must lie in (0, 1)")
    total = sigma.sum()
    if total == 0.0:
        raise ContractError("all-zero spectrum has no effective rank")
    cumulative = np.cumsum(sigma) / total
    return int(np.searchsorted(cumulative, 1.0 - delta, side="left") + 1)


def dormant_fraction(activations: np.ndarray, tau: float = DORMANT_TAU_DEFAULT) -> tuple[float, np.ndarray]:
    """(fraction of dormant neurons, per-neuron normalized scores).

    score_j = mean_b |a_bj| / layer-mean of those values; dormant iff
    score <= tau. An all-zero layer counts as fully dormant.
    """
    a = np.asarray(activations, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ContractError(f"need a rank-2 activation matrix, got shape {a.shape}")
    if tau < 0:
        raise DomainError("tau must be >= 0")
    per_neuron = np.abs(a).mean(axis=0)
    layer_mean = per_neuron.mean()
    if layer_mean == 0.0:
        return 1.0, np.zeros_like(per_neuron)
    scores = per_neuron / layer_mean
    return float(np.mean(scores <= tau)), scores


@dataclass
class RankReport:
    layer: str
    step: int
    srank: int
    singular_values: list[float]

    def __post_init__(self):
        if self.layer not in PROBE_LAYERS:
            raise ContractError(f"layer must be one of {PROBE_LAYERS}")
        if not 1 <= self.srank <= len(self.singular_values):
            raise ContractError("srank outside [1, spectrum length]")

    def to_json(self) -> dict:
        return {
            "kind": "rank",
            "layer": self.layer,
            "step": self.step,
            "srank": self.srank,
            "singular_values": self.singular_values,
        }


@dataclass
class DormancyReport:
    layer: str
    step: int
    fraction: float
    scores: list[float]

    def __post_init__(self):
        if self.layer not in PROBE_LAYERS:
            raise ContractError(f"layer must be one of {PROBE_LAYERS}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ContractError("dormant fraction outside [0, 1]")

    def to_json(self) -> dict:
        return {
            "kind": "dormancy",
            "layer": self.layer,
            "step": self.step,
            "fraction": self.fraction,
            "scores": self.scores,
        }


def probe_layer_activations(nets, probe_obs: np.ndarray) -> dict[str, np.ndarray]:
    """Feature matrices for the three tagged layers on a probe batch."""
    latent = nets.encoder.forward_data(probe_obs)
    return {
        "encoder-out": latent,
        "value-hidden": nets.value_head.hidden_data(latent),
        "advantage-hidden": nets.advantage_head.hidden_data(latent),
    }


def probe_reports(
    nets,
    probe_obs: np.ndarray,
    step: int,
    delta: float = SRANK_DELTA_DEFAULT,
    tau: float = DORMANT_TAU_DEFAULT,
) -> tuple[list[RankReport], list[DormancyReport]]:
    ranks: list[RankReport] = []
    dormancy: list[DormancyReport] = []
    for layer, acts in probe_layer_activations(nets, probe_obs).items():
        spectrum = singular_values(acts)
        if spectrum.sum() > 0.0:
            ranks.append(
                RankReport(
                    layer=layer,
                    step=step,
                    srank=srank(spectrum, delta),
                    singular_values=[float(s) for s in spectrum],
                )
            )
        fraction, scores = dormant_fraction(acts, tau)
        dormancy.append(
            DormancyReport(layer=layer, step=step, fraction=fraction, scores=[float(s) for s in scores])
        )
    return ranks, dormancy


def append_jsonl(path, records) -> None:
    with open(path, "a") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
