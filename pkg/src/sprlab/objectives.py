"""SSL loss families over current and predicted embeddings.

Three objectives share one bundle of per-step online/target embeddings:

* cosine self-distillation — a per-sample B x (K+1) loss matrix of negative
  cosine similarities, the object the RL-specific modifiers transform;
* Barlow Twins — per-step d x d cross-correlation matrices, invariance plus
  redundancy-reduction terms, composed as step 0 plus the mean over future
  steps;
* VICReg — variance hinge, covariance penalty, and invariance distance,
  composed the same way.

The feature-dimension objectives produce one scalar per step for the whole
batch, which is why per-sample masking/weighting cannot apply to them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .tensor import DegenerateBatchError, Tensor

# A LossMatrix is a rank-2 (B, K+1) tensor; column 0 is the current step.
LossMatrix = Tensor

_NORM_GUARD = 1e-24  # keeps sqrt differentiable; far below any legal norm


class DegenerateEmbeddingError(ValueError):
    """An embedding row has (numerically) zero norm."""


class DegenerateFeatureError(ValueError):
    """A feature column has (numerically) zero norm after centering."""


class ConfigError(ValueError):
    """Objective configuration inconsistent with the provided networks."""


OBJECTIVE_KINDS = ("cosine", "barlow", "vicreg")


@dataclass(frozen=True)
class ObjectiveConfig:
    """Switchboard for the SSL objective and its architectural choices."""

    kind: str = "cosine"
    barlow_lambda: float = 0.005
    vicreg_alpha: float = 25.0
    vicreg_beta: float = 1.0
    vicreg_gamma_w: float = 25.0
    vicreg_gamma_std: float = 1.0
    vicreg_eps: float = 1e-4
    stop_gradient: bool = True
    predictor_enabled: bool = True
    barlow_center: bool = True
    # Affine twin of the cosine loss: ||u^ - v^||^2 = 2 - 2 cos, for parity runs.
    cosine_as_mse: bool = False

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ConfigError(f"objective kind must be one of {OBJECTIVE_KINDS}, got {self.kind!r}")
        for name in ("barlow_lambda", "vicreg_alpha", "vicreg_beta", "vicreg_gamma_w"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.vicreg_eps > 0:
            raise ConfigError("vicreg_eps must be > 0")
        if self.kind == "cosine" and not (self.stop_gradient or self.predictor_enabled):
            warnings.warn(
                "cosine objective without stop-gradient or predictor can collapse",
                stacklevel=2,
            )


@dataclass
class PredictionBundle:
    """Per-step online and target embeddings.

    Step 0 is the current state; steps 1..K come from transition-model
    rollouts on the online side and from future observations on the target
    side. Logical shape is B x (K+1) x d_emb per branch, stored as one
    (B, d_emb) tensor per step. K=0 (a single step) is the ZeroJump setup.
    """

    online: list[Tensor]
    target: list[Tensor]

    def __post_init__(self):
        if len(self.online) != len(self.target) or not self.online:
            raise T.ShapeError("bundle branches must hold the same positive step count")
        shapes = {t.shape for t in self.online} | {t.shape for t in self.target}
        if len(shapes) != 1:
            raise T.ShapeError(f"bundle embeddings must share one shape, got {shapes}")

    @property
    def horizon(self) -> int:
        return len(self.online) - 1

    @property
    def batch_size(self) -> int:
        return self.online[0].shape[0]


def apply_predictor_and_stopgrad(
    bundle: PredictionBundle, cfg: ObjectiveConfig, predictor=None
) -> PredictionBundle:
    """Run the online predictor (if enabled) and detach targets (if stop-grad)."""
    online = bundle.online
    if cfg.predictor_enabled:
        if predictor is None:
            raise ConfigError("predictor enabled but no predictor network provided")
        online = [predictor(z) for z in online]
    target = [t.detach() for t in bundle.target] if cfg.stop_gradient else bundle.target
    return PredictionBundle(online=list(online), target=list(target))


def _row_cosine(u: Tensor, v: Tensor, as_mse: bool) -> Tensor:
    norms_sq_u = T.tsum(T.square(u), axis=1)
    norms_sq_v = T.tsum(T.square(v), axis=1)
    for arr in (norms_sq_u.data, norms_sq_v.data):
        if np.any(arr < 1e-24):  # norm < 1e-12
            raise DegenerateEmbeddingError("embedding row with norm < 1e-12")
    dots = T.tsum(T.mul(u, v), axis=1)
    cos = T.div(dots, T.sqrt_eps(T.mul(norms_sq_u, norms_sq_v), eps=_NORM_GUARD))
    if as_mse:
        return 2.0 - 2.0 * cos
    return T.neg(cos)


def cosine_loss_matrix(bundle: PredictionBundle, as_mse: bool = False) -> LossMatrix:
    """Entry (i, k) = -cos(online[i, k], target[i, k]); shape (B, K+1).

    Computed in one stacked pass over all steps (step-major), then folded
    back into per-sample rows.
    """
    steps, b = len(bundle.online), bundle.batch_size
    if steps == 1:
        u, v = bundle.online[0], bundle.target[0]
        return T.reshape(_row_cosine(u, v, as_mse), (b, 1))
    stacked_u = T.concat(bundle.online, axis=0)
    stacked_v = T.concat(bundle.target, axis=0)
    rows = _row_cosine(stacked_u, stacked_v, as_mse)
    return T.transpose(T.reshape(rows, (steps, b)))


def cross_correlation(za: Tensor, zb: Tensor, center: bool = True) -> Tensor:
    """Normalized d x d cross-correlation matrix of two embedding batches.

    With ``center`` the columns are mean-centered first (Pearson form); the
    uncentered variant keeps the raw normalized second-moment form.
    """
    if za.shape != zb.shape or za.ndim != 2:
        raise T.ShapeError(f"need matching B x d matrices, got {za.shape} and {zb.shape}")
    b, d = za.shape
    if b < 2:
        raise DegenerateBatchError(f"cross_correlation needs B >= 2, got B={b}")
    if center:
        za = T.sub(za, T.reshape(T.tmean(za, axis=0), (1, d)))
        zb = T.sub(zb, T.reshape(T.tmean(zb, axis=0), (1, d)))
    col_sq_a = T.tsum(T.square(za), axis=0)
    col_sq_b = T.tsum(T.square(zb), axis=0)
    for arr in (col_sq_a.data, col_sq_b.data):
        if np.any(arr < 1e-24):
            raise DegenerateFeatureError("feature column with norm < 1e-12")
    numer = T.matmul(T.transpose(za), zb)
    norm_a = T.reshape(T.sqrt_eps(col_sq_a, eps=_NORM_GUARD), (d, 1))
    norm_b = T.reshape(T.sqrt_eps(col_sq_b, eps=_NORM_GUARD), (1, d))
    return T.div(numer, T.mul(norm_a, norm_b))


def barlow_step_loss(za: Tensor, zb: Tensor, barlow_lambda: float, center: bool = True) -> Tensor:
    """sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2."""
    c = cross_correlation(za, zb, center=center)
    d = c.shape[0]
    eye = Tensor(np.eye(d))
    off = Tensor(1.0 - np.eye(d))
    invariance = T.tsum(T.mul(T.square(1.0 - c), eye))
    redundancy = T.tsum(T.mul(T.square(c), off))
    return invariance + barlow_lambda * redundancy


def spr_barlow_total(bundle: PredictionBundle, barlow_lambda: float, center: bool = True) -> Tensor:
    """Step-0 loss plus the mean of the per-step losses over steps 1..K."""
    step_losses = [
        barlow_step_loss(u, v, barlow_lambda, center=center)
        for u, v in zip(bundle.online, bundle.target)
    ]
    return _compose_over_steps(step_losses)


def _compose_over_steps(step_losses: list[Tensor]) -> Tensor:
    total = step_losses[0]
    k = len(step_losses) - 1
    if k > 0:
        future = step_losses[1]
        for term in step_losses[2:]:
            future = future + term
        total = total + future * (1.0 / k)
    return total


def vicreg_loss(
    z: Tensor, z_prime: Tensor, cfg: ObjectiveConfig
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Returns (total, variance, covariance, invariance) terms.

    variance: per-dimension hinge max(0, gamma_std - sqrt(Var + eps)) averaged
    over dimensions, computed on both branches and summed; covariance: mean
    squared off-diagonal of the (n-1)-normalized covariance, both branches
    summed; invariance: mean squared Euclidean distance between paired rows.
    """
    if z.shape != z_prime.shape or z.ndim != 2:
        raise T.ShapeError(f"need matching B x d matrices, got {z.shape} and {z_prime.shape}")
    b, d = z.shape
    if b < 2:
        raise DegenerateBatchError(f"vicreg_loss needs B >= 2, got B={b}")

    def branch_terms(x: Tensor) -> tuple[Tensor, Tensor]:
        centered = T.sub(x, T.reshape(T.tmean(x, axis=0), (1, d)))
        var = T.tmean(T.square(centered), axis=0)
        hinge = T.relu(cfg.vicreg_gamma_std - T.sqrt_eps(var, eps=cfg.vicreg_eps))
        v = T.tsum(hinge) * (1.0 / d)
        cov = T.matmul(T.transpose(centered), centered) * (1.0 / (b - 1))
        c = T.tsum(T.mul(T.square(cov), Tensor(1.0 - np.eye(d)))) * (1.0 / d)
        return v, c

    v_z, c_z = branch_terms(z)
    v_p, c_p = branch_terms(z_prime)
    v = v_z + v_p
    c = c_z + c_p
    s = T.tsum(T.square(T.sub(z, z_prime))) * (1.0 / b)
    total = cfg.vicreg_alpha * v + cfg.vicreg_beta * c + cfg.vicreg_gamma_w * s
    return total, v, c, s


def spr_vicreg_total(bundle: PredictionBundle, cfg: ObjectiveConfig) -> Tensor:
    """VICReg per step, composed like the Barlow total (step 0 + future mean)."""
    step_losses = [
        vicreg_loss(u, v, cfg)[0] for u, v in zip(bundle.online, bundle.target)
    ]
    return _compose_over_steps(step_losses)
