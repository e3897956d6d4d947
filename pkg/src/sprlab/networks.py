"""Encoder, projection/prediction heads, transition model, and dueling Q-heads.

All networks are small MLPs over the tensor core. The target branch (encoder +
projector) holds parameter copies refreshed by ``sync_target``; its forward
pass runs outside the tape and is therefore detached by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DomainError, ShapeError, Tensor

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths plus one activation per layer transition."""

    widths: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ShapeError("an MLP needs at least input and output widths")
        if any(w <= 0 for w in self.widths):
            raise ShapeError(f"widths must be positive, got {self.widths}")
        if len(self.activations) != len(self.widths) - 1:
            raise ShapeError("need one activation per layer")
        if any(a not in ACTIVATIONS for a in self.activations):
            raise DomainError(f"activations must be in {ACTIVATIONS}")

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]


def mlp_spec(*widths: int, out_activation: str = "identity") -> MLPSpec:
    acts = ("relu",) * (len(widths) - 2) + (out_activation,)
    return MLPSpec(tuple(widths), acts)


class MLP:
    """Parameter container with taped and data-only forward passes."""

    def __init__(self, spec: MLPSpec, rng: np.random.Generator) -> None:
        self.spec = spec
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
            bound = np.sqrt(1.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(Tensor(w, grad_enabled=True))
            self.biases.append(Tensor(np.zeros((1, fan_out)), grad_enabled=True))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise ShapeError(f"expected (B, {self.spec.in_dim}) input, got {x.shape}")
        for w, b, act in zip(self.weights, self.biases, self.spec.activations):
            x = T.linear(x, w, b)
            if act == "relu":
                x = T.relu(x)
        return x

    def forward_data(self, x: np.ndarray) -> np.ndarray:
        """Pure-numpy forward pass; never touches the tape."""
        if x.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise ShapeError(f"expected (B, {self.spec.in_dim}) input, got {x.shape}")
        for w, b, act in zip(self.weights, self.biases, self.spec.activations):
            x = x @ w.data + b.data
            if act == "relu":
                x = np.maximum(x, 0.0)
        return x

    def hidden_data(self, x: np.ndarray) -> np.ndarray:
        """Activations after the penultimate layer (data-only)."""
        for w, b, act in zip(self.weights[:-1], self.biases[:-1], self.spec.activations[:-1]):
            x = x @ w.data + b.data
            if act == "relu":
                x = np.maximum(x, 0.0)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{i}.w"] = w
            out[f"{prefix}.{i}.b"] = b
        return out


@dataclass
class NetworkSizes:
    d_obs: int
    n_actions: int
    hidden: int = 128
    d_lat: int = 64
    d_emb: int = 32


@dataclass
class AgentNetworks:
    """Online networks plus the target copies of encoder and projector."""

    sizes: NetworkSizes
    encoder: MLP
    projector: MLP
    predictor: MLP | None
    transition: MLP
    value_head: MLP
    advantage_head: MLP
    target_encoder: MLP
    target_projector: MLP
    _online_named: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def build(cls, sizes: NetworkSizes, rng: np.random.Generator, predictor_enabled: bool) -> "AgentNetworks":
        s = sizes
        encoder = MLP(mlp_spec(s.d_obs, s.hidden, s.d_lat, out_activation="relu"), rng)
        projector = MLP(mlp_spec(s.d_lat, s.hidden, s.d_emb), rng)
        predictor = MLP(mlp_spec(s.d_emb, s.hidden, s.d_emb), rng) if predictor_enabled else None
        transition = MLP(mlp_spec(s.d_lat + s.n_actions, s.hidden, s.d_lat, out_activation="relu"), rng)
        value_head = MLP(mlp_spec(s.d_lat, s.hidden, 1), rng)
        advantage_head = MLP(mlp_spec(s.d_lat, s.hidden, s.n_actions), rng)
        target_encoder = MLP(encoder.spec, rng)
        target_projector = MLP(projector.spec, rng)
        nets = cls(
            sizes=s,
            encoder=encoder,
            projector=projector,
            predictor=predictor,
            transition=transition,
            value_head=value_head,
            advantage_head=advantage_head,
            target_encoder=target_encoder,
            target_projector=target_projector,
        )
        nets.sync_target(0.0)  # target starts as an exact copy
        return nets

    def online_parameters(self) -> list[Tensor]:
        params = (
            self.encoder.parameters()
            + self.projector.parameters()
            + self.transition.parameters()
            + self.value_head.parameters()
            + self.advantage_head.parameters()
        )
        if self.predictor is not None:
            params += self.predictor.parameters()
        return params

    def ssl_parameters(self) -> list[Tensor]:
        params = self.projector.parameters() + self.transition.parameters()
        if self.predictor is not None:
            params += self.predictor.parameters()
        return params

    def named_parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        named.update(self.encoder.named_parameters("encoder"))
        named.update(self.projector.named_parameters("projector"))
        if self.predictor is not None:
            named.update(self.predictor.named_parameters("predictor"))
        named.update(self.transition.named_parameters("transition"))
        named.update(self.value_head.named_parameters("value_head"))
        named.update(self.advantage_head.named_parameters("advantage_head"))
        named.update(self.target_encoder.named_parameters("target_encoder"))
        named.update(self.target_projector.named_parameters("target_projector"))
        return named

    def _target_pairs(self) -> list[tuple[Tensor, Tensor]]:
        pairs = list(zip(self.target_encoder.parameters(), self.encoder.parameters()))
        pairs += list(zip(self.target_projector.parameters(), self.projector.parameters()))
        return pairs

    def sync_target(self, momentum: float) -> None:
        """target <- m * target + (1 - m) * online, elementwise; m=0 copies online."""
        if not 0.0 <= momentum <= 1.0:
            raise DomainError(f"momentum must lie in [0, 1], got {momentum}")
        for tgt, onl in self._target_pairs():
            if momentum == 0.0:
                tgt.data = onl.data.copy()
            elif momentum != 1.0:
                tgt.data = momentum * tgt.data + (1.0 - momentum) * onl.data


def encode(nets: AgentNetworks, obs: Tensor, target_branch: bool = False) -> Tensor:
    """Observation -> latent. The target branch is detached from the tape."""
    if not np.isfinite(obs.data).all():
        raise T.NumericError("observations must be finite")
    if target_branch:
        return Tensor(nets.target_encoder.forward_data(obs.data))
    return nets.encoder(obs)


def rollout_latents(nets: AgentNetworks, z0: Tensor, actions: np.ndarray) -> list[Tensor]:
    """Autoregressive latent rollout: z_{k+1} = transition(z_k (+) onehot(a_k)).

    ``actions`` is a (B, K) integer array; returns the K stepped latents
    (logical shape B x K x d_lat as a list of per-step matrices; K=0 -> []).
    """
    actions = np.asarray(actions)
    if actions.ndim != 2 or actions.shape[0] != z0.shape[0]:
        raise ShapeError(f"actions must be (B, K), got {actions.shape}")
    n_actions = nets.sizes.n_actions
    if actions.size and (actions.min() < 0 or actions.max() >= n_actions):
        raise DomainError(f"action ids must lie in [0, {n_actions})")
    steps: list[Tensor] = []
    z = z0
    for k in range(actions.shape[1]):
        onehot = np.zeros((actions.shape[0], n_actions))
        onehot[np.arange(actions.shape[0]), actions[:, k]] = 1.0
        z = nets.transition(T.concat([z, Tensor(onehot)], axis=1))
        steps.append(z)
    return steps


def q_values(nets: AgentNetworks, z: Tensor) -> Tensor:
    """Dueling combination Q = V + A - mean_a(A)."""
    v = nets.value_head(z)
    a = nets.advantage_head(z)
    a_mean = T.reshape(T.tmean(a, axis=1), (a.shape[0], 1))
    return T.add(v, T.sub(a, a_mean))


def q_values_data(nets: AgentNetworks, obs: np.ndarray, target_encoder: bool = False) -> np.ndarray:
    """Data-only Q values for action selection and TD targets."""
    enc = nets.target_encoder if target_encoder else nets.encoder
    z = enc.forward_data(obs)
    v = nets.value_head.forward_data(z)
    a = nets.advantage_head.forward_data(z)
    return v + a - a.mean(axis=1, keepdims=True)
