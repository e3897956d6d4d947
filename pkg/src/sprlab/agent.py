"""Training loop: double-DQN TD loss plus the configured SSL auxiliary loss.

One environment step per gradient step. The TD branch consumes raw
observations; the SSL branch consumes two independently augmented views, with
the online side rolling latents forward through the transition model and the
target side embedding the observed future states. The ablation switchboard
(objective kind, terminal mask, priority weighting, stop-gradient, predictor,
horizon) is a flat configuration with named presets for every studied variant.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import diagnostics as D
from . import tensor as T
from .envs import GridSpec, GridWorld, preset_spec
from .modifiers import (
    PriorityWeights,
    apply_terminal_mask,
    combine_spr_loss,
    mask_batch_samples,
    split_components,
)
from .networks import AgentNetworks, NetworkSizes, q_values, q_values_data, rollout_latents
from .objectives import (
    ConfigError,
    ObjectiveConfig,
    PredictionBundle,
    cosine_loss_matrix,
    spr_barlow_total,
    spr_vicreg_total,
)
from .replay import ReplayBuffer, SequenceBatch, Transition, build_terminal_mask
from .tensor import DegenerateBatchError, DomainError, Tensor


class NonFiniteLossError(RuntimeError):
    """Training aborted on a non-finite loss; carries a diagnostic record."""

    def __init__(self, record: dict) -> None:
        super().__init__(f"non-finite loss at step {record.get('step')}")
        self.record = record


@dataclass(frozen=True)
class VariantConfig:
    """Full ablation switchboard; presets cover every studied variant."""

    name: str = "custom"
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    # SSL-loss modifiers
    terminal_mask: bool = True
    priority_weighting: bool = True
    normalization_mode: str = "sum-to-one"
    loss_lambda: float = 1.0
    loss_gamma: float = 0.5
    sample_mask: bool = False
    # replay
    replay_mode: str = "prioritized"
    replay_capacity: int = 16384
    replay_alpha: float = 0.5
    replay_beta: float = 0.4
    replay_eps: float = 1e-2
    # environment
    env_preset: str = "pitfall-5x5"
    # agent core
    horizon: int = 3
    n_step: int = 3
    discount: float = 0.99
    learning_rate: float = 1e-3
    batch_size: int = 32
    sync_momentum: float = 0.0
    sync_period: int = 1
    aug_radius: int = 1
    total_steps: int = 30_000
    eval_episodes: int = 20
    eval_period: int = 2_000
    ssl_weight: float = 1.0
    warmup_steps: int = 500
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 5_000
    hidden: int = 128
    d_lat: int = 64
    d_emb: int = 32
    diag_period: int = 1_000
    probe_size: int = 256

    def __post_init__(self):
        if self.horizon < 0:
            raise DomainError("horizon K must be >= 0")
        if self.objective.kind in ("barlow", "vicreg") and self.batch_size < 2:
            raise DomainError("feature-dimension objectives need batch size >= 2")
        if self.replay_mode not in ("prioritized", "uniform"):
            raise DomainError(f"replay mode must be prioritized/uniform, got {self.replay_mode!r}")

    def to_json(self) -> dict:
        obj = self.objective
        return {
            "preset": self.name,
            "objective": {
                "kind": obj.kind,
                "barlow_lambda": obj.barlow_lambda,
                "vicreg_alpha": obj.vicreg_alpha,
                "vicreg_beta": obj.vicreg_beta,
                "vicreg_gamma_w": obj.vicreg_gamma_w,
                "vicreg_gamma_std": obj.vicreg_gamma_std,
                "vicreg_eps": obj.vicreg_eps,
                "stop_gradient": obj.stop_gradient,
                "predictor_enabled": obj.predictor_enabled,
                "barlow_center": obj.barlow_center,
                "cosine_as_mse": obj.cosine_as_mse,
            },
            "modifiers": {
                "terminal_mask": self.terminal_mask,
                "priority_weighting": self.priority_weighting,
                "normalization_mode": self.normalization_mode,
                "lambda": self.loss_lambda,
                "gamma": self.loss_gamma,
                "sample_mask": self.sample_mask,
            },
            "replay": {
                "mode": self.replay_mode,
                "capacity": self.replay_capacity,
                "alpha": self.replay_alpha,
                "beta": self.replay_beta,
                "eps": self.replay_eps,
            },
            "env": {"preset": self.env_preset},
            "agent": {
                "horizon": self.horizon,
                "n_step": self.n_step,
                "discount": self.discount,
                "learning_rate": self.learning_rate,
                "batch_size": self.batch_size,
                "sync_momentum": self.sync_momentum,
                "sync_period": self.sync_period,
                "aug_radius": self.aug_radius,
                "total_steps": self.total_steps,
                "eval_episodes": self.eval_episodes,
                "eval_period": self.eval_period,
                "ssl_weight": self.ssl_weight,
                "warmup_steps": self.warmup_steps,
                "eps_start": self.eps_start,
                "eps_end": self.eps_end,
                "eps_decay_steps": self.eps_decay_steps,
                "hidden": self.hidden,
                "d_lat": self.d_lat,
                "d_emb": self.d_emb,
                "diag_period": self.diag_period,
                "probe_size": self.probe_size,
            },
        }

    @classmethod
    def from_json(cls, data: dict, base: "VariantConfig | None" = None) -> "VariantConfig":
        cfg = base if base is not None else cls()
        if "preset" in data and base is None:
            cfg = preset_config(data["preset"])
        obj_kw = dict(data.get("objective", {}))
        if obj_kw:
            merged = {**cfg.objective.__dict__, **obj_kw}
            cfg = replace(cfg, objective=ObjectiveConfig(**merged))
        mods = data.get("modifiers", {})
        mod_map = {
            "terminal_mask": "terminal_mask",
            "priority_weighting": "priority_weighting",
            "normalization_mode": "normalization_mode",
            "lambda": "loss_lambda",
            "gamma": "loss_gamma",
            "sample_mask": "sample_mask",
        }
        cfg = replace(cfg, **{mod_map[k]: v for k, v in mods.items() if k in mod_map})
        rep = data.get("replay", {})
        rep_map = {"mode": "replay_mode", "capacity": "replay_capacity",
                   "alpha": "replay_alpha", "beta": "replay_beta", "eps": "replay_eps"}
        cfg = replace(cfg, **{rep_map[k]: v for k, v in rep.items() if k in rep_map})
        env = data.get("env", {})
        if "preset" in env:
            cfg = replace(cfg, env_preset=env["preset"])
        agent_kw = {k: v for k, v in data.get("agent", {}).items() if k in cls.__dataclass_fields__}
        if agent_kw:
            cfg = replace(cfg, **agent_kw)
        if "preset" in data:
            cfg = replace(cfg, name=data["preset"])
        return cfg

    def config_hash(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


def preset_config(name: str) -> VariantConfig:
    cosine = ObjectiveConfig(kind="cosine", stop_gradient=True, predictor_enabled=True)
    feature_kwargs = dict(stop_gradient=True, predictor_enabled=False)
    presets = {
        "spr": VariantConfig(name="spr", objective=cosine,
                             terminal_mask=True, priority_weighting=True),
        "naked": VariantConfig(name="naked", objective=cosine,
                               terminal_mask=False, priority_weighting=False),
        "naked-non": VariantConfig(name="naked-non", objective=cosine,
                                   terminal_mask=True, priority_weighting=False),
        "naked-prio": VariantConfig(name="naked-prio", objective=cosine,
                                    terminal_mask=False, priority_weighting=True),
        "barlow": VariantConfig(name="barlow",
                                objective=ObjectiveConfig(kind="barlow", **feature_kwargs),
                                terminal_mask=False, priority_weighting=False),
        "vicreg-high": VariantConfig(name="vicreg-high",
                                     objective=ObjectiveConfig(kind="vicreg", vicreg_beta=25.0, **feature_kwargs),
                                     terminal_mask=False, priority_weighting=False),
        "vicreg-low": VariantConfig(name="vicreg-low",
                                    objective=ObjectiveConfig(kind="vicreg", vicreg_beta=1.0, **feature_kwargs),
                                    terminal_mask=False, priority_weighting=False),
        "zerojump": VariantConfig(name="zerojump", objective=cosine,
                                  terminal_mask=True, priority_weighting=True, horizon=0),
        "continuing": VariantConfig(name="continuing", objective=cosine,
                                    terminal_mask=False, priority_weighting=False,
                                    env_preset="loop-5x5", replay_mode="uniform"),
    }
    if name not in presets:
        raise DomainError(f"unknown preset {name!r}; known: {sorted(presets)}")
    return presets[name]


PRESET_NAMES = ("spr", "naked", "naked-non", "naked-prio", "barlow",
                "vicreg-high", "vicreg-low", "zerojump", "continuing")


# ---------------------------------------------------------------------------
# Augmentation: cyclic plane shifts


def augment(obs: np.ndarray, rng: np.random.Generator, radius: int, width: int, height: int) -> np.ndarray:
    """Cyclic shift of all grid planes by one random (row, col) offset."""
    if radius < 0:
        raise DomainError("shift radius must be >= 0")
    if radius == 0:
        return np.array(obs, copy=True)
    dr = int(rng.integers(-radius, radius + 1))
    dc = int(rng.integers(-radius, radius + 1))
    planes = np.asarray(obs).reshape(3, height, width)
    return np.roll(planes, (dr, dc), axis=(1, 2)).reshape(-1)


class _ShiftTable:
    """Precomputed index permutations for every shift in [-r, r]^2."""

    def __init__(self, radius: int, width: int, height: int) -> None:
        idx = np.arange(3 * width * height).reshape(3, height, width)
        perms = []
        for dr in range(-radius, radius + 1):
            for dc in range(-radius, radius + 1):
                perms.append(np.roll(idx, (dr, dc), axis=(1, 2)).reshape(-1))
        self.perms = np.stack(perms)

    def apply(self, batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        choices = rng.integers(0, len(self.perms), size=batch.shape[0])
        return batch[np.arange(batch.shape[0])[:, None], self.perms[choices]]


# ---------------------------------------------------------------------------
# Losses


def td_loss(
    batch: SequenceBatch,
    nets: AgentNetworks,
    n_step: int,
    discount: float,
    weights: np.ndarray | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Double-DQN n-step TD loss; returns (scalar loss, per-sample |td|).

    target = sum_{j<n} g^j r_j + g^n (1 - done) Q_target(s_n, argmax_a Q_online),
    with rewards and the bootstrap cut at the first terminal in the window.
    """
    b = batch.batch_size
    if batch.rewards.shape[1] < n_step:
        raise T.ShapeError(f"batch carries {batch.rewards.shape[1]} reward steps, need {n_step}")
    s0 = batch.obs[:, 0]
    a0 = batch.actions[:, 0]

    # Bootstrap target (data-only): online argmax, target-encoder evaluation.
    s_n = batch.obs[:, n_step]
    a_star = np.argmax(q_values_data(nets, s_n), axis=1)
    q_boot = q_values_data(nets, s_n, target_encoder=True)[np.arange(b), a_star]

    alive_before = np.ones((b, n_step))
    if n_step > 1:
        alive_before[:, 1:] = 1.0 - batch.done_flags[:, : n_step - 1]
    returns = np.sum(
        (discount ** np.arange(n_step)) * batch.rewards[:, :n_step] * alive_before, axis=1
    )
    alive_at_n = 1.0 - batch.done_flags[:, n_step - 1]
    target = returns + (discount ** n_step) * alive_at_n * q_boot

    z0 = nets.encoder(Tensor(s0))
    q = q_values(nets, z0)
    onehot = np.zeros((b, q.shape[1]))
    onehot[np.arange(b), a0] = 1.0
    q_sa = T.tsum(T.mul(q, Tensor(onehot)), axis=1)
    diff = T.sub(q_sa, Tensor(target))
    w = np.ones(b) if weights is None else np.asarray(weights)
    loss = T.tmean(T.mul(T.square(diff), Tensor(w)))
    return loss, np.abs(diff.data)


def build_prediction_bundle(
    batch: SequenceBatch,
    nets: AgentNetworks,
    cfg: VariantConfig,
    view_a: np.ndarray,
    views_b: list[np.ndarray],
) -> PredictionBundle:
    """Online rollout embeddings vs target embeddings of the observed steps.

    ``view_a`` augments the current state for the online branch; ``views_b``
    augment states 0..K for the target branch. With stop-gradient the target
    side runs data-only (detached by construction); without it the target
    parameter copies stay on the tape.
    """
    k = cfg.horizon
    b = batch.batch_size
    z0 = nets.encoder(Tensor(view_a))
    latents = [z0] + rollout_latents(nets, z0, batch.actions[:, :k])

    # One stacked pass (step-major) through projector and predictor.
    stacked = latents[0] if k == 0 else T.concat(latents, axis=0)
    embedded = nets.projector(stacked)
    if cfg.objective.predictor_enabled:
        if nets.predictor is None:
            raise ConfigError("predictor enabled but the networks carry none")
        embedded = nets.predictor(embedded)
    if k == 0:
        online = [embedded]
    else:
        online = [T.slice_axis(embedded, 0, i * b, (i + 1) * b) for i in range(k + 1)]

    stacked_views = np.concatenate(views_b, axis=0)
    if cfg.objective.stop_gradient:
        data = nets.target_projector.forward_data(nets.target_encoder.forward_data(stacked_views))
        target = [Tensor(data[i * b:(i + 1) * b]) for i in range(k + 1)]
    else:
        taped = nets.target_projector(nets.target_encoder(Tensor(stacked_views)))
        if k == 0:
            target = [taped]
        else:
            target = [T.slice_axis(taped, 0, i * b, (i + 1) * b) for i in range(k + 1)]
    return PredictionBundle(online=online, target=target)


def _select_rows(bundle: PredictionBundle, kept: list[int]) -> PredictionBundle:
    b = bundle.batch_size
    sel = np.zeros((len(kept), b))
    sel[np.arange(len(kept)), kept] = 1.0
    pick = Tensor(sel)
    return PredictionBundle(
        online=[T.matmul(pick, z) for z in bundle.online],
        target=[T.matmul(pick, z) for z in bundle.target],
    )


def ssl_loss(
    batch: SequenceBatch,
    nets: AgentNetworks,
    cfg: VariantConfig,
    raw_weights: PriorityWeights,
    view_a: np.ndarray,
    views_b: list[np.ndarray],
) -> tuple[Tensor, dict[str, float]]:
    """Configured SSL objective over one batch; raises DegenerateBatchError
    when sample masking leaves fewer than two sequences."""
    bundle = build_prediction_bundle(batch, nets, cfg, view_a, views_b)
    obj = cfg.objective
    if obj.kind == "cosine":
        matrix = cosine_loss_matrix(bundle, as_mse=obj.cosine_as_mse)
        if cfg.terminal_mask:
            matrix = apply_terminal_mask(matrix, build_terminal_mask(batch))
        current, future = split_components(matrix)
        if cfg.priority_weighting:
            omega = raw_weights.normalized(cfg.normalization_mode)
        else:
            omega = PriorityWeights.ones(batch.batch_size)
        total = combine_spr_loss(current, future, omega, cfg.loss_lambda, cfg.loss_gamma)
        components = {
            "ssl_total": total.item(),
            "ssl_current": float(current.data.mean()),
            "ssl_future": float(future.data.mean()),
        }
        return total, components

    if cfg.sample_mask:
        k = cfg.horizon
        has_terminal = (
            batch.done_flags[:, :k].any(axis=1) if k > 0 else np.zeros(batch.batch_size, bool)
        )
        kept = mask_batch_samples(range(batch.batch_size), has_terminal.tolist())
        if len(kept) < batch.batch_size:
            bundle = _select_rows(bundle, kept)
    if obj.kind == "barlow":
        total = spr_barlow_total(bundle, obj.barlow_lambda, center=obj.barlow_center)
    else:
        total = spr_vicreg_total(bundle, obj)
    return total, {"ssl_total": total.item()}


# ---------------------------------------------------------------------------
# Optimizer


class Adam:
    """Adam over one flat parameter buffer; tensor data become views into it."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.flat = np.concatenate([p.data.reshape(-1) for p in params])
        self._slices = []
        offset = 0
        for p in params:
            n = p.data.size
            view = self.flat[offset:offset + n].reshape(p.shape)
            p.data = view  # in-place updates below propagate to the tensor
            self._slices.append((offset, n, p.shape))
            offset += n
        self.grad = np.zeros_like(self.flat)
        self.m = np.zeros_like(self.flat)
        self.v = np.zeros_like(self.flat)
        self.t = 0

    def step(self) -> None:
        self.t += 1
        g = self.grad
        for p, (offset, n, _) in zip(self.params, self._slices):
            if p.grad is None:
                g[offset:offset + n] = 0.0
            else:
                g[offset:offset + n] = p.grad.reshape(-1)
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (g * g)
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        self.flat -= self.lr * (self.m / b1c) / (np.sqrt(self.v / b2c) + self.eps)


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    config: VariantConfig
    seed: int
    returns_curve: list[tuple[int, float]]
    log_records: list[dict]
    diagnostics: list[dict]
    final_eval: float
    networks: AgentNetworks


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, stream)))


def evaluate_policy(nets: AgentNetworks, spec: GridSpec, episodes: int, seed: int) -> float:
    """Mean greedy-policy return; continuing envs run one max_steps window.

    With slip = 0 the greedy episode is deterministic, so one rollout equals
    the mean over any number of episodes.
    """
    if spec.slip == 0.0:
        episodes = 1
    total = 0.0
    for ep in range(episodes):
        env = GridWorld(spec)
        obs = env.reset(seed=int(np.random.SeedSequence((seed, 17, ep)).generate_state(1)[0]))
        ep_return = 0.0
        for _ in range(spec.max_steps):
            action = int(np.argmax(q_values_data(nets, obs[None, :])[0]))
            obs, reward, done = env.step(action)
            ep_return += reward
            if done:
                break
        total += ep_return
    return total / episodes


def _probe_observations(spec: GridSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    env = GridWorld(spec)
    free = [
        (r, c)
        for r in range(spec.height)
        for c in range(spec.width)
        if (r, c) != spec.goal and (r, c) not in spec.pits
    ]
    obs = np.zeros((size, spec.obs_dim))
    for i in range(size):
        env.reset()
        env._pos = free[int(rng.integers(0, len(free)))]
        obs[i] = env.observation()
    return obs


def run_training(cfg: VariantConfig, seed: int, out_dir=None) -> TrainResult:
    """Deterministic training run; raises NonFiniteLossError on divergence."""
    spec = preset_spec(cfg.env_preset)
    env = GridWorld(spec)
    sizes = NetworkSizes(
        d_obs=spec.obs_dim, n_actions=env.n_actions,
        hidden=cfg.hidden, d_lat=cfg.d_lat, d_emb=cfg.d_emb,
    )
    nets = AgentNetworks.build(sizes, _rng(seed, 0), cfg.objective.predictor_enabled)
    buffer = ReplayBuffer(cfg.replay_capacity, cfg.replay_alpha, cfg.replay_beta, cfg.replay_eps)
    optimizer = Adam(nets.online_parameters(), cfg.learning_rate)
    action_rng = _rng(seed, 1)
    view_a_rng = _rng(seed, 2)
    view_b_rng = _rng(seed, 3)
    sample_rng = _rng(seed, 4)
    shift_table = _ShiftTable(cfg.aug_radius, spec.width, spec.height)
    probe_obs = _probe_observations(spec, cfg.probe_size, _rng(seed, 5))

    returns_curve: list[tuple[int, float]] = []
    log_records: list[dict] = []
    diag_records: list[dict] = []
    completed_returns: list[float] = []
    last_losses = {"td": 0.0, "ssl_total": 0.0}
    skipped_ssl_steps = 0

    obs = env.reset(seed=int(np.random.SeedSequence((seed, 6)).generate_state(1)[0]))
    episode_return = 0.0
    episode_steps = 0
    window = max(cfg.horizon, cfg.n_step)

    def record_eval(step: int) -> None:
        eval_return = evaluate_policy(nets, spec, cfg.eval_episodes, seed)
        returns_curve.append((step, eval_return))
        record = {
            "step": step,
            "eval_return": eval_return,
            "episodic_return": completed_returns[-1] if completed_returns else 0.0,
            "td_loss": last_losses["td"],
            "ssl_loss": last_losses["ssl_total"],
            "ssl_skipped_steps": skipped_ssl_steps,
            "diagnostics_count": len(diag_records),
        }
        for value in record.values():
            if isinstance(value, float) and not np.isfinite(value):
                raise NonFiniteLossError(record)
        log_records.append(record)

    if cfg.total_steps == 0:
        record_eval(0)

    for t in range(cfg.total_steps):
        frac = min(1.0, t / max(1, cfg.eps_decay_steps))
        eps = cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)
        if action_rng.uniform() < eps:
            action = int(action_rng.integers(0, env.n_actions))
        else:
            action = int(np.argmax(q_values_data(nets, obs[None, :])[0]))
        next_obs, reward, done = env.step(action)
        buffer.push(Transition(obs=obs, action=action, reward=reward, done=done))
        episode_return += reward
        episode_steps += 1
        if done:
            completed_returns.append(episode_return)
            obs = env.reset()
            episode_return = 0.0
            episode_steps = 0
        else:
            obs = next_obs
            if spec.continuing and episode_steps >= spec.max_steps:
                completed_returns.append(episode_return)  # windowed pseudo-episode
                episode_return = 0.0
                episode_steps = 0

        step = t + 1
        if step >= cfg.warmup_steps and buffer.size >= cfg.batch_size + window + 1:
            batch, raw_w = buffer.sample_sequences(
                cfg.batch_size, cfg.horizon, cfg.n_step, cfg.replay_mode, sample_rng
            )
            view_a = shift_table.apply(batch.obs[:, 0], view_a_rng)
            views_b = [
                shift_table.apply(batch.obs[:, k], view_b_rng)
                for k in range(cfg.horizon + 1)
            ]
            td_weights = raw_w.normalized("max-normalized").omega
            with T.Tape() as tape:
                td, abs_td = td_loss(batch, nets, cfg.n_step, cfg.discount, td_weights)
                total = td
                if cfg.ssl_weight != 0.0:
                    try:
                        ssl, components = ssl_loss(batch, nets, cfg, raw_w, view_a, views_b)
                        total = T.add(td, T.mul(ssl, Tensor(cfg.ssl_weight)))
                        last_losses["ssl_total"] = components["ssl_total"]
                    except DegenerateBatchError:
                        skipped_ssl_steps += 1
            last_losses["td"] = td.item()
            if not np.isfinite(total.item()):
                record = {"step": step, "td_loss": td.item(), "total_loss": total.item(),
                          "ssl_loss": last_losses["ssl_total"], "seed": seed, "preset": cfg.name}
                raise NonFiniteLossError(record)
            T.backward(total, tape)
            optimizer.step()
            if cfg.replay_mode == "prioritized":
                buffer.update_priorities(batch.sample_indices, abs_td)
            if step % cfg.sync_period == 0:
                nets.sync_target(cfg.sync_momentum)

        if cfg.diag_period and step % cfg.diag_period == 0:
            ranks, dorm = D.probe_reports(nets, probe_obs, step)
            for r in ranks:
                diag_records.append({"seed": seed, **r.to_json()})
            for d in dorm:
                diag_records.append({"seed": seed, **d.to_json()})

        if step % cfg.eval_period == 0 or step == cfg.total_steps:
            record_eval(step)

    final_eval = returns_curve[-1][1] if returns_curve else 0.0
    result = TrainResult(
        config=cfg,
        seed=seed,
        returns_curve=returns_curve,
        log_records=log_records,
        diagnostics=diag_records,
        final_eval=final_eval,
        networks=nets,
    )
    if out_dir is not None:
        write_run_outputs(result, out_dir)
    return result


def write_run_outputs(result: TrainResult, out_dir) -> list[str]:
    """logs.jsonl, returns.csv, diagnostics.jsonl, checkpoint.{json,bin}."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []

    logs = out / "logs.jsonl"
    with open(logs, "w") as fh:
        for record in result.log_records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    artifacts.append(logs.name)

    returns = out / "returns.csv"
    with open(returns, "w") as fh:
        fh.write("run,step,eval_return\n")
        for step, value in result.returns_curve:
            fh.write(f"{result.seed},{step},{value!r}\n")
    artifacts.append(returns.name)

    diag = out / "diagnostics.jsonl"
    with open(diag, "w") as fh:
        for record in result.diagnostics:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    artifacts.append(diag.name)

    named = {k: v.data for k, v in result.networks.named_parameters().items()}
    T.save_checkpoint(out / "checkpoint", named, extra={
        "config": result.config.to_json(),
        "seed": result.seed,
    })
    artifacts += ["checkpoint.json", "checkpoint.bin"]
    return artifacts
