"""Deterministic toy grid environments with episodic and continuing presets.

Observations are three flattened one-hot planes (agent, goal, pits). The
episodic preset is terminal-rich on purpose: frequent early terminals are what
make terminal masking matter. The continuing preset never emits done; reaching
a goal or pit pays its reward and teleports the agent back to start, standing
in for the no-terminal/uniform-buffer control regime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ContractError, DomainError, NumericError

ACTIONS = ("up", "down", "left", "right")
# (row, col) deltas per action id
_DELTAS = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    start: tuple[int, int]
    goal: tuple[int, int]
    pits: tuple[tuple[int, int], ...] = ()
    step_reward: float = 0.0
    max_steps: int = 40
    slip: float = 0.0
    continuing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "goal", tuple(self.goal))
        object.__setattr__(self, "pits", tuple(tuple(p) for p in self.pits))
        terminals = {self.goal, *self.pits}
        if self.start in terminals:
            raise DomainError("start cell must not be terminal")
        if self.max_steps < 1:
            raise DomainError("max episode length must be >= 1")
        if not 0.0 <= self.slip <= 1.0:
            raise DomainError("slip probability must lie in [0, 1]")
        for cell in (self.start, self.goal, *self.pits):
            r, c = cell
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise DomainError(f"cell {cell} outside the {self.height}x{self.width} grid")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def obs_dim(self) -> int:
        return 3 * self.n_cells

    def cell_index(self, cell: tuple[int, int]) -> int:
        return cell[0] * self.width + cell[1]

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "start": list(self.start),
            "goal": list(self.goal),
            "pits": [list(p) for p in self.pits],
            "step_reward": self.step_reward,
            "max_steps": self.max_steps,
            "slip": self.slip,
            "continuing": self.continuing,
        }

    @classmethod
    def from_json(cls, data: dict) -> "GridSpec":
        return cls(
            width=data["width"],
            height=data["height"],
            start=tuple(data["start"]),
            goal=tuple(data["goal"]),
            pits=tuple(tuple(p) for p in data.get("pits", [])),
            step_reward=data.get("step_reward", 0.0),
            max_steps=data.get("max_steps", 40),
            slip=data.get("slip", 0.0),
            continuing=data.get("continuing", False),
        )


def preset_spec(name: str) -> GridSpec:
    if name == "pitfall-5x5":
        return GridSpec(
            width=5,
            height=5,
            start=(0, 0),
            goal=(4, 4),
            pits=((1, 1), (1, 3), (3, 1), (3, 3)),
            step_reward=0.0,
            max_steps=40,
        )
    if name == "loop-5x5":
        return GridSpec(
            width=5,
            height=5,
            start=(0, 0),
            goal=(4, 4),
            pits=((1, 1), (1, 3), (3, 1), (3, 3)),
            step_reward=0.0,
            max_steps=40,
            continuing=True,
        )
    raise DomainError(f"unknown env preset {name!r}")


ENV_PRESETS = ("pitfall-5x5", "loop-5x5")


class GridWorld:
    """Grid MDP; walls clamp movement, goal/pits terminate (or teleport)."""

    def __init__(self, spec: GridSpec) -> None:
        self.spec = spec
        self._pos = spec.start
        self._steps = 0
        self._done = True  # force reset before stepping
        self._rng = np.random.default_rng(0)

    @property
    def n_actions(self) -> int:
        return len(ACTIONS)

    def observation(self) -> np.ndarray:
        s = self.spec
        planes = np.zeros((3, s.n_cells))
        planes[0, s.cell_index(self._pos)] = 1.0
        planes[1, s.cell_index(s.goal)] = 1.0
        for pit in s.pits:
            planes[2, s.cell_index(pit)] = 1.0
        return planes.reshape(-1)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._pos = self.spec.start
        self._steps = 0
        self._done = False
        return self.observation()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise ContractError("step() called on a finished episode; reset first")
        if action not in _DELTAS:
            raise DomainError(f"action id must be 0..3, got {action}")
        s = self.spec
        if s.slip > 0.0 and self._rng.uniform() < s.slip:
            action = int(self._rng.integers(0, 4))
        dr, dc = _DELTAS[action]
        r = min(max(self._pos[0] + dr, 0), s.height - 1)
        c = min(max(self._pos[1] + dc, 0), s.width - 1)
        self._pos = (r, c)
        self._steps += 1

        if self._pos == s.goal or self._pos in s.pits:
            reward = 1.0 if self._pos == s.goal else -1.0
            if s.continuing:
                self._pos = s.start
                return self.observation(), reward, False
            self._done = True
            return self.observation(), reward, True

        if not s.continuing and self._steps >= s.max_steps:
            self._done = True
            return self.observation(), s.step_reward, True
        return self.observation(), s.step_reward, False


def _transition_table(spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(next_cell[s, a], reward[s, a], terminal[s, a]) under the slip mixture.

    Rows are cells; slip replaces the chosen action by a uniform one, so the
    effective distribution over executed actions is (1 - slip) on the intent
    plus slip/4 on each action.
    """
    n, w, h = spec.n_cells, spec.width, spec.height
    terminals = {spec.cell_index(spec.goal)} | {spec.cell_index(p) for p in spec.pits}
    nxt = np.zeros((n, 4), dtype=np.int64)
    rew = np.zeros((n, 4))
    term = np.zeros((n, 4), dtype=bool)
    for cell in range(n):
        r0, c0 = divmod(cell, w)
        for a, (dr, dc) in _DELTAS.items():
            r = min(max(r0 + dr, 0), h - 1)
            c = min(max(c0 + dc, 0), w - 1)
            target = r * w + c
            nxt[cell, a] = target
            if target == spec.cell_index(spec.goal):
                rew[cell, a] = 1.0
                term[cell, a] = True
            elif target in terminals:
                rew[cell, a] = -1.0
                term[cell, a] = True
            else:
                rew[cell, a] = spec.step_reward
    return nxt, rew, term


def value_iteration_oracle(
    spec: GridSpec, discount: float, tol: float = 1e-10, max_sweeps: int = 100_000
) -> tuple[np.ndarray, float]:
    """Exact Bellman-optimality fixpoint and the optimal episodic return.

    Returns (V over cells as a height x width grid, undiscounted expected
    episodic return of the greedy policy from start under max-step truncation).
    """
    if not 0.0 < discount <= 1.0:
        raise DomainError("discount must lie in (0, 1]")
    nxt, rew, term = _transition_table(spec)
    n = spec.n_cells
    slip = spec.slip

    # Arrival-time discounting: the reward earned on the t-th step (t >= 1)
    # carries weight gamma^t, so the backup is gamma * (r + V(s')).
    def action_values(v: np.ndarray, gamma: float) -> np.ndarray:
        cont = rew + np.where(term, 0.0, v[nxt])
        if slip > 0.0:
            cont = (1.0 - slip) * cont + slip * cont.mean(axis=1, keepdims=True)
        return gamma * cont

    def fixpoint(gamma: float) -> np.ndarray:
        v = np.zeros(n)
        for _ in range(max_sweeps):
            v_new = action_values(v, gamma).max(axis=1)
            if np.max(np.abs(v_new - v)) < tol:
                return v_new
            v = v_new
        raise NumericError("value iteration did not reach the fixpoint tolerance")

    v = fixpoint(discount)

    # At discount 1 looping and reaching the goal tie; extract the greedy
    # policy from a slightly discounted fixpoint so ties break toward shorter
    # paths.
    tie_gamma = min(discount, 1.0 - 1e-6)
    v_tie = v if tie_gamma == discount else fixpoint(tie_gamma)
    greedy = action_values(v_tie, tie_gamma).argmax(axis=1)

    # Finite-horizon, undiscounted evaluation of the greedy policy from start.
    ret = np.zeros(n)
    for _ in range(spec.max_steps):
        q_pol = np.take_along_axis(
            rew + np.where(term, 0.0, ret[nxt]), greedy[:, None], axis=1
        ).squeeze(1)
        if slip > 0.0:
            uniform = (rew + np.where(term, 0.0, ret[nxt])).mean(axis=1)
            q_pol = (1.0 - slip) * q_pol + slip * uniform
        ret = q_pol
    optimal_return = float(ret[spec.cell_index(spec.start)])
    return v.reshape(spec.height, spec.width), optimal_return
