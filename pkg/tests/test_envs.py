"""Environments: dynamics contracts and the exact value-iteration oracle."""

import itertools

import numpy as np
import pytest

from sprlab import envs as E
from sprlab import tensor as T


def tiny_spec(**kw):
    base = dict(width=3, height=3, start=(0, 0), goal=(2, 2), pits=(), max_steps=10)
    base.update(kw)
    return E.GridSpec(**base)


def evaluate_policy_by_simulation(spec: E.GridSpec, policy: dict, discount: float) -> float:
    """Exhaustive oracle helper: simulate one deterministic policy exactly.

    Arrival-time discounting: the reward earned on the t-th step carries
    weight discount**t.
    """
    pos = spec.start
    total, scale = 0.0, 1.0
    for _ in range(spec.max_steps):
        scale *= discount
        dr, dc = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}[policy[pos]]
        pos = (min(max(pos[0] + dr, 0), spec.height - 1), min(max(pos[1] + dc, 0), spec.width - 1))
        if pos == spec.goal:
            return total + scale * 1.0
        if pos in spec.pits:
            return total + scale * -1.0
        total += scale * spec.step_reward
    return total


def brute_force_optimal(spec: E.GridSpec, discount: float) -> float:
    """Enumerate every stationary deterministic policy on small grids."""
    cells = [(r, c) for r in range(spec.height) for c in range(spec.width)]
    free = [c for c in cells if c != spec.goal and c not in spec.pits]
    best = -np.inf
    for assignment in itertools.product(range(4), repeat=len(free)):
        policy = dict(zip(free, assignment))
        best = max(best, evaluate_policy_by_simulation(spec, policy, discount))
    return best


def test_reset_contract():
    env = E.GridWorld(tiny_spec())
    obs = env.reset(seed=1)
    planes = obs.reshape(3, 9)
    assert planes[0].sum() == 1.0 and planes[0][0] == 1.0
    obs2 = E.GridWorld(tiny_spec()).reset(seed=1)
    np.testing.assert_array_equal(obs, obs2)
    cont = E.GridWorld(E.preset_spec("loop-5x5"))
    c = cont.reset(seed=1).reshape(3, 25)
    assert c[0].sum() == 1.0


def test_wall_clamp_and_goal():
    env = E.GridWorld(tiny_spec(step_reward=-0.1))
    env.reset()
    obs, r, done = env.step(0)  # up into the wall
    assert (r, done) == (-0.1, False)
    assert obs.reshape(3, 9)[0][0] == 1.0  # unmoved

    env2 = E.GridWorld(E.GridSpec(width=2, height=1, start=(0, 0), goal=(0, 1), max_steps=5))
    env2.reset()
    _, r, done = env2.step(3)  # right onto the goal
    assert (r, done) == (1.0, True)
    with pytest.raises(T.ContractError):
        env2.step(0)


def test_pit_and_truncation():
    spec = tiny_spec(pits=((0, 1),), max_steps=3)
    env = E.GridWorld(spec)
    env.reset()
    _, r, done = env.step(3)  # right into the pit
    assert (r, done) == (-1.0, True)

    env.reset()
    for i in range(3):
        _, r, done = env.step(0)  # bump the wall until truncation
    assert done and r == spec.step_reward


def test_continuing_preset_teleports_and_never_finishes():
    spec = E.GridSpec(width=2, height=1, start=(0, 0), goal=(0, 1), max_steps=3, continuing=True)
    env = E.GridWorld(spec)
    env.reset()
    for _ in range(20):  # far beyond max_steps
        obs, r, done = env.step(3)
        assert not done
        assert r == 1.0
        assert obs.reshape(3, 2)[0][0] == 1.0  # teleported to start


def test_episodes_respect_max_length():
    env = E.GridWorld(E.preset_spec("pitfall-5x5"))
    rng = np.random.default_rng(0)
    for _ in range(30):
        env.reset()
        steps = 0
        done = False
        while not done:
            obs, _, done = env.step(int(rng.integers(0, 4)))
            steps += 1
            assert obs.reshape(3, 25)[0].sum() == 1.0
        assert steps <= env.spec.max_steps


def test_value_iteration_goal_adjacent():
    spec = E.GridSpec(width=2, height=1, start=(0, 0), goal=(0, 1), max_steps=10)
    v, ret = E.value_iteration_oracle(spec, discount=1.0)
    assert ret == pytest.approx(1.0, abs=1e-12)
    assert v[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_value_iteration_corridor_hand_backup():
    # 1x3 corridor, start middle, goal right: V(start) = 0.9 at discount 0.9.
    spec = E.GridSpec(width=3, height=1, start=(0, 1), goal=(0, 2), max_steps=10)
    v, ret = E.value_iteration_oracle(spec, discount=0.9)
    assert v[0, 1] == pytest.approx(0.9, abs=1e-10)
    assert ret == pytest.approx(1.0, abs=1e-12)  # undiscounted greedy return


def test_value_iteration_bellman_residual():
    spec = E.preset_spec("pitfall-5x5")
    v, ret = E.value_iteration_oracle(spec, discount=0.99)
    grid = v.reshape(-1)
    nxt, rew, term = E._transition_table(spec)
    backup = (0.99 * (rew + np.where(term, 0.0, grid[nxt]))).max(axis=1)
    np.testing.assert_allclose(backup, grid, atol=1e-9)
    assert ret == pytest.approx(1.0, abs=1e-12)  # the safe path reaches the goal


def test_oracle_matches_policy_enumeration_pit_forced():
    # Dawdling is costly (negative step reward), so diving into the pit is
    # optimal; cross-check against exhaustive policy enumeration.
    spec = E.GridSpec(
        width=3, height=1, start=(0, 1), goal=(0, 0), pits=((0, 2),),
        step_reward=-0.5, max_steps=6,
    )
    _, ret = E.value_iteration_oracle(spec, discount=1.0)
    assert ret == pytest.approx(brute_force_optimal(spec, 1.0), abs=1e-12)
    assert ret == pytest.approx(1.0, abs=1e-12)  # goal still beats the pit here

    # Goal fenced off by the pit: only the pit is reachable, and dawdling
    # costs -0.5/step, so terminating immediately is forced-optimal.
    spec2 = E.GridSpec(
        width=3, height=1, start=(0, 0), goal=(0, 2), pits=((0, 1),),
        step_reward=-0.5, max_steps=6,
    )
    _, ret2 = E.value_iteration_oracle(spec2, discount=1.0)
    assert ret2 == pytest.approx(brute_force_optimal(spec2, 1.0), abs=1e-12)
    assert ret2 == pytest.approx(-1.0, abs=1e-12)  # pit at step 1 beats -0.5/step

    # Discounted V(start) is -discount**(shortest path) under this convention.
    v2, _ = E.value_iteration_oracle(spec2, discount=0.9)
    assert v2[0, 0] == pytest.approx(-0.9, abs=1e-10)


def test_oracle_matches_policy_enumeration_3x3_random():
    rng = np.random.default_rng(3)
    for _ in range(3):
        pits = tuple({(int(rng.integers(0, 3)), int(rng.integers(0, 3)))} - {(0, 0), (2, 2)})
        spec = E.GridSpec(
            width=3, height=3, start=(0, 0), goal=(2, 2), pits=pits,
            step_reward=float(rng.choice([-0.2, 0.0])), max_steps=8,
        )
        _, ret = E.value_iteration_oracle(spec, discount=1.0)
        assert ret == pytest.approx(brute_force_optimal(spec, 1.0), abs=1e-9)


def test_spec_validation_and_json_roundtrip():
    with pytest.raises(T.DomainError):
        E.GridSpec(width=2, height=2, start=(0, 0), goal=(0, 0))
    with pytest.raises(T.DomainError):
        E.GridSpec(width=2, height=2, start=(0, 0), goal=(5, 5))
    spec = E.preset_spec("pitfall-5x5")
    again = E.GridSpec.from_json(spec.to_json())
    assert again == spec
    with pytest.raises(T.DomainError):
        E.preset_spec("nope")
