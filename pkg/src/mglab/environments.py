"""The two environments: a 10-state Markov Reward Process and 12x12 Snake.

Both are driven by caller-supplied numpy Generators so rollouts are
reproducible and independent of scheduling. The MRP has no actions: one
rollout is a single left-to-right traversal emitting a reward per state
(0.1 at even states, standard-normal at odd states).

Snake: the head moves one cell per step; collecting the fruit grows the body
by one and respawns the fruit uniformly over free cells; leaving the grid,
entering a body cell, filling the board, or reaching 5000 steps ends the
episode. Pressing the direction opposite to the current heading (with length
> 1) resolves to continuing straight. The cell the tail vacates in the same
tick is safe to enter, except on fruit ticks when the tail does not move.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, UsageError
from .networks import GRID_SIZE, OBS_CHANNELS

MAX_EPISODE_STEPS = 5000

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))
_OPPOSITE = (DOWN, UP, RIGHT, LEFT)
ACTION_NAMES = ("up", "down", "left", "right")


# --- Markov Reward Process ------------------------------------------------

N_MRP_STATES = 10
MRP_STATE_INPUTS = np.arange(N_MRP_STATES, dtype=np.float64) / (N_MRP_STATES - 1)


@dataclass(frozen=True)
class MrpTrajectory:
    rewards: np.ndarray       # (10,), index = state
    state_inputs: np.ndarray  # (10,), scalar encoding of each state


def mrp_rollout(rng: np.random.Generator) -> MrpTrajectory:
    """One full traversal: deterministic 0.1 at even states, N(0,1) at odd."""
    rewards = np.full(N_MRP_STATES, 0.1)
    rewards[1::2] = rng.standard_normal(N_MRP_STATES // 2)
    return MrpTrajectory(rewards, MRP_STATE_INPUTS.copy())


def mrp_reward_batch(rng: np.random.Generator, size: int) -> np.ndarray:
    """(size, 10) reward matrix for a batch of independent rollouts."""
    rewards = np.full((size, N_MRP_STATES), 0.1)
    rewards[:, 1::2] = rng.standard_normal((size, N_MRP_STATES // 2))
    return rewards


# --- Snake -----------------------------------------------------------------


@dataclass(frozen=True)
class SnakeState:
    body: tuple[tuple[int, int], ...]  # head first
    fruit: tuple[int, int]
    heading: int
    step_count: int
    done: bool
    size: int = GRID_SIZE

    @property
    def head(self) -> tuple[int, int]:
        return self.body[0]

    @property
    def tail(self) -> tuple[int, int]:
        return self.body[-1]


def _random_cell(rng: np.random.Generator, size: int) -> tuple[int, int]:
    return (int(rng.integers(size)), int(rng.integers(size)))


def _spawn_fruit(rng: np.random.Generator, body, size: int) -> tuple[int, int] | None:
    occupied = set(body)
    free = [(r, c) for r in range(size) for c in range(size) if (r, c) not in occupied]
    if not free:
        return None
    return free[int(rng.integers(len(free)))]


def observe(state: SnakeState) -> np.ndarray:
    """(size, size, 5) channels: body, head, tail, fruit, normalized cell index."""
    size = state.size
    obs = np.zeros((size, size, OBS_CHANNELS))
    for r, c in state.body:
        obs[r, c, 0] = 1.0
    hr, hc = state.head
    obs[hr, hc, 1] = 1.0
    tr, tc = state.tail
    obs[tr, tc, 2] = 1.0
    fr, fc = state.fruit
    obs[fr, fc, 3] = 1.0
    idx = np.arange(size * size, dtype=np.float64).reshape(size, size)
    obs[:, :, 4] = idx / (size * size - 1)
    return obs


def snake_reset(rng: np.random.Generator, size: int = GRID_SIZE) -> tuple[SnakeState, np.ndarray]:
    """Length-1 snake at a random cell, fruit at a distinct random cell."""
    head = _random_cell(rng, size)
    fruit = head
    while fruit == head:
        fruit = _random_cell(rng, size)
    heading = int(rng.integers(4))
    state = SnakeState(body=(head,), fruit=fruit, heading=heading,
                       step_count=0, done=False, size=size)
    return state, observe(state)


def snake_advance(state: SnakeState, action: int, rng: np.random.Generator
                  ) -> tuple[SnakeState, float, bool]:
    """Pure transition without building the observation (fast path)."""
    if state.done:
        raise UsageError("stepping a finished episode")
    if not 0 <= action < 4:
        raise ConfigurationError(f"invalid action {action}")

    resolved = action
    if len(state.body) > 1 and action == _OPPOSITE[state.heading]:
        resolved = state.heading
    dr, dc = _DELTAS[resolved]
    hr, hc = state.head
    new_head = (hr + dr, hc + dc)
    steps = state.step_count + 1
    size = state.size

    if not (0 <= new_head[0] < size and 0 <= new_head[1] < size):
        return replace(state, heading=resolved, step_count=steps, done=True), 0.0, True

    if new_head == state.fruit:
        body = (new_head,) + state.body  # tail does not move on fruit ticks
        fruit = _spawn_fruit(rng, body, size)
        if fruit is None:  # board full: every fruit collected
            final = replace(state, body=body, heading=resolved, step_count=steps, done=True)
            return final, 1.0, True
        done = steps >= MAX_EPISODE_STEPS
        nxt = SnakeState(body=body, fruit=fruit, heading=resolved,
                         step_count=steps, done=done, size=size)
        return nxt, 1.0, done

    # tail vacates this tick, so its cell is enterable
    if new_head in state.body[:-1]:
        return replace(state, heading=resolved, step_count=steps, done=True), 0.0, True
    body = (new_head,) + state.body[:-1]
    done = steps >= MAX_EPISODE_STEPS
    nxt = SnakeState(body=body, fruit=state.fruit, heading=resolved,
                     step_count=steps, done=done, size=size)
    return nxt, 0.0, done


def snake_step(state: SnakeState, action: int, rng: np.random.Generator
               ) -> tuple[SnakeState, np.ndarray, float, bool]:
    nxt, reward, done = snake_advance(state, action, rng)
    return nxt, observe(nxt), reward, done


class SnakeEnv:
    """Stateful convenience wrapper with an owned random stream."""

    def __init__(self, rng: np.random.Generator, size: int = GRID_SIZE):
        self._rng = rng
        self._size = size
        self.state: SnakeState | None = None

    def reset(self) -> np.ndarray:
        self.state, obs = snake_reset(self._rng, self._size)
        return obs

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise UsageError("step before reset")
        self.state, obs, reward, done = snake_step(self.state, action, self._rng)
        return obs, reward, done


def random_policy_mean_return(seed, episodes: int = 200, size: int = GRID_SIZE) -> float:
    """Mean episode return of the uniform-random policy; the smoke baseline."""
    from . import rng as rng_mod

    total = 0.0
    for ep in range(episodes):
        gen = rng_mod.generator(seed, rng_mod.EVAL, ep)
        state, _ = snake_reset(gen, size)
        ep_return = 0.0
        done = False
        while not done:
            state, reward, done = snake_advance(state, int(gen.integers(4)), gen)
            ep_return += reward
        total += ep_return
    return total / episodes
