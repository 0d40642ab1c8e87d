"""Task bundles: loss pair + data source for each experiment.

A Task carries the inner and outer losses over one network layout, a
meta-parameter template, and a Sampler producing training/validation batches.
Samplers own their random streams; `lookahead_view` clones a sampler onto an
independently derived stream bundle (and, for the game, a copy of the current
environment states) so that speculative inner updates never disturb the
committed data stream.

Stream consumption order inside a lookahead view is fixed: one training batch
before each inner update, one validation batch after it. Because validation
batches are drawn at every step regardless of which estimates are consumed,
every estimator sees identical data at equal lookahead depth.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any, Protocol

import jax
import jax.numpy as jnp
import numpy as np

from . import rng as rng_mod
from .diff_engine import Layout, LossFunction
from .environments import (
    GRID_SIZE,
    SnakeState,
    mrp_reward_batch,
    observe,
    snake_advance,
    snake_reset,
)
from .networks import MRP_LAYOUT, MRP_SPEC, SNAKE_LAYOUT, SNAKE_SPEC, NetworkSpec, snake_apply
from .objectives import (
    IDENTITY,
    MetaParams,
    OuterParams,
    a2c_inner_loss,
    a2c_outer_loss,
    mrp_meta_params,
    prediction_inner_loss,
    prediction_outer_loss,
    snake_meta_params,
)

_VAL_TAG = 1_000_003  # offsets validation sub-streams away from training ones


class Sampler(Protocol):
    def training_batch(self, theta: np.ndarray) -> Any: ...
    def validation_batch(self, theta: np.ndarray) -> Any: ...
    def lookahead_view(self, seq) -> "Sampler": ...


def stack_batches(batches: list) -> Any:
    """Stack single-shot batch pytrees along a new leading axis."""
    if batches[0] is None:
        return None
    return jax.tree_util.tree_map(lambda *xs: np.stack(xs), *batches)


@dataclass
class Task:
    name: str
    spec: NetworkSpec
    layout: Layout
    meta_template: MetaParams
    inner_loss: LossFunction
    outer_loss: LossFunction
    sampler: Sampler


# --- MRP ---------------------------------------------------------------------


class MrpSampler:
    """Stateless reward batches; one derived generator per draw."""

    def __init__(self, seq, batch_size: int, meta_batch_size: int):
        self._seq = seq
        self._batch = batch_size
        self._meta_batch = meta_batch_size
        self._train_count = 0
        self._val_count = 0

    def training_batch(self, theta: np.ndarray) -> np.ndarray:
        gen = rng_mod.generator(self._seq, rng_mod.TRAIN, self._train_count)
        self._train_count += 1
        return mrp_reward_batch(gen, self._batch)

    def validation_batch(self, theta: np.ndarray) -> np.ndarray:
        gen = rng_mod.generator(self._seq, rng_mod.TRAIN, _VAL_TAG + self._val_count)
        self._val_count += 1
        return mrp_reward_batch(gen, self._meta_batch)

    def lookahead_view(self, seq) -> "MrpSampler":
        return MrpSampler(seq, self._batch, self._meta_batch)


def build_mrp_task(seed, batch_size: int = 32, meta_batch_size: int = 32,
                   gamma_init: float = 0.5) -> Task:
    meta = mrp_meta_params(gamma_init)
    sampler = MrpSampler(rng_mod.seed_seq(seed, rng_mod.TRAIN), batch_size, meta_batch_size)
    return Task(
        name="mrp",
        spec=MRP_SPEC,
        layout=MRP_LAYOUT,
        meta_template=meta,
        inner_loss=prediction_inner_loss(meta),
        outer_loss=prediction_outer_loss(meta.dim),
        sampler=sampler,
    )


# --- Snake ---------------------------------------------------------------------

_policy_probs = jax.jit(lambda theta, obs: jax.nn.softmax(snake_apply(theta, obs)[0], axis=-1))


@dataclass
class _EnvSlot:
    state: SnakeState
    obs: np.ndarray
    gen: np.random.Generator
    instance: int
    episode: int
    ep_return: float


class SnakeSampler:
    """Persistent batch of environments rolled out under the current policy.

    Every environment instance draws from its own stream derived from
    (bundle seed, instance, episode); rollouts are therefore bit-identical
    however the per-environment stepping is scheduled.
    """

    def __init__(self, seq, batch_size: int, rollout_len: int, size: int = GRID_SIZE,
                 slots: list[_EnvSlot] | None = None):
        self._seq = seq
        self._batch = batch_size
        self._len = rollout_len
        self._size = size
        self._val_count = 0
        self.completed_returns: list[float] = []
        if slots is None:
            slots = []
            for i in range(batch_size):
                gen = rng_mod.generator(seq, rng_mod.ENV, i, 0)
                state, obs = snake_reset(gen, size)
                slots.append(_EnvSlot(state, obs, gen, i, 0, 0.0))
        self._slots = slots

    def _clone_slots(self, seq) -> list[_EnvSlot]:
        out = []
        for slot in self._slots:
            gen = rng_mod.generator(seq, rng_mod.ENV, slot.instance, slot.episode)
            out.append(_EnvSlot(slot.state, slot.obs.copy(), gen,
                                slot.instance, slot.episode, slot.ep_return))
        return out

    def lookahead_view(self, seq) -> "SnakeSampler":
        view = SnakeSampler(seq, self._batch, self._len, self._size,
                            slots=self._clone_slots(seq))
        return view

    def _rollout(self, theta: np.ndarray, slots: list[_EnvSlot]) -> dict:
        n, horizon = len(slots), self._len
        obs_seq = np.empty((n, horizon, self._size, self._size, 5))
        actions = np.empty((n, horizon), dtype=np.int32)
        rewards = np.zeros((n, horizon))
        dones = np.zeros((n, horizon))
        for t in range(horizon):
            obs_now = np.stack([slot.obs for slot in slots])
            obs_seq[:, t] = obs_now
            probs = np.asarray(_policy_probs(theta, obs_now))
            for i, slot in enumerate(slots):
                cdf = np.cumsum(probs[i])
                action = int(np.searchsorted(cdf, slot.gen.random(), side="right"))
                action = min(action, 3)
                actions[i, t] = action
                state, reward, done = snake_advance(slot.state, action, slot.gen)
                rewards[i, t] = reward
                dones[i, t] = float(done)
                slot.ep_return += reward
                if done:
                    self.completed_returns.append(slot.ep_return)
                    slot.episode += 1
                    slot.ep_return = 0.0
                    slot.gen = rng_mod.generator(self._seq, rng_mod.ENV,
                                                 slot.instance, slot.episode)
                    slot.state, slot.obs = snake_reset(slot.gen, self._size)
                else:
                    slot.state = state
                    slot.obs = observe(state)
        return {
            "obs": obs_seq,
            "actions": actions,
            "rewards": rewards,
            "dones": dones,
            "last_obs": np.stack([slot.obs for slot in slots]),
        }

    def training_batch(self, theta: np.ndarray) -> dict:
        return self._rollout(theta, self._slots)

    def validation_batch(self, theta: np.ndarray) -> dict:
        # fresh rollout from a copy of the current states; never advances
        # the training chain
        seq = rng_mod.seed_seq(self._seq, _VAL_TAG, self._val_count)
        self._val_count += 1
        probe = SnakeSampler(seq, self._batch, self._len, self._size,
                             slots=self._clone_slots(seq))
        return probe._rollout(theta, probe._slots)

    def drain_completed_returns(self) -> list[float]:
        out = self.completed_returns
        self.completed_returns = []
        return out


def build_snake_task(seed, batch_size: int = 32, rollout_len: int = 20,
                     gamma: float = 0.99, lam: float = 0.99,
                     c_crit: float = 0.5, c_entr: float = 0.01,
                     outer: OuterParams | None = None) -> Task:
    meta = snake_meta_params(gamma, lam, c_crit, c_entr)
    outer = outer or OuterParams(gamma=0.99, lam=0.99)
    sampler = SnakeSampler(rng_mod.seed_seq(seed, rng_mod.TRAIN), batch_size, rollout_len)
    return Task(
        name="snake",
        spec=SNAKE_SPEC,
        layout=SNAKE_LAYOUT,
        meta_template=meta,
        inner_loss=a2c_inner_loss(meta),
        outer_loss=a2c_outer_loss(outer, meta.dim),
        sampler=sampler,
    )


# --- deterministic quadratic toy ----------------------------------------------


class _ConstantSampler:
    def training_batch(self, theta):
        return None

    def validation_batch(self, theta):
        return None

    def lookahead_view(self, seq):
        return self


def build_quadratic_task(b: np.ndarray, target: np.ndarray, eta0: float = 0.0) -> Task:
    """Inner loss 0.5||theta - eta b||^2, outer loss 0.5||theta - target||^2.

    Deterministic, with closed-form n-step meta-gradients; used by exactness
    tests and demos.
    """
    b = np.asarray(b, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    layout = Layout([("theta", b.shape)])
    meta = MetaParams(("eta",), np.array([eta0]), (IDENTITY,))
    b_j = jnp.asarray(b)
    t_j = jnp.asarray(target)

    def inner(theta, eta, batch):
        return 0.5 * jnp.sum((theta - eta[0] * b_j) ** 2)

    def outer(theta, eta, batch):
        return 0.5 * jnp.sum((theta - t_j) ** 2)

    return Task(
        name="quadratic",
        spec=NetworkSpec("quadratic", layout),
        layout=layout,
        meta_template=meta,
        inner_loss=LossFunction("quadratic_inner", inner, layout, meta.dim),
        outer_loss=LossFunction("quadratic_outer", outer, layout, meta.dim),
        sampler=_ConstantSampler(),
    )
