"""Differentiable targets and the four training objectives.

Stop-gradient placement follows the written semi-gradients exactly:

* prediction inner loss: mean-squared error against the per-state-discount
  target; the target depends only on rewards and meta-parameters, so the
  theta-gradient is -(g - v) dv/dtheta and the eta-gradient flows through
  the target.
* prediction outer loss: mean-squared error against the undiscounted return,
  which is constant, so the only eta dependence is through theta(eta).
* actor-critic inner loss: policy-gradient term with a fully
  theta-stopped advantage, critic mean-squared error against a
  theta-stopped lambda-return target, and an entropy bonus. Meta-parameters
  (discount, bootstrap mix, critic and entropy coefficients) flow through
  the target and the two coefficients.
* actor-critic outer loss: policy-gradient term under the fixed outer
  discount/mix, advantage stopped entirely.

Meta-parameters are carried in an unconstrained vector; each component has a
fixed bijection to its constrained view (logistic for, e.g., discounts in
(0,1); exp for positive coefficients; identity for unbounded toys). Losses
squash internally, so every derivative taken against eta is in the
unconstrained space.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .diff_engine import Layout, LossFunction
from .errors import ConfigurationError
from .networks import MRP_LAYOUT, SNAKE_LAYOUT, mrp_apply, snake_apply
from .environments import N_MRP_STATES, MRP_STATE_INPUTS

SIGMOID, EXP, IDENTITY = "sigmoid", "exp", "identity"


def _squash_np(unconstrained: np.ndarray, transforms) -> np.ndarray:
    out = np.empty_like(unconstrained)
    for i, t in enumerate(transforms):
        x = unconstrained[i]
        if t == SIGMOID:
            out[i] = 1.0 / (1.0 + np.exp(-x))
        elif t == EXP:
            out[i] = np.exp(x)
        elif t == IDENTITY:
            out[i] = x
        else:
            raise ConfigurationError(f"unknown transform {t!r}")
    return out


def _unsquash_np(constrained: np.ndarray, transforms) -> np.ndarray:
    out = np.empty_like(constrained)
    for i, t in enumerate(transforms):
        y = constrained[i]
        if t == SIGMOID:
            if not 0.0 < y < 1.0:
                raise ConfigurationError(f"value {y} outside (0,1) for logistic component")
            out[i] = np.log(y / (1.0 - y))
        elif t == EXP:
            if y <= 0.0:
                raise ConfigurationError(f"value {y} must be positive for exp component")
            out[i] = np.log(y)
        elif t == IDENTITY:
            out[i] = y
        else:
            raise ConfigurationError(f"unknown transform {t!r}")
    return out


def make_squasher(transforms):
    """jax-traceable unconstrained -> constrained map for a transform tuple."""
    transforms = tuple(transforms)

    def squash(eta: jnp.ndarray) -> jnp.ndarray:
        parts = []
        for i, t in enumerate(transforms):
            if t == SIGMOID:
                parts.append(jax.nn.sigmoid(eta[i]))
            elif t == EXP:
                parts.append(jnp.exp(eta[i]))
            else:
                parts.append(eta[i])
        return jnp.stack(parts)

    return squash


@dataclass(frozen=True)
class MetaParams:
    """Meta-parameter vector with both representations.

    `unconstrained` is the optimization space; `constrained()` is the view
    the losses consume after squashing.
    """

    names: tuple[str, ...]
    unconstrained: np.ndarray
    transforms: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.unconstrained, dtype=np.float64)
        if values.shape != (len(self.names),):
            raise ConfigurationError("meta-parameter vector does not match names")
        if len(self.transforms) != len(self.names):
            raise ConfigurationError("transforms do not match names")
        object.__setattr__(self, "unconstrained", values)

    @classmethod
    def from_constrained(cls, names, values, transforms) -> "MetaParams":
        names = tuple(names)
        transforms = tuple(transforms)
        unc = _unsquash_np(np.asarray(values, dtype=np.float64), transforms)
        return cls(names, unc, transforms)

    def constrained(self) -> np.ndarray:
        return _squash_np(self.unconstrained, self.transforms)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.constrained())}

    def replace_unconstrained(self, values: np.ndarray) -> "MetaParams":
        return MetaParams(self.names, np.asarray(values, dtype=np.float64), self.transforms)

    @property
    def dim(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class OuterParams:
    """Fixed hyper-parameters of the outer objective."""

    gamma: float = 1.0
    lam: float = 1.0


def mrp_meta_params(gamma_init: float = 0.5) -> MetaParams:
    names = tuple(f"gamma_{i}" for i in range(N_MRP_STATES))
    return MetaParams.from_constrained(names, np.full(N_MRP_STATES, gamma_init),
                                       (SIGMOID,) * N_MRP_STATES)


def snake_meta_params(gamma=0.99, lam=0.99, c_crit=0.5, c_entr=0.01) -> MetaParams:
    return MetaParams.from_constrained(
        ("gamma", "lambda", "c_crit", "c_entr"),
        np.array([gamma, lam, c_crit, c_entr]),
        (SIGMOID, SIGMOID, EXP, EXP),
    )


# --- prediction targets ------------------------------------------------------

# exponent/mask tables for g(s_i) = sum_{j>=i} gamma_j^(j-i+1) r_j
_J_IDX, _I_IDX = np.meshgrid(np.arange(N_MRP_STATES), np.arange(N_MRP_STATES))
_EXPONENTS = jnp.asarray(np.maximum(_J_IDX - _I_IDX + 1, 0), dtype=jnp.float64)
_UPPER_MASK = jnp.asarray((_J_IDX >= _I_IDX).astype(np.float64))


def _mrp_target_jnp(rewards: jnp.ndarray, gamma_vec: jnp.ndarray) -> jnp.ndarray:
    # rewards (..., 10) -> targets (..., 10)
    weights = jnp.power(gamma_vec[None, :], _EXPONENTS) * _UPPER_MASK  # (i, j)
    return rewards @ weights.T


def mrp_target(rewards: np.ndarray, gamma_vec: np.ndarray) -> np.ndarray:
    """Per-state targets discounting each reward by its own state's factor."""
    rewards = np.asarray(rewards, dtype=np.float64)
    gamma_vec = np.asarray(gamma_vec, dtype=np.float64)
    if gamma_vec.shape != (N_MRP_STATES,) or rewards.shape[-1] != N_MRP_STATES:
        raise ConfigurationError("expected 10 rewards and 10 discount factors")
    return np.asarray(_mrp_target_jnp(jnp.asarray(rewards), jnp.asarray(gamma_vec)))


def mrp_outer_target(rewards: np.ndarray) -> np.ndarray:
    """Undiscounted tail sums: g'(s_i) = sum_{j>=i} r_j."""
    rewards = np.asarray(rewards, dtype=np.float64)
    return np.cumsum(rewards[..., ::-1], axis=-1)[..., ::-1]


# --- lambda returns ----------------------------------------------------------


def _lambda_return_jnp(rewards, values, dones, gamma, lam):
    # rewards/dones (B, T), values (B, T+1); returns (B, T)
    horizon = rewards.shape[1]

    def step(g_next, t):
        v_next = values[:, t + 1]
        g = rewards[:, t] + gamma * ((1.0 - lam) * v_next + lam * g_next)
        g = jnp.where(dones[:, t] > 0.5, rewards[:, t], g)
        return g, g

    _, targets = jax.lax.scan(step, values[:, horizon], jnp.arange(horizon - 1, -1, -1))
    return targets[::-1].T


def lambda_return(rewards, values, dones, gamma: float, lam: float) -> np.ndarray:
    """Per-step lambda-return targets.

    `values` must carry one bootstrap entry past the horizon; `dones` masks
    bootstrapping (at terminal steps the target is the reward alone).
    """
    rewards = np.atleast_2d(np.asarray(rewards, dtype=np.float64))
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    dones = np.atleast_2d(np.asarray(dones, dtype=np.float64))
    if values.shape[1] != rewards.shape[1] + 1 or dones.shape != rewards.shape:
        raise ConfigurationError("lambda_return: values must have length T+1 and dones length T")
    out = np.asarray(_lambda_return_jnp(
        jnp.asarray(rewards), jnp.asarray(values), jnp.asarray(dones),
        float(gamma), float(lam)))
    return out


# --- losses -------------------------------------------------------------------

_MRP_INPUTS = jnp.asarray(MRP_STATE_INPUTS)


def prediction_inner_loss(meta: MetaParams) -> LossFunction:
    """0.5 * mean over states and batch of (g_eta - v_theta)^2.

    The batch is a (B, 10) reward matrix. The target carries no theta
    dependence, so the theta-gradient is the written semi-gradient; the
    eta-gradient flows through the per-state discounts.
    """
    squash = make_squasher(meta.transforms)

    def fn(theta, eta, rewards):
        gamma_vec = squash(eta)
        g = _mrp_target_jnp(rewards, gamma_vec)
        v = mrp_apply(theta, _MRP_INPUTS)
        return 0.5 * jnp.mean((g - v[None, :]) ** 2)

    return LossFunction("prediction_inner", fn, MRP_LAYOUT, meta.dim)


def prediction_outer_loss(meta_dim: int) -> LossFunction:
    """0.5 * mean of (g' - v_theta)^2 with the undiscounted-return target."""

    def fn(theta, eta, rewards):
        g = jnp.cumsum(rewards[:, ::-1], axis=1)[:, ::-1]
        v = mrp_apply(theta, _MRP_INPUTS)
        return 0.5 * jnp.mean((g - v[None, :]) ** 2)

    return LossFunction("prediction_outer", fn, MRP_LAYOUT, meta_dim)


def _forward_sequence(theta, batch):
    obs = batch["obs"]  # (B, T, H, W, C)
    n_batch, horizon = obs.shape[0], obs.shape[1]
    flat_obs = obs.reshape((n_batch * horizon,) + obs.shape[2:])
    logits, values = snake_apply(theta, flat_obs)
    logits = logits.reshape(n_batch, horizon, -1)
    values = values.reshape(n_batch, horizon)
    _, v_last = snake_apply(theta, batch["last_obs"])
    values_ext = jnp.concatenate([values, v_last[:, None]], axis=1)
    return logits, values, values_ext


def _policy_term(logits, actions, advantage):
    logp = jax.nn.log_softmax(logits, axis=-1)
    taken = jnp.take_along_axis(logp, actions[..., None], axis=-1)[..., 0]
    return -jnp.mean(advantage * taken)


def a2c_inner_loss(meta: MetaParams) -> LossFunction:
    """Policy gradient + weighted critic error - weighted entropy.

    Batch: dict with obs (B,T,H,W,C), actions (B,T) int, rewards (B,T),
    dones (B,T), last_obs (B,H,W,C). The lambda-return target and the
    advantage are theta-stopped; discount and mix flow to eta.
    """
    squash = make_squasher(meta.transforms)

    def fn(theta, eta, batch):
        gamma, lam, c_crit, c_entr = squash(eta)
        logits, values, values_ext = _forward_sequence(theta, batch)
        v_stopped = jax.lax.stop_gradient(values_ext)
        g = _lambda_return_jnp(batch["rewards"], v_stopped, batch["dones"], gamma, lam)
        advantage = g - v_stopped[:, :-1]
        policy = _policy_term(logits, batch["actions"], advantage)
        critic = 0.5 * jnp.mean((g - values) ** 2)
        probs = jax.nn.softmax(logits, axis=-1)
        entropy = -jnp.mean(jnp.sum(probs * jax.nn.log_softmax(logits, axis=-1), axis=-1))
        return policy + c_crit * critic - c_entr * entropy

    return LossFunction("a2c_inner", fn, SNAKE_LAYOUT, meta.dim)


def a2c_outer_loss(outer: OuterParams, meta_dim: int) -> LossFunction:
    """Policy-gradient objective at the fixed outer discount/mix.

    Both advantage factors are stopped; the only route back to the
    meta-parameters is through the updated network parameters.
    """
    gamma_p, lam_p = float(outer.gamma), float(outer.lam)

    def fn(theta, eta, batch):
        logits, values, values_ext = _forward_sequence(theta, batch)
        v_stopped = jax.lax.stop_gradient(values_ext)
        g = _lambda_return_jnp(batch["rewards"], v_stopped, batch["dones"], gamma_p, lam_p)
        advantage = jax.lax.stop_gradient(g - v_stopped[:, :-1])
        return _policy_term(logits, batch["actions"], advantage)

    return LossFunction("a2c_outer", fn, SNAKE_LAYOUT, meta_dim)
