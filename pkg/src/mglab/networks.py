"""The two reference architectures as pure functions of a flat parameter vector.

* value MLP 1 -> 10 -> 10 -> 1 (tanh hidden layers) for scalar-state value
  prediction; the scalar input for state i is i/9, matching the declared
  input width of 1.
* conv actor-critic for the 12x12 grid game: two blocks of
  [3x3 conv stride 1, 32 maps, relu, 2x2 max-pool stride 2], a 40-unit
  linear trunk, and two 30-unit hidden heads emitting 4 action logits and
  one value. Convolutions use same-padding so the spatial path is
  12 -> 6 -> 3 and the trunk input is 3*3*32 = 288.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .diff_engine import Layout, ParamVector
from .errors import ConfigurationError

GRID_SIZE = 12
OBS_CHANNELS = 5
N_ACTIONS = 4
MRP_STATE_INPUTS = np.arange(10, dtype=np.float64) / 9.0

MRP_LAYOUT = Layout([
    ("w1", (1, 10)), ("b1", (10,)),
    ("w2", (10, 10)), ("b2", (10,)),
    ("w3", (10, 1)), ("b3", (1,)),
])

SNAKE_LAYOUT = Layout([
    ("conv1_w", (3, 3, OBS_CHANNELS, 32)), ("conv1_b", (32,)),
    ("conv2_w", (3, 3, 32, 32)), ("conv2_b", (32,)),
    ("trunk_w", (288, 40)), ("trunk_b", (40,)),
    ("actor_hidden_w", (40, 30)), ("actor_hidden_b", (30,)),
    ("actor_out_w", (30, N_ACTIONS)), ("actor_out_b", (N_ACTIONS,)),
    ("critic_hidden_w", (40, 30)), ("critic_hidden_b", (30,)),
    ("critic_out_w", (30, 1)), ("critic_out_b", (1,)),
])

# fan-in per weight segment, for variance-scaled init
_FAN_IN = {
    "w1": 1, "w2": 10, "w3": 10,
    "conv1_w": 3 * 3 * OBS_CHANNELS, "conv2_w": 3 * 3 * 32,
    "trunk_w": 288,
    "actor_hidden_w": 40, "actor_out_w": 30,
    "critic_hidden_w": 40, "critic_out_w": 30,
}


@dataclass(frozen=True)
class NetworkSpec:
    kind: str  # 'mrp_mlp' | 'snake_actor_critic'
    layout: Layout


MRP_SPEC = NetworkSpec("mrp_mlp", MRP_LAYOUT)
SNAKE_SPEC = NetworkSpec("snake_actor_critic", SNAKE_LAYOUT)


def init_params(spec: NetworkSpec, seed: int) -> ParamVector:
    """Deterministic init: weights ~ U(-L, L) with L = sqrt(3/fan_in), biases 0."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(spec.layout.size)
    for name, shape in spec.layout.entries:
        if name in _FAN_IN:
            limit = np.sqrt(3.0 / _FAN_IN[name])
            flat[spec.layout.slice_of(name)] = rng.uniform(-limit, limit, size=int(np.prod(shape)))
    return ParamVector(flat, spec.layout)


def mrp_apply(theta_flat: jnp.ndarray, x: jnp.ndarray) -> jnp.ndarray:
    """Value predictions for a vector of scalar inputs; jax-traceable."""
    seg = MRP_LAYOUT.unflatten(theta_flat)
    h = x[:, None]
    h = jnp.tanh(h @ seg["w1"] + seg["b1"])
    h = jnp.tanh(h @ seg["w2"] + seg["b2"])
    return (h @ seg["w3"] + seg["b3"])[:, 0]


def _max_pool_2x2(x: jnp.ndarray) -> jnp.ndarray:
    return jax.lax.reduce_window(
        x, -jnp.inf, jax.lax.max,
        window_dimensions=(1, 2, 2, 1), window_strides=(1, 2, 2, 1), padding="VALID",
    )


def snake_apply(theta_flat: jnp.ndarray, obs: jnp.ndarray) -> tuple[jnp.ndarray, jnp.ndarray]:
    """Logits (B, 4) and values (B,) for a batch of observations (B, 12, 12, 5)."""
    seg = SNAKE_LAYOUT.unflatten(theta_flat)
    h = obs
    for w, b in (("conv1_w", "conv1_b"), ("conv2_w", "conv2_b")):
        h = jax.lax.conv_general_dilated(
            h, seg[w], window_strides=(1, 1), padding="SAME",
            dimension_numbers=("NHWC", "HWIO", "NHWC"),
        ) + seg[b]
        h = jax.nn.relu(h)
        h = _max_pool_2x2(h)
    h = h.reshape(h.shape[0], -1)
    trunk = jax.nn.relu(h @ seg["trunk_w"] + seg["trunk_b"])
    ha = jax.nn.relu(trunk @ seg["actor_hidden_w"] + seg["actor_hidden_b"])
    logits = ha @ seg["actor_out_w"] + seg["actor_out_b"]
    hc = jax.nn.relu(trunk @ seg["critic_hidden_w"] + seg["critic_hidden_b"])
    values = (hc @ seg["critic_out_w"] + seg["critic_out_b"])[:, 0]
    return logits, values


_mrp_apply_jit = jax.jit(mrp_apply)
_snake_apply_jit = jax.jit(snake_apply)


def mrp_value(theta: ParamVector, state_input: float) -> float:
    """Scalar value estimate for one input in [0, 1]."""
    if theta.layout != MRP_LAYOUT:
        raise ConfigurationError("theta does not have the value-MLP layout")
    out = _mrp_apply_jit(theta.values, jnp.asarray([float(state_input)]))
    return float(out[0])


def mrp_values(theta: ParamVector, state_inputs=MRP_STATE_INPUTS) -> np.ndarray:
    if theta.layout != MRP_LAYOUT:
        raise ConfigurationError("theta does not have the value-MLP layout")
    return np.asarray(_mrp_apply_jit(theta.values, jnp.asarray(state_inputs)))


def snake_forward(theta: ParamVector, obs: np.ndarray) -> tuple[np.ndarray, float]:
    """Action logits (4,) and scalar value for a single observation."""
    if theta.layout != SNAKE_LAYOUT:
        raise ConfigurationError("theta does not have the actor-critic layout")
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (GRID_SIZE, GRID_SIZE, OBS_CHANNELS):
        raise ConfigurationError(
            f"observation shape {obs.shape} != {(GRID_SIZE, GRID_SIZE, OBS_CHANNELS)}"
        )
    logits, values = _snake_apply_jit(theta.values, obs[None])
    return np.asarray(logits)[0], float(values[0])
