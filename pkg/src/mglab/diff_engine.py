"""Differentiation kernels over flat parameter vectors.

Provides first-order gradients, Hessian-vector products, mixed
parameter/meta-parameter second derivatives, and the forward tangent
recursion that carries dtheta/deta through a chain of inner updates.
Second-order actions are computed forward-over-reverse: a jvp tangent pass
over the reverse-mode gradient evaluation. The meta dimension is small, so
one tangent pass per meta component is the cheapest exact scheme.

Conventions:
  * theta is a flat float64 vector with a Layout mapping named segments to
    network tensors.
  * eta is the flat unconstrained meta-parameter vector; any squashing to
    constrained space happens inside the loss evaluator, so all derivatives
    here are taken in the unconstrained space.
  * Losses are pure jax-traceable functions (theta, eta, batch) -> scalar
    with stop-gradient placement baked in at construction.
  * The raw Hessian/mixed actions are unscaled; learning-rate factors are
    applied by the caller (tangent_step, or the optimizer-aware update in
    `metagrad`), which keeps the raw Hessian available for spectral probes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from .errors import ConfigurationError, NumericError

Array = np.ndarray


class Layout:
    """Ordered, immutable (name, shape) segments of a flat vector."""

    __slots__ = ("entries", "size", "_slices", "_shapes")

    def __init__(self, entries: Sequence[tuple[str, tuple[int, ...]]]):
        self.entries = tuple((str(name), tuple(int(d) for d in shape)) for name, shape in entries)
        if len({name for name, _ in self.entries}) != len(self.entries):
            raise ConfigurationError("duplicate segment names in layout")
        self._slices = {}
        self._shapes = {}
        offset = 0
        for name, shape in self.entries:
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            self._slices[name] = slice(offset, offset + size)
            self._shapes[name] = shape
            offset += size
        self.size = offset

    def slice_of(self, name: str) -> slice:
        return self._slices[name]

    def shape_of(self, name: str) -> tuple[int, ...]:
        return self._shapes[name]

    def segment(self, flat, name: str):
        return flat[self._slices[name]].reshape(self._shapes[name])

    def unflatten(self, flat) -> dict:
        return {name: self.segment(flat, name) for name, _ in self.entries}

    def __eq__(self, other) -> bool:
        return isinstance(other, Layout) and self.entries == other.entries

    def __hash__(self) -> int:
        return hash(self.entries)

    def __repr__(self) -> str:
        return f"Layout({self.size} params, {len(self.entries)} segments)"


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 parameter vector plus its segment layout."""

    values: Array
    layout: Layout

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ConfigurationError("ParamVector values must be one-dimensional")
        if values.shape[0] != self.layout.size:
            raise ConfigurationError(
                f"ParamVector has {values.shape[0]} elements, layout expects {self.layout.size}"
            )
        object.__setattr__(self, "values", values)

    @staticmethod
    def zeros(layout: Layout) -> "ParamVector":
        return ParamVector(np.zeros(layout.size), layout)

    def segment(self, name: str) -> Array:
        return self.layout.segment(self.values, name)

    def _check_compatible(self, other: "ParamVector") -> None:
        if self.layout != other.layout:
            raise ConfigurationError("ParamVector layouts differ")

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self._check_compatible(other)
        return ParamVector(self.values + other.values, self.layout)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self._check_compatible(other)
        return ParamVector(self.values - other.values, self.layout)

    def __mul__(self, scalar: float) -> "ParamVector":
        return ParamVector(self.values * float(scalar), self.layout)

    __rmul__ = __mul__

    def dot(self, other: "ParamVector") -> float:
        self._check_compatible(other)
        return float(self.values @ other.values)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass
class TangentMatrix:
    """dtheta/deta, stored row-per-meta-component: columns[k] has theta's layout.

    A fresh tangent matrix is all-zero (the parameters before any inner
    update do not depend on the current meta-parameters).
    """

    columns: Array  # (meta_dim, n_params)
    meta_names: tuple[str, ...]
    layout: Layout

    def __post_init__(self):
        self.columns = np.asarray(self.columns, dtype=np.float64)
        if self.columns.shape != (len(self.meta_names), self.layout.size):
            raise ConfigurationError(
                f"TangentMatrix shape {self.columns.shape} does not match "
                f"({len(self.meta_names)}, {self.layout.size})"
            )

    @staticmethod
    def zeros(layout: Layout, meta_names: Sequence[str]) -> "TangentMatrix":
        names = tuple(meta_names)
        return TangentMatrix(np.zeros((len(names), layout.size)), names, layout)

    @property
    def meta_dim(self) -> int:
        return len(self.meta_names)

    def column(self, k: int) -> ParamVector:
        return ParamVector(self.columns[k].copy(), self.layout)


def _eta_array(eta) -> Array:
    if hasattr(eta, "unconstrained"):
        return np.asarray(eta.unconstrained, dtype=np.float64)
    return np.asarray(eta, dtype=np.float64)


@dataclass
class LossFunction:
    """A scalar loss (theta, eta, batch) -> float with declared semantics.

    `fn` must be jax-traceable and pure; stop-gradient placement (e.g.
    bootstrapped targets constant w.r.t. theta but differentiable w.r.t.
    eta) is part of the construction, never inferred.
    """

    name: str
    fn: Callable[[jnp.ndarray, jnp.ndarray, Any], jnp.ndarray]
    layout: Layout
    meta_dim: int
    _kernels: dict = field(default_factory=dict, repr=False, compare=False)

    def _joint_impl(self, theta, eta, batch, t_theta, t_eta):
        # jvp of the theta-gradient with joint tangents: row k of the result
        # is Hessian @ t_theta[k] + (d^2 L / dtheta deta) @ t_eta[k].
        def theta_grad(th, et):
            return jax.grad(self.fn, argnums=0)(th, et, batch)

        def one(tt, te):
            return jax.jvp(theta_grad, (theta, eta), (tt, te))[1]

        return jax.vmap(one)(t_theta, t_eta)

    def kernel(self, which: str) -> Callable:
        """Lazily built jitted kernels; `_m` variants are vmapped over shots."""
        k = self._kernels.get(which)
        if k is not None:
            return k
        if which == "value":
            k = jax.jit(self.fn)
        elif which == "value_grad":
            k = jax.jit(jax.value_and_grad(self.fn, argnums=0))
        elif which == "grad":
            k = jax.jit(jax.grad(self.fn, argnums=0))
        elif which == "eta_grad":
            k = jax.jit(jax.grad(self.fn, argnums=1))
        elif which == "joint":
            k = jax.jit(self._joint_impl)
        elif which == "value_grad_m":
            k = jax.jit(jax.vmap(jax.value_and_grad(self.fn, argnums=0), in_axes=(0, None, 0)))
        elif which == "grad_m":
            k = jax.jit(jax.vmap(jax.grad(self.fn, argnums=0), in_axes=(0, None, 0)))
        elif which == "joint_m":
            k = jax.jit(jax.vmap(self._joint_impl, in_axes=(0, None, 0, 0, None)))
        else:
            raise KeyError(which)
        self._kernels[which] = k
        return k


@dataclass
class CurvatureActions:
    """Second-order actions of an inner loss at a fixed evaluation point.

    hvp(v) is the raw Hessian action (d^2 L / dtheta^2) v; mixed(k) is column
    k of d^2 L / dtheta deta; joint(T) fuses both: row k of joint(T) equals
    hvp(T[k]) + mixed(k). outer_grad, when present, is dL'/dtheta of a
    validation loss at its own point.
    """

    hvp: Callable[[Array], Array]
    mixed: Callable[[int], Array]
    joint: Callable[[Array], Array]
    outer_grad: Callable[[], Array] | None
    meta_dim: int
    n_params: int


def _check_point(loss: LossFunction, theta: ParamVector) -> None:
    if theta.layout != loss.layout:
        raise ConfigurationError(f"theta layout does not match loss '{loss.name}'")


def _finite_or_raise(value: Array, name: str, what: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite {what}", term=name)


def grad(loss: LossFunction, theta: ParamVector, eta, batch) -> ParamVector:
    """dL/dtheta honoring the loss's declared stop-gradient semantics."""
    _check_point(loss, theta)
    value, g = loss.kernel("value_grad")(theta.values, _eta_array(eta), batch)
    _finite_or_raise(np.asarray(value), loss.name, "loss value")
    g = np.asarray(g)
    _finite_or_raise(g, loss.name, "gradient")
    return ParamVector(g, loss.layout)


def loss_value(loss: LossFunction, theta: ParamVector, eta, batch) -> float:
    _check_point(loss, theta)
    value = float(loss.kernel("value")(theta.values, _eta_array(eta), batch))
    _finite_or_raise(np.asarray(value), loss.name, "loss value")
    return value


def eta_grad(loss: LossFunction, theta: ParamVector, eta, batch) -> Array:
    """dL/deta in the unconstrained meta space (direct dependence only)."""
    _check_point(loss, theta)
    g = np.asarray(loss.kernel("eta_grad")(theta.values, _eta_array(eta), batch))
    _finite_or_raise(g, loss.name, "eta gradient")
    return g


def hvp(loss: LossFunction, theta: ParamVector, eta, batch, v: ParamVector) -> ParamVector:
    """Raw Hessian action (d^2 L / dtheta^2) v; linear in v."""
    _check_point(loss, theta)
    _check_point(loss, v)
    eta_arr = _eta_array(eta)
    t_theta = v.values[None, :]
    t_eta = np.zeros((1, eta_arr.shape[0]))
    out = loss.kernel("joint")(theta.values, eta_arr, batch, t_theta, t_eta)
    out = np.asarray(out)[0]
    _finite_or_raise(out, loss.name, "hvp")
    return ParamVector(out, loss.layout)


def mixed_column(loss: LossFunction, theta: ParamVector, eta, batch, k: int) -> ParamVector:
    """Column k of d^2 L / dtheta deta, eta in unconstrained representation."""
    _check_point(loss, theta)
    eta_arr = _eta_array(eta)
    if not 0 <= k < eta_arr.shape[0]:
        raise ConfigurationError(f"meta index {k} out of range for dimension {eta_arr.shape[0]}")
    t_theta = np.zeros((1, theta.layout.size))
    t_eta = np.zeros((1, eta_arr.shape[0]))
    t_eta[0, k] = 1.0
    out = loss.kernel("joint")(theta.values, eta_arr, batch, t_theta, t_eta)
    out = np.asarray(out)[0]
    _finite_or_raise(out, loss.name, "mixed column")
    return ParamVector(out, loss.layout)


def curvature_actions(
    loss: LossFunction,
    theta: ParamVector,
    eta,
    batch,
    outer_loss: LossFunction | None = None,
    outer_batch=None,
) -> CurvatureActions:
    """Bundle the second-order actions of `loss` at (theta, eta, batch)."""
    _check_point(loss, theta)
    eta_arr = _eta_array(eta)
    meta_dim = int(eta_arr.shape[0])
    n_params = theta.layout.size
    joint_kernel = loss.kernel("joint")
    eye = np.eye(meta_dim)

    def do_joint(t_theta: Array) -> Array:
        t_theta = np.asarray(t_theta, dtype=np.float64)
        if t_theta.shape != (meta_dim, n_params):
            raise ConfigurationError("joint tangent block has wrong shape")
        return np.asarray(joint_kernel(theta.values, eta_arr, batch, t_theta, eye))

    def do_hvp(v: Array) -> Array:
        v = np.asarray(v, dtype=np.float64).reshape(n_params)
        t_eta = np.zeros((1, meta_dim))
        return np.asarray(joint_kernel(theta.values, eta_arr, batch, v[None, :], t_eta))[0]

    def do_mixed(k: int) -> Array:
        t_theta = np.zeros((1, n_params))
        t_eta = np.zeros((1, meta_dim))
        t_eta[0, k] = 1.0
        return np.asarray(joint_kernel(theta.values, eta_arr, batch, t_theta, t_eta))[0]

    do_outer = None
    if outer_loss is not None:
        def do_outer() -> Array:
            return grad(outer_loss, theta, eta_arr, outer_batch).values

    return CurvatureActions(
        hvp=do_hvp, mixed=do_mixed, joint=do_joint, outer_grad=do_outer,
        meta_dim=meta_dim, n_params=n_params,
    )


def tangent_step(J: TangentMatrix, alpha: float, actions: CurvatureActions) -> TangentMatrix:
    """One SGD inner update applied to the tangent: J' = (I + H) J + N.

    H and N here are the learning-rate-scaled blocks -alpha d^2L/dtheta^2 and
    -alpha d^2L/dtheta deta, so each column advances as
    J'_k = J_k - alpha (hvp(J_k) + mixed(k)).
    """
    if J.meta_dim != actions.meta_dim:
        raise ConfigurationError("tangent matrix meta dimension does not match actions")
    hjn = actions.joint(J.columns)
    updated = J.columns - float(alpha) * hjn
    if not np.all(np.isfinite(updated)):
        bad = int(np.where(~np.isfinite(updated).all(axis=1))[0][0])
        raise NumericError("non-finite tangent column", term=J.meta_names[bad])
    return TangentMatrix(updated, J.meta_names, J.layout)
