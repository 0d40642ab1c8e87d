"""Meta-gradient estimation lab.

A small numpy/JAX library for studying hypergradients computed through
reinforcement-learning inner updates: exact n-step estimators, Monte Carlo
averaging, kappa-mixing of i-step estimates, the accumulative-trace
approximation, and bias/variance measurement against a long-horizon oracle.
"""

from jax import config as _jax_config

# Everything downstream assumes 64-bit floats; enable before any jax import
# creates arrays.
_jax_config.update("jax_enable_x64", True)

from .errors import ConfigurationError, NumericError, UsageError  # noqa: E402
from .diff_engine import (  # noqa: E402
    CurvatureActions,
    Layout,
    LossFunction,
    ParamVector,
    TangentMatrix,
    curvature_actions,
    grad,
    hvp,
    mixed_column,
    tangent_step,
)
from .objectives import MetaParams, OuterParams  # noqa: E402

__all__ = [
    "ConfigurationError",
    "NumericError",
    "UsageError",
    "CurvatureActions",
    "Layout",
    "LossFunction",
    "ParamVector",
    "TangentMatrix",
    "curvature_actions",
    "grad",
    "hvp",
    "mixed_column",
    "tangent_step",
    "MetaParams",
    "OuterParams",
]
