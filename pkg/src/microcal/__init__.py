"""Calibration of microplane concrete-model parameters with cascade neural networks."""

from microcal.params import (
    PARAM_NAMES,
    Bounds,
    FixedPolicy,
    ParameterVector,
    Violation,
    default_bounds,
    midpoint_fill,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "PARAM_NAMES",
    "Bounds",
    "FixedPolicy",
    "ParameterVector",
    "Violation",
    "default_bounds",
    "midpoint_fill",
    "validate",
]
