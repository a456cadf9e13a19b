"""Parameter space of the microplane model: values, bounds and fixing policies.

Stresses are in MPa and strains are dimensionless throughout the package, so
Young's modulus is stored in MPa.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Iterable, Mapping

import numpy as np

PARAM_NAMES: tuple[str, ...] = ("E", "nu", "k1", "k2", "k3", "k4", "c20")

# Admissible intervals. E is given in MPa (20-50 GPa).
DEFAULT_INTERVALS: dict[str, tuple[float, float]] = {
    "E": (20000.0, 50000.0),
    "nu": (0.1, 0.3),
    "k1": (0.00008, 0.00025),
    "k2": (100.0, 1000.0),
    "k3": (5.0, 15.0),
    "k4": (30.0, 200.0),
    "c20": (0.2, 5.0),
}


class ParameterError(ValueError):
    """Raised for malformed parameter vectors, bounds or policies."""


@dataclass(frozen=True)
class ParameterVector:
    """The seven calibration parameters of the microplane model."""

    E: float
    nu: float
    k1: float
    k2: float
    k3: float
    k4: float
    c20: float

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ParameterError(f"{f.name} must be finite, got {value!r}")
            if f.name == "nu":
                if not 0.0 < value < 0.5:
                    raise ParameterError(f"nu must lie in (0, 0.5), got {value!r}")
            elif value <= 0.0:
                raise ParameterError(f"{f.name} must be positive, got {value!r}")

    @classmethod
    def from_array(cls, values: Iterable[float]) -> "ParameterVector":
        values = [float(v) for v in values]
        if len(values) != len(PARAM_NAMES):
            raise ParameterError(f"expected {len(PARAM_NAMES)} values, got {len(values)}")
        return cls(*values)

    @classmethod
    def from_dict(cls, d: Mapping[str, float]) -> "ParameterVector":
        return cls(**{name: float(d[name]) for name in PARAM_NAMES})

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PARAM_NAMES], dtype=float)

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_values(self, **changes: float) -> "ParameterVector":
        return replace(self, **changes)

    def scaled_k1(self, factor: float) -> "ParameterVector":
        return replace(self, k1=self.k1 * factor)


@dataclass(frozen=True)
class Bounds:
    """Closed interval [lo, hi] per parameter."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.intervals) != len(PARAM_NAMES):
            raise ParameterError("bounds must cover all seven parameters")
        for name, (lo, hi) in zip(PARAM_NAMES, self.intervals):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ParameterError(f"bounds for {name} must be finite")
            if not lo < hi:
                raise ParameterError(f"degenerate interval for {name}: [{lo}, {hi}]")

    @classmethod
    def from_dict(cls, d: Mapping[str, Iterable[float]]) -> "Bounds":
        unknown = set(d) - set(PARAM_NAMES)
        if unknown:
            raise ParameterError(f"unknown parameters in bounds: {sorted(unknown)}")
        merged = dict(DEFAULT_INTERVALS)
        for name, pair in d.items():
            lo, hi = (float(v) for v in pair)
            merged[name] = (lo, hi)
        return cls(tuple(merged[name] for name in PARAM_NAMES))

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return dict(zip(PARAM_NAMES, self.intervals))

    def __getitem__(self, name: str) -> tuple[float, float]:
        return self.intervals[PARAM_NAMES.index(name)]

    @property
    def lo(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.intervals])

    @property
    def hi(self) -> np.ndarray:
        return np.array([hi for _, hi in self.intervals])

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def mid(self, name: str) -> float:
        lo, hi = self[name]
        return 0.5 * (lo + hi)

    def with_interval(self, name: str, lo: float, hi: float) -> "Bounds":
        d = self.as_dict()
        d[name] = (lo, hi)
        return Bounds(tuple(d[n] for n in PARAM_NAMES))

    def normalize(self, p: ParameterVector) -> np.ndarray:
        return normalize(p, self)

    def denormalize(self, u) -> ParameterVector:
        return denormalize(u, self)


def default_bounds() -> Bounds:
    return Bounds(tuple(DEFAULT_INTERVALS[name] for name in PARAM_NAMES))


@dataclass(frozen=True)
class Violation:
    name: str
    value: float
    lo: float
    hi: float

    def __str__(self) -> str:
        side = ">" if self.value > self.hi else "<"
        limit = self.hi if self.value > self.hi else self.lo
        return f"{self.name}={self.value:g} {side} {limit:g} (interval [{self.lo:g}, {self.hi:g}])"


def validate(p: ParameterVector, b: Bounds) -> list[Violation]:
    """List every parameter of `p` lying outside its closed interval in `b`."""
    out = []
    for name, (lo, hi) in zip(PARAM_NAMES, b.intervals):
        value = getattr(p, name)
        if value < lo or value > hi:
            out.append(Violation(name, value, lo, hi))
    return out


def normalize(p: ParameterVector, b: Bounds) -> np.ndarray:
    return (p.as_array() - b.lo) / b.width


def denormalize(u, b: Bounds) -> ParameterVector:
    u = np.asarray(u, dtype=float)
    return ParameterVector.from_array(b.lo + u * b.width)


class FixedPolicy(dict):
    """Mapping parameter name -> fixed value (or None for free parameters)."""

    def __init__(self, values: Mapping[str, float | None] | None = None, **kw):
        super().__init__()
        merged = dict(values or {})
        merged.update(kw)
        for name, value in merged.items():
            if name not in PARAM_NAMES:
                raise ParameterError(f"unknown parameter {name!r}")
            if value is None:
                continue
            value = float(value)
            if not math.isfinite(value) or (value <= 0.0):
                raise ParameterError(f"fixed value for {name} must be positive and finite")
            if name == "nu" and not value < 0.5:
                raise ParameterError("fixed nu must lie in (0, 0.5)")
            self[name] = value

    @property
    def free(self) -> tuple[str, ...]:
        return tuple(name for name in PARAM_NAMES if name not in self)


def midpoint_fill(fixed: Mapping[str, float] | None, b: Bounds) -> ParameterVector:
    """Fixed parameters are copied; every other parameter sits at its interval midpoint."""
    fixed = FixedPolicy(fixed or {})
    return ParameterVector(**{name: fixed.get(name, b.mid(name)) for name in PARAM_NAMES})
