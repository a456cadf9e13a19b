"""Pipeline configuration: one YAML file, validated on load, unknown keys rejected."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from microcal.cascade import PipelinePlan, build_default_plan
from microcal.grade import DESK_BUDGET
from microcal.lab import HYDROSTATIC_DEFAULTS, TRIAXIAL_DEFAULTS, TRIAXIAL_LEVELS, UNIAXIAL_DEFAULTS
from microcal.params import PARAM_NAMES, Bounds, FixedPolicy, ParameterError, default_bounds


class ConfigError(ValueError):
    pass


_PROTOCOL_KEYS = {
    "uniaxial": set(UNIAXIAL_DEFAULTS),
    "hydrostatic": set(HYDROSTATIC_DEFAULTS),
    "triaxial": set(TRIAXIAL_DEFAULTS),
}


@dataclass(frozen=True)
class SensitivityConfig:
    n: int = 60
    nu_max: float = 0.235       # drivers need nu < 0.24
    grid_points: int = 100


@dataclass(frozen=True)
class VerifyConfig:
    n_cases: int = 5
    seed: int = 1


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    n_train: int = 60
    n_test: int = 10
    budget: int = DESK_BUDGET
    anneal_budget: int = 20000
    k3_variant: str = "five"
    bounds: dict = field(default_factory=dict)
    fixed: dict = field(default_factory=lambda: {"nu": 0.2})
    hidden: dict = field(default_factory=dict)
    protocols: dict = field(default_factory=dict)
    triaxial_levels: tuple = TRIAXIAL_LEVELS
    sensitivity: SensitivityConfig = SensitivityConfig()
    verify: VerifyConfig = VerifyConfig()
    output: str = "run"

    def __post_init__(self):
        if self.n_train < 2 or self.n_test < 1:
            raise ConfigError("need n_train >= 2 and n_test >= 1")
        if self.budget < 30:
            raise ConfigError("budget must cover at least one population (30)")
        if self.k3_variant not in ("five", "four"):
            raise ConfigError("k3_variant must be 'five' or 'four'")
        for kind, proto in self.protocols.items():
            if kind not in _PROTOCOL_KEYS:
                raise ConfigError(f"unknown test kind {kind!r} in protocols")
            extra = set(proto) - _PROTOCOL_KEYS[kind]
            if extra:
                raise ConfigError(f"unknown {kind} protocol keys {sorted(extra)}")
        if not self.triaxial_levels or min(self.triaxial_levels) <= 0:
            raise ConfigError("triaxial_levels must be positive")
        try:
            self.bounds_obj()
            FixedPolicy(self.fixed)
            self.plan()
        except (ParameterError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def bounds_obj(self) -> Bounds:
        return Bounds.from_dict(self.bounds) if self.bounds else default_bounds()

    def plan(self) -> PipelinePlan:
        return build_default_plan(
            self.k3_variant, self.protocols, self.hidden, self.triaxial_levels, self.fixed
        )

    def as_dict(self) -> dict:
        d = asdict(self)
        d["triaxial_levels"] = list(self.triaxial_levels)
        return d

    def digest(self, *keys: str) -> str:
        """Hash of the listed settings (all when none given), for the manifest."""
        d = self.as_dict()
        d.pop("output")
        if keys:
            d = {k: d[k] for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _sub(cls, value, name):
    if value is None:
        return cls()
    if not isinstance(value, dict):
        raise ConfigError(f"{name} must be a mapping")
    allowed = {f.name for f in fields(cls)}
    extra = set(value) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")
    return cls(**value)


def config_from_dict(raw: dict[str, Any] | None) -> PipelineConfig:
    raw = dict(raw or {})
    allowed = {f.name for f in fields(PipelineConfig)}
    extra = set(raw) - allowed
    if extra:
        raise ConfigError(f"unknown configuration keys: {sorted(extra)}")
    if "bounds" in raw:
        bad = set(raw["bounds"]) - set(PARAM_NAMES)
        if bad:
            raise ConfigError(f"unknown parameters in bounds: {sorted(bad)}")
        raw["bounds"] = {k: [float(x) for x in v] for k, v in raw["bounds"].items()}
    if "triaxial_levels" in raw:
        raw["triaxial_levels"] = tuple(float(x) for x in raw["triaxial_levels"])
    raw["sensitivity"] = _sub(SensitivityConfig, raw.get("sensitivity"), "sensitivity")
    raw["verify"] = _sub(VerifyConfig, raw.get("verify"), "verify")
    try:
        return PipelineConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config file must hold a mapping")
    return config_from_dict(raw)
