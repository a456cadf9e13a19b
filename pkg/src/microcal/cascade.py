"""Sequential identification with cascaded inverse networks.

The plan runs E -> k1 on a shared uniaxial bundle, then c20 on a uniaxial
bundle where only c20 varies, then the mutually coupled k3/k4 pair on a
hydrostatic bundle, and finally k2 on the lowest-confinement triaxial test.
Later bundles hold the earlier parameters fixed, either at known values or at
the cascade's own predictions.
"""
from __future__ import annotations

import csv
import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from microcal.doe import DesignSet, random_sample, training_design
from microcal.grade import DESK_BUDGET, GradeConfig, OptimizeResult, train_ann
from microcal.lab import (
    LOAD,
    TRIAXIAL_LEVELS,
    FeatureError,
    ResponseCurve,
    extract_feature,
    run_test,
    simulate_bundle,
)
from microcal.neural import AnnModel, Dataset, Topology
from microcal.params import PARAM_NAMES, Bounds, FixedPolicy, ParameterVector, midpoint_fill

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.2
COUPLED_GRID = 400
COUPLED_TOL = 1e-9        # relative to the k3 interval


class StageDataError(RuntimeError):
    """Too many samples of a bundle could not be simulated or featurized."""


class CouplingError(RuntimeError):
    """The two coupled network relations do not intersect inside the bounds."""


class CoverageError(ValueError):
    """Simulated curve does not span the measured abscissa."""


# -- plan ---------------------------------------------------------------------


@dataclass(frozen=True)
class StageSpec:
    """One inverse network.

    `inputs` lists the network inputs in order; entries that are parameter
    names are upstream values, everything else is a feature string.
    """

    target: str
    group: str
    inputs: tuple[str, ...]
    n_hidden: int
    coupled_with: str | None = None

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(x for x in self.inputs if x not in PARAM_NAMES)

    @property
    def upstream(self) -> tuple[str, ...]:
        return tuple(x for x in self.inputs if x in PARAM_NAMES)

    @property
    def topology(self) -> Topology:
        return Topology(len(self.inputs), self.n_hidden)


@dataclass(frozen=True)
class GroupSpec:
    """A simulated bundle shared by one or more stages."""

    name: str
    kind: str
    varied: tuple[str, ...]
    protocol: tuple = ()          # sorted (key, value) pairs for the driver

    @property
    def protocol_dict(self) -> dict:
        return dict(self.protocol)


@dataclass(frozen=True)
class PipelinePlan:
    groups: tuple[GroupSpec, ...]
    stages: tuple[StageSpec, ...]
    fixed: tuple = (("nu", 0.2),)
    triaxial_levels: tuple[float, ...] = TRIAXIAL_LEVELS

    def __post_init__(self):
        names = [g.name for g in self.groups]
        for s in self.stages:
            if s.group not in names:
                raise ValueError(f"stage {s.target} refers to unknown group {s.group!r}")
        check_order(self)

    @property
    def fixed_policy(self) -> FixedPolicy:
        return FixedPolicy(dict(self.fixed))

    def stage(self, target: str) -> StageSpec:
        for s in self.stages:
            if s.target == target:
                return s
        raise KeyError(target)

    def group(self, name: str) -> GroupSpec:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def stages_of(self, group: str) -> list[StageSpec]:
        return [s for s in self.stages if s.group == group]


def check_order(plan: PipelinePlan) -> None:
    """A stage may read only predictions of earlier stages, or of its declared partner."""
    done: set[str] = set()
    for s in plan.stages:
        for up in s.upstream:
            if up not in done and up != s.coupled_with:
                raise ValueError(f"stage {s.target} reads {up} before it is predicted")
        done.add(s.target)


def build_default_plan(
    k3_variant: str = "five",
    protocols: Mapping[str, Mapping] | None = None,
    hidden: Mapping[str, int] | None = None,
    triaxial_levels: Sequence[float] = TRIAXIAL_LEVELS,
    fixed: Mapping[str, float] | None = None,
) -> PipelinePlan:
    """Stages, inputs and hidden sizes of the reference identification project.

    `protocols` overrides driver settings per test kind, `hidden` overrides
    hidden-layer sizes per target.  The triaxial stage uses the lowest level.
    """
    if k3_variant == "five":
        k3_inputs = ("k4", "eps_yield", "eps@137", "eps@308", "eps_peak")
    elif k3_variant == "four":
        k3_inputs = ("k4", "eps_yield", "eps@137", "eps_peak")
    else:
        raise ValueError("k3_variant is 'five' or 'four'")
    protocols = {k: dict(v) for k, v in (protocols or {}).items()}
    levels = tuple(sorted(float(x) for x in triaxial_levels))
    protocols.setdefault("triaxial", {})["sigma_h"] = levels[0]

    def proto(kind):
        return tuple(sorted(protocols.get(kind, {}).items()))

    groups = (
        GroupSpec("uniaxial", "uniaxial", ("E", "k1", "k2", "k3", "k4", "c20"), proto("uniaxial")),
        GroupSpec("c20", "uniaxial", ("c20",), proto("uniaxial")),
        GroupSpec("hydrostatic", "hydrostatic", ("k3", "k4"), proto("hydrostatic")),
        GroupSpec("triaxial", "triaxial", ("k2",), proto("triaxial")),
    )
    hidden = dict(hidden or {})
    table = (
        ("E", "uniaxial", ("sigma@0.0005", "sigma@0.001", "sigma@0.0015"), 2, None),
        ("k1", "uniaxial", ("sigma@0.0025", "sigma@0.009", "eps_peak", "sigma_peak", "E"), 3, None),
        ("c20", "c20", ("sigma@0.003", "sigma@0.004", "sigma@0.006", "sigma@0.008"), 2, None),
        ("k4", "hydrostatic", ("k3", "eps_peak", "eps@85.5:unload"), 2, "k3"),
        ("k3", "hydrostatic", k3_inputs, 2, "k4"),
        ("k2", "triaxial", ("sigma_peak", "sigma@0.0128", "sigma@0.0308"), 2, None),
    )
    unknown = set(hidden) - {row[0] for row in table}
    if unknown:
        raise ValueError(f"hidden sizes given for unknown stages {sorted(unknown)}")
    stages = tuple(
        StageSpec(t, g, inputs, int(hidden.get(t, nh)), partner) for t, g, inputs, nh, partner in table
    )
    fixed = tuple(sorted((fixed if fixed is not None else {"nu": 0.2}).items()))
    return PipelinePlan(groups, stages, fixed, levels)


def derive_seed(seed: int, tag: str) -> int:
    """Stable per-purpose seed, independent of Python's hash randomization."""
    return (int(seed) * 1_000_003 + zlib.crc32(tag.encode())) % 2**32


# -- bundles --------------------------------------------------------------------


@dataclass
class GroupData:
    """Designs, curves and features of one bundle; failed samples carry nan features."""

    group: GroupSpec
    context: dict                 # values of every parameter not varied
    designs: dict                 # split -> DesignSet
    params: dict                  # split -> (n, 7) physical parameters
    curves: dict                  # split -> list[ResponseCurve | None]
    features: tuple[str, ...]
    values: dict                  # split -> (n, n_features)
    failures: dict                # split -> list[(index, message)]

    def ok(self, split: str) -> np.ndarray:
        return np.isfinite(self.values[split]).all(axis=1)

    def n_failed(self) -> int:
        return sum(len(v) for v in self.failures.values())

    def n_total(self) -> int:
        return sum(len(v) for v in self.params.values())


def group_features(plan: PipelinePlan, group: str) -> tuple[str, ...]:
    seen: list[str] = []
    for s in plan.stages_of(group):
        for f in s.features:
            if f not in seen:
                seen.append(f)
    return tuple(seen)


def _physical(design: DesignSet, varied: Sequence[str], context: Mapping[str, float], bounds: Bounds):
    rows = []
    for u in design.matrix:
        values = dict(context)
        for name, x in zip(varied, u):
            lo, hi = bounds[name]
            values[name] = lo + x * (hi - lo)
        rows.append([values[n] for n in PARAM_NAMES])
    return np.array(rows)


def stage_context(plan: PipelinePlan, bounds: Bounds, known: Mapping[str, float] | None = None) -> dict:
    """Values for parameters that are not varied: plan fixes, then `known`, then midpoints."""
    fixed = dict(plan.fixed_policy)
    fixed.update({k: float(v) for k, v in (known or {}).items() if k not in fixed})
    return midpoint_fill(fixed, bounds).as_dict()


def featurize(curves, features: Sequence[str]) -> tuple[np.ndarray, list]:
    values = np.full((len(curves), len(features)), np.nan)
    problems = []
    for i, c in enumerate(curves):
        if c is None:
            continue
        try:
            values[i] = [extract_feature(c, f) for f in features]
        except FeatureError as exc:
            problems.append((i, f"feature extraction: {exc}"))
    return values, problems


def group_designs(
    plan: PipelinePlan, group: str, n_train: int = 60, n_test: int = 10, seed: int = 0, anneal_budget: int = 20000
) -> dict:
    """Training (LHS + annealing) and testing (random) designs of a bundle, keyed by split."""
    d = len(plan.group(group).varied)
    return {
        "train": training_design(n_train, d, derive_seed(seed, f"{group}/train"), anneal_budget),
        "test": random_sample(n_test, d, derive_seed(seed, f"{group}/test")),
    }


def simulate_group(
    plan: PipelinePlan,
    group: str,
    bounds: Bounds,
    context: Mapping[str, float],
    designs: Mapping[str, DesignSet],
    jobs: int = 1,
) -> GroupData:
    """Simulate every design row and extract the group features.

    Samples whose simulation or feature extraction fails are kept with nan
    features and listed in `failures`; more than 20 % failures is an error.
    """
    g = plan.group(group)
    feats = group_features(plan, group)
    data = GroupData(g, dict(context), dict(designs), {}, {}, feats, {}, {})
    for split, D in designs.items():
        P = _physical(D, g.varied, context, bounds)
        curves, errors = simulate_bundle(
            g.kind, [ParameterVector.from_array(row) for row in P], g.protocol_dict, jobs
        )
        values, problems = featurize(curves, feats)
        data.params[split] = P
        data.curves[split] = curves
        data.values[split] = values
        data.failures[split] = [(i, e) for i, e in enumerate(errors) if e] + problems
    for split, fails in data.failures.items():
        for i, msg in fails:
            log.warning("group %s, %s sample %d excluded: %s", group, split, i, msg)
    n_bad = data.n_failed()
    if n_bad > MAX_FAILURE_FRACTION * data.n_total():
        raise StageDataError(
            f"group {group}: {n_bad} of {data.n_total()} samples failed; the design is likely ill-posed"
        )
    return data


def generate_group_data(
    plan: PipelinePlan,
    group: str,
    bounds: Bounds,
    context: Mapping[str, float],
    n_train: int = 60,
    n_test: int = 10,
    seed: int = 0,
    jobs: int = 1,
    anneal_budget: int = 20000,
) -> GroupData:
    """Designs and simulations of a bundle in one call."""
    designs = group_designs(plan, group, n_train, n_test, seed, anneal_budget)
    return simulate_group(plan, group, bounds, context, designs, jobs)


def stage_dataset(stage: StageSpec, data: GroupData, split: str) -> Dataset:
    """Network inputs (features and true upstream values) and targets for the usable rows."""
    ok = data.ok(split)
    cols = []
    for name in stage.inputs:
        if name in PARAM_NAMES:
            cols.append(data.params[split][:, PARAM_NAMES.index(name)])
        else:
            cols.append(data.values[split][:, data.features.index(name)])
    X = np.column_stack(cols)[ok]
    y = data.params[split][ok, PARAM_NAMES.index(stage.target)]
    return Dataset(X, y)


# -- training and verification ------------------------------------------------------


@dataclass(frozen=True)
class ErrorReport:
    """Absolute prediction errors, summarized in percent of the admissible interval."""

    interval: tuple[float, float]
    train_errors: np.ndarray
    test_errors: np.ndarray

    def _pct(self, e: np.ndarray, how) -> float:
        width = self.interval[1] - self.interval[0]
        return float(how(e) / width * 100.0) if len(e) else float("nan")

    @property
    def train_max(self) -> float:
        return self._pct(self.train_errors, np.max)

    @property
    def train_avg(self) -> float:
        return self._pct(self.train_errors, np.mean)

    @property
    def test_max(self) -> float:
        return self._pct(self.test_errors, np.max)

    @property
    def test_avg(self) -> float:
        return self._pct(self.test_errors, np.mean)

    def summary(self) -> dict:
        return {
            "train_max": self.train_max,
            "train_avg": self.train_avg,
            "test_max": self.test_max,
            "test_avg": self.test_avg,
        }


@dataclass
class TrainedStage:
    spec: StageSpec
    model: AnnModel
    report: ErrorReport
    result: OptimizeResult | None = None
    seed: int = 0
    budget: int = 0


def error_report(model: AnnModel, train: Dataset, test: Dataset, interval) -> ErrorReport:
    return ErrorReport(
        tuple(map(float, interval)),
        np.abs(model.predict(train.X) - train.y),
        np.abs(model.predict(test.X) - test.y),
    )


def train_stage(
    stage: StageSpec,
    data: GroupData,
    bounds: Bounds,
    budget: int = DESK_BUDGET,
    seed: int = 0,
    config: GradeConfig | None = None,
) -> TrainedStage:
    train = stage_dataset(stage, data, "train")
    test = stage_dataset(stage, data, "test")
    s = derive_seed(seed, f"train/{stage.target}")
    model, res = train_ann(
        train, stage.topology, bounds[stage.target], budget, s, config, stage.target, stage.inputs
    )
    return TrainedStage(stage, model, error_report(model, train, test, bounds[stage.target]), res, s, budget)


def stage_inputs(stage: StageSpec, features: Mapping[str, float], upstream: Mapping[str, float]) -> np.ndarray:
    return np.array([upstream[x] if x in PARAM_NAMES else features[x] for x in stage.inputs], dtype=float)


# -- coupled k3/k4 ------------------------------------------------------------------


@dataclass
class CoupledSolution:
    k3: float
    k4: float
    roots: list                  # every (k3, k4) intersection found
    grid: np.ndarray             # k3 scan
    k4_of_k3: np.ndarray         # first relation along the scan
    k3_of_k4: np.ndarray         # second relation evaluated at k4_of_k3
    residual_k3: float
    residual_k4: float

    def relation_rows(self):
        """(k3, net_k4(k3), net_k3(net_k4(k3))) rows for plotting both relations."""
        return np.column_stack([self.grid, self.k4_of_k3, self.k3_of_k4])


def solve_coupled_k3k4(
    net_k4: AnnModel,
    net_k3: AnnModel,
    features: Mapping[str, float],
    bounds: Bounds,
    n_grid: int = COUPLED_GRID,
    tol: float = COUPLED_TOL,
    choose: Callable[[float, float], float] | None = None,
) -> CoupledSolution:
    """Intersect k4 = net_k4(k3, ...) with k3 = net_k3(k4, ...).

    Scans k3 over its interval, brackets every sign change of
    r(k3) = net_k3(net_k4(k3)) - k3 and bisects each bracket.  With several
    roots, `choose(k3, k4)` (lower is better, e.g. a re-simulation error)
    picks one; otherwise the first root is returned.
    """
    lo, hi = bounds["k3"]
    width3 = hi - lo
    width4 = bounds["k4"][1] - bounds["k4"][0]
    idx4 = net_k4.inputs.index("k3") if "k3" in net_k4.inputs else 0
    idx3 = net_k3.inputs.index("k4") if "k4" in net_k3.inputs else 0

    def rows(net: AnnModel, idx: int, values: np.ndarray) -> np.ndarray:
        base = np.array([features.get(name, np.nan) for name in net.inputs], dtype=float)
        X = np.tile(base, (len(values), 1))
        X[:, idx] = values
        return X

    def k4_of(k3):
        return net_k4.predict(rows(net_k4, idx4, np.atleast_1d(k3)))

    def k3_of(k4):
        return net_k3.predict(rows(net_k3, idx3, np.atleast_1d(k4)))

    def resid(k3):
        return k3_of(k4_of(k3)) - np.atleast_1d(k3)

    grid = np.linspace(lo, hi, n_grid)
    k4g = k4_of(grid)
    k3g = k3_of(k4g)
    r = k3g - grid
    roots = []
    for i in range(n_grid - 1):
        if r[i] == 0.0:
            roots.append(float(grid[i]))
        elif r[i] * r[i + 1] < 0.0:
            a, b, fa = grid[i], grid[i + 1], r[i]
            while True:
                m = 0.5 * (a + b)
                fm = float(resid(m)[0])
                if abs(fm) < tol * width3 or b - a < 1e-15 * width3:
                    break
                if fa * fm < 0.0:
                    b = m
                else:
                    a, fa = m, fm
            roots.append(float(m))
    if r[-1] == 0.0:
        roots.append(float(grid[-1]))
    if not roots:
        raise CouplingError(
            f"no intersection of the k3/k4 relations in [{lo:g}, {hi:g}]; "
            f"residual ranges over [{r.min():.4g}, {r.max():.4g}]"
        )
    pairs = [(k3, float(k4_of(k3)[0])) for k3 in roots]
    if len(pairs) > 1 and choose is not None:
        k3, k4 = min(pairs, key=lambda kk: choose(*kk))
    else:
        k3, k4 = pairs[0]
    return CoupledSolution(
        k3=k3,
        k4=k4,
        roots=pairs,
        grid=grid,
        k4_of_k3=k4g,
        k3_of_k4=k3g,
        residual_k3=float(abs(resid(k3)[0])) / width3,
        residual_k4=float(abs(k4_of(k3)[0] - k4)) / width4,
    )


# -- curve error ------------------------------------------------------------------


def curve_error(measured: ResponseCurve, simulated: ResponseCurve, axis: str = "stress") -> float:
    """sqrt(sum (v - v~)^2) over the measured points, branch by branch.

    With axis="stress" the ordinate is stress at the measured strains; with
    axis="strain" it is strain at the measured stresses (hydrostatic tests).
    """
    if axis not in ("stress", "strain"):
        raise ValueError("axis is 'stress' or 'strain'")
    total = 0.0
    for branch in dict.fromkeys(measured.branch):
        me, ms = measured.part(branch)
        if branch not in simulated.branch:
            raise CoverageError(f"simulated curve has no {branch} branch")
        se, ss = simulated.part(branch)
        if axis == "stress":
            x_m, v_m, x_s, v_s = me, ms, se, ss
        else:
            x_m, v_m, x_s, v_s = ms, me, ss, se
        order = np.argsort(x_s, kind="stable")
        x_s, v_s = x_s[order], v_s[order]
        tol = 1e-12 * max(abs(x_s[-1]), abs(x_s[0]), 1.0)
        if x_m.min() < x_s[0] - tol or x_m.max() > x_s[-1] + tol:
            raise CoverageError(
                f"{branch} branch: measured abscissa range "
                f"[{x_m.min():.6g}, {x_m.max():.6g}] not covered by simulation [{x_s[0]:.6g}, {x_s[-1]:.6g}]"
            )
        total += float(np.sum((v_m - np.interp(x_m, x_s, v_s)) ** 2))
    return float(np.sqrt(total))


CURVE_AXIS = {"uniaxial": "stress", "hydrostatic": "strain", "triaxial": "stress"}


def verify_resimulation(
    stage: StageSpec,
    trained: TrainedStage,
    data: GroupData,
    bounds: Bounds,
    jobs: int = 1,
) -> list[dict]:
    """Re-simulate test samples with the target replaced by its prediction.

    Returns one row per usable test sample with the prediction and the curve
    error against the original test curve.
    """
    split = "test"
    ok = np.flatnonzero(data.ok(split))
    ds = stage_dataset(stage, data, split)
    pred = trained.model.predict(ds.X)
    j = PARAM_NAMES.index(stage.target)
    params = []
    for row, value in zip(data.params[split][ok], pred):
        row = row.copy()
        row[j] = value
        params.append(ParameterVector.from_array(row))
    curves, errors = simulate_bundle(data.group.kind, params, data.group.protocol_dict, jobs)
    out = []
    for i, value, c, err in zip(ok, pred, curves, errors):
        rec = {"sample": int(i), "true": float(data.params[split][i, j]), "predicted": float(value)}
        if c is None:
            rec["curve_error"] = float("nan")
            rec["failure"] = err
        else:
            rec["curve_error"] = curve_error(data.curves[split][i], c, CURVE_AXIS[data.group.kind])
        out.append(rec)
    return out


# -- identification ---------------------------------------------------------------


@dataclass
class Identification:
    params: ParameterVector
    predictions: dict             # target -> value
    extrapolated: dict            # target -> bool
    warnings: list
    coupled: CoupledSolution | None = None
    stages: dict = field(default_factory=dict)      # target -> TrainedStage used
    curve_errors: dict = field(default_factory=dict)   # test -> error at identified params
    midpoint_errors: dict = field(default_factory=dict)
    resimulated: dict = field(default_factory=dict)    # test -> ResponseCurve


@dataclass(frozen=True)
class IdentifyConfig:
    n_train: int = 60
    n_test: int = 10
    seed: int = 0
    budget: int = DESK_BUDGET
    jobs: int = 1
    anneal_budget: int = 20000
    grade: GradeConfig | None = None


def _measured_features(curve: ResponseCurve | None, stages: Sequence[StageSpec]):
    if curve is None:
        raise FeatureError("measured curve missing")
    names = []
    for s in stages:
        names.extend(f for f in s.features if f not in names)
    return {f: extract_feature(curve, f) for f in names}


def identify(
    plan: PipelinePlan,
    measured: Mapping[str, ResponseCurve | None],
    bounds: Bounds,
    base: Mapping[str, TrainedStage],
    config: IdentifyConfig = IdentifyConfig(),
    downstream: Mapping[str, TrainedStage] | None = None,
) -> Identification:
    """Run the cascade on measured curves keyed by test kind.

    `base` holds the trained stages of the shared uniaxial bundle (E and k1).
    The remaining stages are trained on bundles that hold the already
    identified parameters fixed, unless `downstream` supplies trained stages.
    A stage whose measured curve or features are missing falls back to the
    interval midpoint and the cascade continues.
    """
    fixed = dict(plan.fixed_policy)
    known: dict[str, float] = dict(fixed)
    preds: dict[str, float] = {}
    extrap: dict[str, bool] = {}
    warnings: list[str] = []
    used: dict[str, TrainedStage] = {}
    coupled = None
    downstream = dict(downstream or {})

    def fallback(targets, reason):
        for t in targets:
            known[t] = bounds.mid(t)
            warnings.append(f"{t}: {reason}; using interval midpoint {known[t]:g}")
            log.warning(warnings[-1])

    def trained_for(stage: StageSpec, cache: dict) -> TrainedStage:
        if stage.target in base:
            return base[stage.target]
        if stage.target in downstream:
            return downstream[stage.target]
        if stage.group not in cache:
            ctx = stage_context(plan, bounds, known)
            cache[stage.group] = generate_group_data(
                plan, stage.group, bounds, ctx, config.n_train, config.n_test,
                derive_seed(config.seed, f"identify/{stage.group}"), config.jobs, config.anneal_budget,
            )
        return train_stage(stage, cache[stage.group], bounds, config.budget, config.seed, config.grade)

    bundles: dict[str, GroupData] = {}
    done: set[str] = set()
    for stage in plan.stages:
        if stage.target in done:
            continue
        group = plan.group(stage.group)
        partner = plan.stage(stage.coupled_with) if stage.coupled_with else None
        members = [stage] + ([partner] if partner else [])
        try:
            feats = _measured_features(measured.get(group.kind), members)
        except FeatureError as exc:
            fallback([m.target for m in members], f"{group.kind} features unavailable ({exc})")
            done.update(m.target for m in members)
            continue
        missing_up = [u for m in members for u in m.upstream
                      if u not in known and u not in [x.target for x in members]]
        if missing_up:
            fallback([m.target for m in members], f"upstream {missing_up} unknown")
            done.update(m.target for m in members)
            continue
        trained = {m.target: trained_for(m, bundles) for m in members}
        used.update(trained)
        if partner is None:
            x = stage_inputs(stage, feats, known)
            value = float(trained[stage.target].model.predict(x)[0])
            extrap[stage.target] = bool(trained[stage.target].model.extrapolated(x)[0])
            preds[stage.target] = known[stage.target] = value
        else:
            nets = {m.target: trained[m.target].model for m in members}
            ctx_for_choice = dict(known)

            def choose(k3, k4, _ctx=ctx_for_choice, _kind=group.kind, _proto=group.protocol_dict):
                p = midpoint_fill({**_ctx, "k3": k3, "k4": k4}, bounds)
                try:
                    return curve_error(measured[_kind], run_test(_kind, p, **_proto), CURVE_AXIS[_kind])
                except Exception:
                    return np.inf

            try:
                coupled = solve_coupled_k3k4(nets["k4"], nets["k3"], {**feats, **known}, bounds, choose=choose)
            except CouplingError as exc:
                fallback(["k3", "k4"], str(exc))
            else:
                preds["k3"] = known["k3"] = coupled.k3
                preds["k4"] = known["k4"] = coupled.k4
                for t in ("k3", "k4"):
                    x = stage_inputs(plan.stage(t), feats, known)
                    extrap[t] = bool(nets[t].extrapolated(x)[0])
        done.update(m.target for m in members)

    for name in PARAM_NAMES:
        if name not in known:
            known[name] = bounds.mid(name)
    params = ParameterVector(**{n: known[n] for n in PARAM_NAMES})
    result = Identification(params, preds, extrap, warnings, coupled, used)
    mid = midpoint_fill(fixed, bounds)
    for g in plan.groups:
        c = measured.get(g.kind)
        if c is None or g.kind in result.curve_errors:
            continue
        for label, p, store in (("identified", params, result.curve_errors), ("midpoint", mid, result.midpoint_errors)):
            try:
                sim = run_test(g.kind, p, **g.protocol_dict)
                store[g.kind] = curve_error(c, sim, CURVE_AXIS[g.kind])
                if label == "identified":
                    result.resimulated[g.kind] = sim
            except Exception as exc:  # a failed re-simulation is reported, not fatal
                store[g.kind] = float("nan")
                result.warnings.append(f"{label} re-simulation of {g.kind} failed: {exc}")
    return result


def random_truths(plan: PipelinePlan, bounds: Bounds, n: int, seed: int) -> list[ParameterVector]:
    """Uniform random parameter vectors over the free parameters, plan fixes applied."""
    rng = np.random.default_rng([seed, 7])
    fixed = plan.fixed_policy
    out = []
    for u in rng.random((n, len(PARAM_NAMES))):
        values = {name: fixed.get(name, lo + x * (hi - lo))
                  for name, x, (lo, hi) in zip(PARAM_NAMES, u, bounds.intervals)}
        out.append(ParameterVector(**values))
    return out


def synthetic_measurements(plan: PipelinePlan, truth: ParameterVector) -> dict:
    """Simulated "measured" curves of every test kind in the plan."""
    return {g.kind: run_test(g.kind, truth, **g.protocol_dict) for g in plan.groups}


def recovery_errors(ident: Identification, truth: ParameterVector, bounds: Bounds) -> dict:
    """|identified - true| in percent of each interval."""
    t, p = truth.as_dict(), ident.params.as_dict()
    return {n: abs(p[n] - t[n]) / (bounds[n][1] - bounds[n][0]) * 100.0 for n in PARAM_NAMES}


# -- persistence ------------------------------------------------------------------


def save_group_data(data: GroupData, directory, columns: Sequence[str] | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split, D in data.designs.items():
        D.to_csv(directory / f"design_{split}.csv", columns or data.group.varied)
        with open(directory / f"features_{split}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*PARAM_NAMES, *data.features])
            for prow, frow in zip(data.params[split], data.values[split]):
                w.writerow([repr(float(v)) for v in (*prow, *frow)])
        cdir = directory / f"curves_{split}"
        cdir.mkdir(exist_ok=True)
        for i, c in enumerate(data.curves[split]):
            if c is not None:
                c.to_csv(cdir / f"sample_{i:03d}.csv")
    (directory / "failures.json").write_text(
        json.dumps({k: [[i, m] for i, m in v] for k, v in data.failures.items()}, indent=1) + "\n"
    )
    (directory / "context.json").write_text(json.dumps(data.context, indent=1, sort_keys=True) + "\n")


def load_group_data(plan: PipelinePlan, group: str, directory) -> GroupData:
    """Inverse of `save_group_data`."""
    directory = Path(directory)
    g = plan.group(group)
    feats = group_features(plan, group)
    context = json.loads((directory / "context.json").read_text())
    failures = {k: [(int(i), m) for i, m in v]
                for k, v in json.loads((directory / "failures.json").read_text()).items()}
    data = GroupData(g, context, {}, {}, {}, feats, {}, failures)
    for split in ("train", "test"):
        data.designs[split] = DesignSet.from_csv(directory / f"design_{split}.csv")
        with open(directory / f"features_{split}.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
        if tuple(header[len(PARAM_NAMES):]) != feats:
            raise ValueError(f"{directory}: feature columns do not match the plan")
        data.params[split] = body[:, :len(PARAM_NAMES)]
        data.values[split] = body[:, len(PARAM_NAMES):]
        curves = []
        for i in range(len(body)):
            path = directory / f"curves_{split}" / f"sample_{i:03d}.csv"
            curves.append(ResponseCurve.from_csv(path, g.kind) if path.exists() else None)
        data.curves[split] = curves
    return data


def write_error_reports(stages: Sequence[TrainedStage], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target", "topology", "inputs", "seed", "budget",
                    "train_max_pct", "train_avg_pct", "test_max_pct", "test_avg_pct"])
        for t in stages:
            r = t.report
            w.writerow([t.spec.target, str(t.spec.topology), " ".join(t.spec.inputs), t.seed, t.budget,
                        repr(r.train_max), repr(r.train_avg), repr(r.test_max), repr(r.test_avg)])
