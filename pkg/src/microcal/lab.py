"""Virtual laboratory: uniaxial, hydrostatic and triaxial compression of a material point.

Curves are reported with compression positive on both axes.  Measured curves
use the same `ResponseCurve` container and CSV layout (``strain,stress,branch``).
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from concurrent.futures import ProcessPoolExecutor
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from microcal.microplane import PlaneHistory, elastic_moduli, evaluate_step
from microcal.params import ParameterVector

LOAD = "load"
UNLOAD = "unload"

NU_DRIVER_LIMIT = 0.24
TRIAXIAL_LEVELS = (34.5, 68.9, 103.4, 137.9, 172.4)

# (eps_max or p_max, n_steps) defaults per protocol
UNIAXIAL_DEFAULTS = dict(eps_max=0.01, n_steps=100, tol_lat=1e-8)
HYDROSTATIC_DEFAULTS = dict(p_max=450.0, n_steps=120, unload=True, unload_to=0.1)
TRIAXIAL_DEFAULTS = dict(eps_max=0.05, n_steps=150, tol_lat=1e-8)

YIELD_THETA = 0.7


class DriverError(RuntimeError):
    """A virtual test could not be carried out."""


class FeatureError(ValueError):
    """A feature cannot be read off a curve."""


@dataclass(frozen=True)
class ResponseCurve:
    strain: np.ndarray
    stress: np.ndarray
    branch: tuple[str, ...]
    kind: str = "measured"
    params: ParameterVector | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        strain = np.asarray(self.strain, dtype=float)
        stress = np.asarray(self.stress, dtype=float)
        object.__setattr__(self, "strain", strain)
        object.__setattr__(self, "stress", stress)
        object.__setattr__(self, "branch", tuple(self.branch))
        if not (len(strain) == len(stress) == len(self.branch)):
            raise ValueError("strain, stress and branch must have equal length")
        for tag in set(self.branch):
            if tag not in (LOAD, UNLOAD):
                raise ValueError(f"unknown branch tag {tag!r}")
            idx = self.indices(tag)
            if len(idx) < 2:
                raise ValueError(f"branch {tag!r} needs at least 2 points")
            d = np.diff(strain[idx])
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ValueError(f"strains must be strictly monotone within branch {tag!r}")

    def __len__(self) -> int:
        return len(self.strain)

    def indices(self, branch: str) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.branch) if b == branch], dtype=int)

    def part(self, branch: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(branch)
        return self.strain[idx], self.stress[idx]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["strain", "stress", "branch"])
            for e, s, b in zip(self.strain, self.stress, self.branch):
                w.writerow([repr(float(e)), repr(float(s)), b])

    @classmethod
    def from_csv(cls, path, kind: str = "measured") -> "ResponseCurve":
        strain, stress, branch = [], [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["strain", "stress"]:
                raise ValueError(f"{path}: expected header 'strain,stress,branch'")
            for row in reader:
                strain.append(float(row["strain"]))
                stress.append(float(row["stress"]))
                branch.append((row.get("branch") or LOAD).strip())
        return cls(np.array(strain), np.array(stress), tuple(branch), kind=kind)


def _check_params(p: ParameterVector) -> None:
    if p.nu >= NU_DRIVER_LIMIT:
        raise DriverError(f"nu={p.nu} not supported by the drivers (requires nu < {NU_DRIVER_LIMIT})")
    elastic_moduli(p)


def _lateral_solve(axial, lateral0, target, p, h, tol, label):
    """Lateral strain giving lateral stress `target` (tension positive).

    Bracket outward from the previous converged lateral strain, then refine
    with Brent's method, which keeps the solution on the current branch.
    """

    def resid(x):
        sig, _ = evaluate_step(np.diag([axial, x, x]), p, h)
        return sig[1, 1] - target

    f0 = resid(lateral0)
    if abs(f0) <= tol:
        return lateral0
    # lateral stress grows with lateral strain in the elastic range
    direction = -1.0 if f0 > 0 else 1.0
    step = max(abs(axial - lateral0) * 1e-3, p.k1 * 1e-3)
    hi = lateral0 + direction * step
    for _ in range(50):
        f1 = resid(hi)
        if math.copysign(1.0, f1) != math.copysign(1.0, f0):
            break
        step *= 1.6
        hi = lateral0 + direction * step
    else:
        raise DriverError(f"lateral iteration failed to bracket at {label}")
    a, b = sorted((lateral0, hi))
    x = brentq(resid, a, b, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    if abs(resid(x)) > tol:
        raise DriverError(f"lateral iteration did not converge at {label}")
    return x


def run_uniaxial(
    p: ParameterVector,
    eps_max: float = UNIAXIAL_DEFAULTS["eps_max"],
    n_steps: int = UNIAXIAL_DEFAULTS["n_steps"],
    tol_lat: float = UNIAXIAL_DEFAULTS["tol_lat"],
) -> ResponseCurve:
    """Strain-controlled unconfined compression with a stress-free lateral surface."""
    _check_params(p)
    if eps_max <= 0 or n_steps < 20:
        raise ValueError("need eps_max > 0 and n_steps >= 20")
    tol = tol_lat * p.E * p.k1
    h = PlaneHistory.fresh()
    lateral = 0.0
    strain, stress = [0.0], [0.0]
    for i in range(1, n_steps + 1):
        axial = -eps_max * i / n_steps
        lateral = _lateral_solve(axial, lateral, 0.0, p, h, tol, f"axial strain {-axial:.6g}")
        sig, h = evaluate_step(np.diag([axial, lateral, lateral]), p, h)
        strain.append(-axial)
        stress.append(-sig[0, 0])
    return ResponseCurve(np.array(strain), np.array(stress), (LOAD,) * len(strain), "uniaxial", p)


def _pressure(eps_vol: float, p: ParameterVector, h: PlaneHistory) -> tuple[float, PlaneHistory]:
    sig, h_new = evaluate_step(-eps_vol * np.eye(3), p, h)
    return -sig[0, 0], h_new


def hydrostatic_strain(p: ParameterVector, pressure: float, h: PlaneHistory | None = None,
                       eps_cap: float = 0.5) -> float:
    """Axial strain (positive) at which the virgin hydrostatic pressure equals `pressure`."""
    h = h or PlaneHistory.fresh()
    top, _ = _pressure(eps_cap, p, h)
    if top < pressure:
        raise DriverError(
            f"pressure {pressure} MPa not reachable below strain {eps_cap} (max {top:.4g} MPa)"
        )
    return brentq(lambda e: _pressure(e, p, h)[0] - pressure, 0.0, eps_cap,
                  xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)


def run_hydrostatic(
    p: ParameterVector,
    p_max: float = HYDROSTATIC_DEFAULTS["p_max"],
    n_steps: int = HYDROSTATIC_DEFAULTS["n_steps"],
    unload: bool = HYDROSTATIC_DEFAULTS["unload"],
    unload_to: float = HYDROSTATIC_DEFAULTS["unload_to"],
) -> ResponseCurve:
    """Pressure-controlled hydrostatic compression to `p_max`, optionally unloaded.

    Records (axial strain, pressure).  The loading branch holds `n_steps`
    uniform pressure increments merged with `n_steps` geometrically spaced
    strains spanning three decades below the peak strain, which resolves the
    end of the elastic range whatever its position.  Unloading returns to
    ``unload_to * p_max`` in n_steps // 4 decrements.
    """
    _check_params(p)
    if p_max <= 0 or n_steps < 20:
        raise ValueError("need p_max > 0 and n_steps >= 20")
    levels = [0.0] + [hydrostatic_strain(p, p_max * i / n_steps) for i in range(1, n_steps + 1)]
    e_peak = levels[-1]
    load = {e: p_max * i / n_steps for i, e in enumerate(levels)}
    fresh = PlaneHistory.fresh()
    for j in range(n_steps):
        e = e_peak * 10.0 ** (-3.0 * (1.0 - j / n_steps))
        if min(abs(e - x) for x in levels) > 1e-9 * e_peak:
            load[e] = _pressure(e, p, fresh)[0]
    strain = sorted(load)
    stress = [load[e] for e in strain]
    branch = [LOAD] * len(strain)
    _, h = _pressure(e_peak, p, fresh)
    if unload:
        n_un = max(n_steps // 4, 2)
        e_peak = strain[-1]
        for i in range(1, n_un + 1):
            target = p_max * (1.0 - (1.0 - unload_to) * i / n_un)
            e = brentq(lambda x: _pressure(x, p, h)[0] - target, 0.0, e_peak,
                       xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
            strain.append(e)
            stress.append(target)
            branch.append(UNLOAD)
    return ResponseCurve(np.array(strain), np.array(stress), tuple(branch), "hydrostatic", p)


def run_triaxial(
    p: ParameterVector,
    sigma_h: float = TRIAXIAL_LEVELS[0],
    eps_max: float = TRIAXIAL_DEFAULTS["eps_max"],
    n_steps: int = TRIAXIAL_DEFAULTS["n_steps"],
    tol_lat: float = TRIAXIAL_DEFAULTS["tol_lat"],
) -> ResponseCurve:
    """Hydrostatic phase to `sigma_h`, then axial compression at constant lateral pressure.

    Records (excess axial strain, axial stress); the first point is (0, sigma_h).
    """
    _check_params(p)
    if sigma_h <= 0:
        raise ValueError("sigma_h must be positive")
    if eps_max <= 0 or n_steps < 20:
        raise ValueError("need eps_max > 0 and n_steps >= 20")
    e_h = hydrostatic_strain(p, sigma_h)
    _, h = _pressure(e_h, p, PlaneHistory.fresh())
    tol = tol_lat * p.E * p.k1
    lateral = -e_h
    strain, stress = [0.0], [sigma_h]
    for i in range(1, n_steps + 1):
        excess = eps_max * i / n_steps
        axial = -e_h - excess
        lateral = _lateral_solve(axial, lateral, -sigma_h, p, h, tol, f"excess strain {excess:.6g}")
        sig, h = evaluate_step(np.diag([axial, lateral, lateral]), p, h)
        strain.append(excess)
        stress.append(-sig[0, 0])
    curve = ResponseCurve(np.array(strain), np.array(stress), (LOAD,) * len(strain), "triaxial", p)
    curve.meta["sigma_h"] = sigma_h
    return curve


def run_test(kind: str, p: ParameterVector, **protocol) -> ResponseCurve:
    drivers = {"uniaxial": run_uniaxial, "hydrostatic": run_hydrostatic, "triaxial": run_triaxial}
    try:
        driver = drivers[kind]
    except KeyError:
        raise ValueError(f"unknown test kind {kind!r}") from None
    return driver(p, **protocol)


def _simulate_one(args):
    kind, p, protocol = args
    try:
        return run_test(kind, p, **protocol), None
    except (DriverError, ValueError) as exc:
        return None, str(exc)


def simulate_bundle(
    kind: str, params: Sequence[ParameterVector], protocol: dict | None = None, jobs: int = 1
) -> tuple[list[ResponseCurve | None], list[str | None]]:
    """Run one test per parameter vector; failures are returned, not raised.

    Results come back in input order whatever the worker count, and each run is
    pure, so the output does not depend on `jobs`.
    """
    tasks = [(kind, p, dict(protocol or {})) for p in params]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_simulate_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_simulate_one(t) for t in tasks]
    return [r[0] for r in results], [r[1] for r in results]


# -- features -----------------------------------------------------------------

_FEATURE_RE = re.compile(r"^(sigma|eps)@([0-9.eE+-]+)(?::(load|unload))?$")


@dataclass(frozen=True)
class FeatureSpec:
    """One scalar read off a curve.

    kind is one of stress_at_strain, strain_at_stress, peak_strain,
    peak_stress, yield_strain.  String form: ``sigma@0.001``,
    ``eps@85.5:unload``, ``eps_peak``, ``sigma_peak``, ``eps_yield``.
    """

    kind: str
    target: float | None = None
    branch: str = LOAD

    def __post_init__(self):
        if self.kind in ("stress_at_strain", "strain_at_stress"):
            if self.target is None or not self.target > 0:
                raise ValueError(f"{self.kind} needs a positive target")
        elif self.kind not in ("peak_strain", "peak_stress", "yield_strain"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.branch not in (LOAD, UNLOAD):
            raise ValueError(f"unknown branch {self.branch!r}")

    @classmethod
    def parse(cls, text: str) -> "FeatureSpec":
        text = text.strip()
        simple = {"eps_peak": "peak_strain", "sigma_peak": "peak_stress", "eps_yield": "yield_strain"}
        if text in simple:
            return cls(simple[text])
        m = _FEATURE_RE.match(text)
        if not m:
            raise ValueError(f"cannot parse feature {text!r}")
        what, target, branch = m.groups()
        kind = "stress_at_strain" if what == "sigma" else "strain_at_stress"
        return cls(kind, float(target), branch or LOAD)

    def __str__(self) -> str:
        names = {"peak_strain": "eps_peak", "peak_stress": "sigma_peak", "yield_strain": "eps_yield"}
        if self.kind in names:
            return names[self.kind]
        head = "sigma" if self.kind == "stress_at_strain" else "eps"
        tail = "" if self.branch == LOAD else f":{self.branch}"
        return f"{head}@{self.target:g}{tail}"


def _peak(c: ResponseCurve) -> tuple[float, float]:
    i = int(np.argmax(c.stress))
    if i == 0 or i == len(c) - 1:
        raise FeatureError("curve has no interior peak")
    same = c.branch[i - 1] == c.branch[i] == c.branch[i + 1]
    if not same:
        return float(c.strain[i]), float(c.stress[i])
    # vertex of the parabola through the maximum and its neighbours
    x = c.strain[i - 1:i + 2]
    y = c.stress[i - 1:i + 2]
    a, b, c0 = np.polyfit(x - x[1], y, 2)
    if a >= 0:
        return float(x[1]), float(y[1])
    dx = float(np.clip(-b / (2 * a), x[0] - x[1], x[2] - x[1]))
    return float(x[1] + dx), float(c0 + b * dx + a * dx * dx)


def _crossing(xs: np.ndarray, ys: np.ndarray, level: float) -> float | None:
    """First abscissa at which the polyline (xs, ys) attains `level`."""
    d = ys - level
    for k in range(len(xs) - 1):
        if d[k] == 0.0:
            return float(xs[k])
        if d[k] * d[k + 1] < 0.0:
            t = d[k] / (d[k] - d[k + 1])
            return float(xs[k] + t * (xs[k + 1] - xs[k]))
    if d[-1] == 0.0:
        return float(xs[-1])
    return None


def yield_strain(c: ResponseCurve, theta: float = YIELD_THETA) -> float:
    """Strain at which the secant stiffness of the loading branch drops to theta * K0.

    K0 is the stiffness of the first segment; the secant is taken from the
    first point of the branch and the crossing is located by linear
    interpolation, which keeps the value stable under step refinement.
    """
    e, s = c.part(LOAD)
    if len(e) < 3:
        raise FeatureError("loading branch too short for a yield strain")
    k0 = (s[1] - s[0]) / (e[1] - e[0])
    # sign change of  s - s0 - theta k0 (e - e0)
    value = _crossing(e[1:], s[1:] - s[0] - theta * k0 * (e[1:] - e[0]), 0.0)
    if value is None:
        raise FeatureError("no yield point on the loading branch")
    return value


def extract_feature(c: ResponseCurve, f: FeatureSpec | str) -> float:
    if isinstance(f, str):
        f = FeatureSpec.parse(f)
    if f.kind == "peak_strain":
        return _peak(c)[0]
    if f.kind == "peak_stress":
        return _peak(c)[1]
    if f.kind == "yield_strain":
        return yield_strain(c)
    if f.branch not in c.branch:
        raise FeatureError(f"curve has no {f.branch} branch")
    e, s = c.part(f.branch)
    if f.kind == "stress_at_strain":
        order = np.argsort(e)
        e, s = e[order], s[order]
        if not e[0] <= f.target <= e[-1]:
            raise FeatureError(f"strain {f.target:g} outside the curve range [{e[0]:g}, {e[-1]:g}]")
        return float(np.interp(f.target, e, s))
    value = _crossing(e, s, f.target)
    if value is None:
        raise FeatureError(f"stress {f.target:g} not reached on the {f.branch} branch")
    return value


def extract_features(c: ResponseCurve, specs: Sequence[FeatureSpec | str]) -> np.ndarray:
    return np.array([extract_feature(c, f) for f in specs])


def save_curves(curves: Sequence[ResponseCurve], directory, prefix: str = "sample") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, c in enumerate(curves):
        path = directory / f"{prefix}_{i:03d}.csv"
        c.to_csv(path)
        paths.append(path)
    return paths
