"""Pearson-correlation sensitivity screens over simulated curve bundles."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from microcal.doe import DesignSet, training_design
from microcal.lab import (
    HYDROSTATIC_DEFAULTS,
    LOAD,
    TRIAXIAL_DEFAULTS,
    UNIAXIAL_DEFAULTS,
    FeatureError,
    ResponseCurve,
    extract_feature,
    simulate_bundle,
)
from microcal.params import PARAM_NAMES, Bounds

NO_SIGNAL = float("nan")

_DEFAULTS = {"uniaxial": UNIAXIAL_DEFAULTS, "hydrostatic": HYDROSTATIC_DEFAULTS, "triaxial": TRIAXIAL_DEFAULTS}


class SensitivityError(ValueError):
    pass


def pearson(x, y) -> float:
    """Product-moment correlation of two samples.

    Returns `NO_SIGNAL` (nan) when either sample is constant, since the
    coefficient is undefined there. Use `rank_value` to treat it as zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise SensitivityError("pearson needs two 1-D samples of equal length")
    if len(x) < 3:
        raise SensitivityError("pearson needs at least 3 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return NO_SIGNAL
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def is_no_signal(r: float) -> bool:
    return bool(np.isnan(r))


def rank_value(r) -> np.ndarray:
    """|r| with no-signal entries counted as zero."""
    return np.nan_to_num(np.abs(np.asarray(r, dtype=float)), nan=0.0)


def correlation_table(X, Y) -> np.ndarray:
    """r[j, k] between column j of X (parameters) and column k of Y (responses).

    Rows of Y containing nan are dropped pairwise per response column.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    out = np.full((X.shape[1], Y.shape[1]), NO_SIGNAL)
    for k in range(Y.shape[1]):
        ok = np.isfinite(Y[:, k])
        if ok.sum() < 3:
            continue
        for j in range(X.shape[1]):
            out[j, k] = pearson(X[ok, j], Y[ok, k])
    return out


@dataclass(frozen=True)
class SensitivityProfile:
    """Correlation of each parameter with the response along a control grid."""

    grid: np.ndarray
    r: np.ndarray                 # (n_params, n_grid)
    names: tuple[str, ...] = PARAM_NAMES
    control: str = "strain"
    coverage: np.ndarray | None = None  # samples contributing at each grid point

    @property
    def max_abs(self) -> np.ndarray:
        return rank_value(self.r).max(axis=1)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.max_abs)))

    def ranking(self) -> list[str]:
        order = np.argsort(-self.max_abs, kind="stable")
        return [self.names[i] for i in order]

    @property
    def flagged(self) -> np.ndarray:
        """Grid indices where at least one entry carries no signal."""
        return np.flatnonzero(np.isnan(self.r).any(axis=0))

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([self.control, *self.names, "n_samples"])
            cov = self.coverage if self.coverage is not None else np.full(len(self.grid), -1)
            for i, g in enumerate(self.grid):
                w.writerow([repr(float(g)), *(repr(float(v)) for v in self.r[:, i]), int(cov[i])])


def _responses(curves: Sequence[ResponseCurve], grid: np.ndarray, control: str) -> np.ndarray:
    # nan marks grid points a curve does not reach
    Y = np.full((len(curves), len(grid)), np.nan)
    for i, c in enumerate(curves):
        e, s = c.part(LOAD)
        if control == "strain":
            x, y = e, s
        else:
            # response is strain at given stress, up to the first stress maximum
            stop = int(np.argmax(s)) + 1
            x, y = s[:stop], e[:stop]
            keep = np.concatenate([[True], np.diff(x) > 0])
            x, y = x[keep], y[keep]
        inside = (grid >= x[0]) & (grid <= x[-1])
        Y[i, inside] = np.interp(grid[inside], x, y)
    return Y


def sensitivity_profile(
    design: np.ndarray,
    curves: Sequence[ResponseCurve],
    grid,
    control: str = "strain",
    names: Sequence[str] = PARAM_NAMES,
) -> SensitivityProfile:
    """Correlate normalized design columns with curve responses at every grid point.

    Parameters
    ----------
    design : (n, d) normalized parameter coordinates, one row per curve.
    curves : load-branch responses, one per design row.
    grid : control values; strains when ``control == "strain"``, stresses otherwise.
    """
    design = np.asarray(design, dtype=float)
    if len(curves) < 3:
        raise SensitivityError("sensitivity needs at least 3 curves")
    if design.shape[0] != len(curves):
        raise SensitivityError("one design row per curve is required")
    grid = np.asarray(grid, dtype=float)
    Y = _responses(curves, grid, control)
    r = correlation_table(design, Y)
    return SensitivityProfile(grid, r, tuple(names), control, np.isfinite(Y).sum(axis=0))


def peak_sensitivity(design: np.ndarray, peaks) -> np.ndarray:
    """2 x d table: correlations of each parameter with (eps_peak, sigma_peak)."""
    peaks = np.asarray(peaks, dtype=float)
    if peaks.ndim != 2 or peaks.shape[1] != 2:
        raise SensitivityError("peaks must be an (n, 2) array")
    if np.isfinite(peaks).all(axis=1).sum() < 3:
        raise SensitivityError("need at least 3 samples with valid peaks")
    return correlation_table(design, peaks).T


DEFAULT_CONTROL = {"uniaxial": "strain", "hydrostatic": "stress", "triaxial": "strain"}


def default_grid(kind: str, protocol: dict | None = None, n_points: int = 100) -> np.ndarray:
    """Control grid spanning the loading range of a test, excluding zero."""
    proto = {**_DEFAULTS[kind], **(protocol or {})}
    top = proto["p_max"] if kind == "hydrostatic" else proto["eps_max"]
    return np.linspace(top / n_points, top, n_points)


@dataclass
class Screen:
    """A sensitivity bundle: design, curves and the resulting profile."""

    kind: str
    design: DesignSet
    params: list
    curves: list                  # None where the simulation failed
    errors: list
    profile: SensitivityProfile
    peaks: np.ndarray | None = None   # 2 x d table for (eps_peak, sigma_peak)


def screen_test(
    kind: str,
    bounds: Bounds,
    n: int = 60,
    seed: int = 0,
    protocol: dict | None = None,
    grid=None,
    jobs: int = 1,
    anneal_budget: int = 20000,
) -> Screen:
    """Vary all parameters over `bounds` on an annealed LHS design and correlate.

    Failed samples are dropped from the correlation; their messages are kept.
    """
    design = training_design(n, len(PARAM_NAMES), seed, anneal_budget)
    params = [bounds.denormalize(u) for u in design.matrix]
    curves, errors = simulate_bundle(kind, params, protocol or {}, jobs)
    ok = [i for i, c in enumerate(curves) if c is not None]
    g = default_grid(kind, protocol) if grid is None else np.asarray(grid, dtype=float)
    prof = sensitivity_profile(design.matrix[ok], [curves[i] for i in ok], g, DEFAULT_CONTROL[kind])
    peaks = None
    if kind != "hydrostatic":
        pk = np.full((len(ok), 2), np.nan)
        for row, i in enumerate(ok):
            try:
                pk[row] = [extract_feature(curves[i], "eps_peak"), extract_feature(curves[i], "sigma_peak")]
            except FeatureError:
                pass
        if np.isfinite(pk).all(axis=1).sum() >= 3:
            peaks = peak_sensitivity(design.matrix[ok], pk)
    return Screen(kind, design, params, curves, errors, prof, peaks)
