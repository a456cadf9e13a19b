"""Designs of experiments on the unit hypercube.

Training designs are Latin hypercubes whose columns are reordered by simulated
annealing to reduce the worst pairwise correlation; testing designs are plain
uniform random samples.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRAIN = "train"
TEST = "test"


@dataclass(frozen=True)
class DesignSet:
    """n_samples x n_params matrix of normalized coordinates."""

    matrix: np.ndarray
    role: str
    seed: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2:
            raise ValueError("design matrix must be 2-D")
        if self.role not in (TRAIN, TEST):
            raise ValueError(f"unknown design role {self.role!r}")
        if np.any(m < 0.0) or np.any(m > 1.0):
            raise ValueError("design entries must lie in [0, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def to_csv(self, path, columns=None) -> None:
        path = Path(path)
        columns = list(columns) if columns is not None else [f"x{j}" for j in range(self.d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for row in self.matrix:
                w.writerow([repr(float(v)) for v in row])
        sidecar = {"role": self.role, "seed": self.seed, "n": self.n, "d": self.d, **self.meta}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> "DesignSet":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        matrix = np.array([[float(v) for v in r] for r in rows[1:]])
        side = json.loads(path.with_suffix(".json").read_text())
        meta = {k: v for k, v in side.items() if k not in ("role", "seed", "n", "d")}
        return cls(matrix, side["role"], int(side["seed"]), meta)


def strata_midpoints(n: int) -> np.ndarray:
    return (np.arange(1, n + 1) - 0.5) / n


def lhs_sample(n: int, d: int, seed: int) -> DesignSet:
    """Latin hypercube with stratum midpoints; each column an independent permutation."""
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    rng = np.random.default_rng(seed)
    mids = strata_midpoints(n)
    matrix = np.column_stack([rng.permutation(mids) for _ in range(d)])
    return DesignSet(matrix, TRAIN, seed)


def max_abs_correlation(matrix: np.ndarray) -> float:
    """Largest |Pearson r| over all column pairs (0 for a single column)."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[1] < 2:
        return 0.0
    r = np.corrcoef(matrix, rowvar=False)
    iu = np.triu_indices(matrix.shape[1], k=1)
    return float(np.max(np.abs(r[iu])))


def anneal_decorrelate(
    D: DesignSet,
    budget: int = 20000,
    seed: int = 0,
    cooling: float = 0.95,
    cooling_every: int = 100,
    return_trace: bool = False,
):
    """Reduce the worst pairwise column correlation by swapping entries within columns.

    Each proposal swaps two rows of one random column and is accepted with the
    Metropolis rule.  The initial temperature is the standard deviation of 100
    random proposal deltas; it shrinks by `cooling` every `cooling_every`
    proposals.  The best design seen is returned, so the objective never
    exceeds the input's.
    """
    if D.role != TRAIN:
        raise ValueError("annealing applies to training designs")
    x = np.array(D.matrix)
    f0 = max_abs_correlation(x)
    meta = {"budget": budget, "anneal_seed": seed, "initial_objective": f0}
    if budget <= 0 or D.d < 2:
        meta["objective"] = f0
        out = DesignSet(x, TRAIN, D.seed, {**D.meta, **meta})
        return (out, [f0]) if return_trace else out

    rng = np.random.default_rng(seed)
    n, d = x.shape

    def propose(mat):
        j = rng.integers(d)
        a, b = rng.choice(n, size=2, replace=False)
        y = mat.copy()
        y[[a, b], j] = y[[b, a], j]
        return y

    deltas = [max_abs_correlation(propose(x)) - f0 for _ in range(100)]
    temp = float(np.std(deltas)) or 1e-3

    current, f_cur = x, f0
    best, f_best = x, f0
    trace = [f_best]
    for k in range(1, budget + 1):
        y = propose(current)
        f_y = max_abs_correlation(y)
        if f_y <= f_cur or rng.random() < math.exp(-(f_y - f_cur) / temp):
            current, f_cur = y, f_y
            if f_cur < f_best:
                best, f_best = current, f_cur
        trace.append(f_best)
        if k % cooling_every == 0:
            temp *= cooling
    meta["objective"] = f_best
    out = DesignSet(best, TRAIN, D.seed, {**D.meta, **meta})
    return (out, trace) if return_trace else out


def random_sample(n: int, d: int, seed: int) -> DesignSet:
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    rng = np.random.default_rng(seed)
    return DesignSet(rng.random((n, d)), TEST, seed)


def training_design(n: int, d: int, seed: int, budget: int = 20000) -> DesignSet:
    return anneal_decorrelate(lhs_sample(n, d, seed), budget=budget, seed=seed + 1)
