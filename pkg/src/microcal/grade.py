"""GRADE evolutionary minimizer with CERAF restarts, and ANN training on top of it.

A generation creates one offspring per population slot, either by mutation
toward a random point of the box or by a differential step from the better of
two parents.  Parents and offspring are then thinned back to the population
size by inverse tournaments (the worse of two random candidates is removed).
When the best value stalls, CERAF records it as a "radioactive" centre and
restarts the population outside every recorded ball.

Offspring are drawn from an RNG stream keyed on (seed, generation), row k of
every draw belonging to slot k, and results are reduced in slot order, so
the outcome does not depend on how evaluations are scheduled.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from microcal.neural import WEIGHT_BOX, AnnModel, Dataset, Topology, fit_scalers, training_error

log = logging.getLogger(__name__)

FULL_BUDGET = 1_000_000
DESK_BUDGET = 100_000


class OptimizerError(ValueError):
    pass


@dataclass(frozen=True)
class GradeConfig:
    pop_size: int = 30
    p_mut: float = 0.2
    cl: float = 1.0
    stall_generations: int = 200
    radius: float = 0.25        # fraction of the box diagonal
    retry_cap: int = 10
    stall_tol: float = 0.0          # relative gain that resets the stall counter
    init_scale: float = 1.0         # initial population from this central fraction of the box
    interpolate: bool = False       # cross-over may step from the better parent toward the worse
    per_coordinate: bool = False    # independent U(0,1) per coordinate in the cross-over
    vectorized: bool = False        # objective accepts a (P, d) batch

    def __post_init__(self):
        if self.pop_size < 2:
            raise OptimizerError("population needs at least 2 members")
        if not 0.0 <= self.p_mut <= 1.0:
            raise OptimizerError("p_mut must lie in [0, 1]")
        if not 0.0 < self.radius < 1.0:
            raise OptimizerError("CERAF radius must lie in (0, 1)")
        if not 0.0 < self.init_scale <= 1.0:
            raise OptimizerError("init_scale must lie in (0, 1]")


# Settings used for network training.  Weight landscapes have long curved
# valleys: per-coordinate steps, steps back toward the worse parent, a central
# initial population and a relative stall test converge markedly faster there.
TRAINING_CONFIG = GradeConfig(
    per_coordinate=True, interpolate=True, init_scale=0.25, stall_tol=1e-3, vectorized=True
)


@dataclass
class CerafMemory:
    centers: list = field(default_factory=list)
    radius: float = 0.25
    stall: int = 0

    def inside(self, u: np.ndarray) -> np.ndarray:
        """Which rows of `u` (unit-box coordinates) fall in a recorded ball."""
        u = np.atleast_2d(u)
        if not self.centers:
            return np.zeros(len(u), dtype=bool)
        c = np.asarray(self.centers)
        d = np.linalg.norm(u[:, None, :] - c[None, :, :], axis=2) / np.sqrt(u.shape[1])
        return np.any(d < self.radius, axis=1)


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    evals: int
    generations: int
    history: list          # (generation, evals, best value)
    centers: list          # CERAF centres in physical coordinates
    n_nonfinite: int = 0

    def history_to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "evals", "best"])
            for g, e, f in self.history:
                w.writerow([g, e, repr(float(f))])


def _evaluate(objective, U, lo, span, vectorized):
    X = lo + U * span
    if vectorized:
        f = np.asarray(objective(X), dtype=float).reshape(len(X))
    else:
        f = np.array([float(objective(x)) for x in X])
    bad = ~np.isfinite(f)
    f[bad] = np.inf
    return f, int(bad.sum())


def _offspring(rng, U, f, n_off: int, cfg: GradeConfig) -> np.ndarray:
    """Vectorized offspring; row k only uses the k-th draw of each random array."""
    n, d = U.shape
    mutate = rng.random(n_off) < cfg.p_mut
    step = rng.random(n_off)[:, None]
    cstep = rng.random((n_off, d)) if cfg.per_coordinate else step
    # mutation toward a fresh uniform point
    base = U[rng.integers(n, size=n_off)]
    z = rng.random((n_off, d))
    # differential cross-over from the better of two distinct parents
    i = rng.integers(n, size=n_off)
    j = (i + 1 + rng.integers(n - 1, size=n_off)) % n
    better = np.where(f[i] <= f[j], i, j)
    worse = np.where(f[i] <= f[j], j, i)
    if cfg.interpolate:
        # step along x_i - x_j in draw order: from the better parent either away
        # from the worse one or back toward it
        cross = U[better] + cfg.cl * cstep * (U[i] - U[j])
    else:
        cross = U[better] + cfg.cl * cstep * (U[better] - U[worse])
    y = np.where(mutate[:, None], base + step * (z - base), cross)
    return np.clip(y, 0.0, 1.0)


def _initial(rng, n, d, scale):
    return 0.5 + scale * (rng.random((n, d)) - 0.5)


def _sample_outside(rng, n, d, mem: CerafMemory, cap, scale=1.0):
    U = _initial(rng, n, d, scale)
    for _ in range(cap):
        bad = mem.inside(U)
        if not bad.any():
            break
        U[bad] = _initial(rng, int(bad.sum()), d, scale)
    return U


def optimize(
    objective: Callable,
    box,
    budget_evals: int,
    seed: int,
    config: GradeConfig | None = None,
) -> OptimizeResult:
    """Minimize `objective` over the box ``(lo, hi)`` within `budget_evals` evaluations."""
    cfg = config or GradeConfig()
    lo, hi = (np.asarray(b, dtype=float).ravel() for b in box)
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise OptimizerError("box must satisfy lo < hi in every coordinate")
    if budget_evals < cfg.pop_size:
        raise OptimizerError("budget must cover at least one population")
    span = hi - lo
    d = len(lo)
    P = cfg.pop_size
    mem = CerafMemory(radius=cfg.radius)

    U = _initial(np.random.default_rng([seed, 0]), P, d, cfg.init_scale)
    f, nonfinite = _evaluate(objective, U, lo, span, cfg.vectorized)
    evals = P
    k = int(np.argmin(f))
    best_u, best_f = U[k].copy(), float(f[k])
    ref_f = best_f
    gen = 0
    history = [(0, evals, best_f)]

    while evals < budget_evals:
        gen += 1
        n_off = min(P, budget_evals - evals)
        rng = np.random.default_rng([seed, gen])
        kids = _offspring(rng, U, f, n_off, cfg)
        if mem.centers:
            for _ in range(cfg.retry_cap):
                bad = np.flatnonzero(mem.inside(kids))
                if not len(bad):
                    break
                kids[bad] = _offspring(rng, U, f, len(bad), cfg)
        fk, nf = _evaluate(objective, kids, lo, span, cfg.vectorized)
        nonfinite += nf
        evals += n_off

        pool_u = np.vstack([U, kids])
        pool_f = np.concatenate([f, fk])
        sel = np.random.default_rng([seed, gen, 1])
        # candidates inside radioactive balls go first, then inverse tournaments
        alive = list(np.flatnonzero(~mem.inside(pool_u)))
        if len(alive) < P:
            alive = list(range(len(pool_u)))
        draws = sel.random((max(len(alive) - P, 0), 2))
        for ua, ub in draws:
            m = len(alive)
            a = int(ua * m)
            b = (a + 1 + int(ub * (m - 1))) % m
            alive.pop(a if pool_f[alive[a]] >= pool_f[alive[b]] else b)
        U, f = pool_u[alive], pool_f[alive]

        k = int(np.argmin(fk))
        if fk[k] < best_f:
            best_u, best_f = kids[k].copy(), float(fk[k])
        # stalled: no relative gain above stall_tol since the reference value
        if best_f < ref_f - cfg.stall_tol * abs(ref_f) or (cfg.stall_tol == 0 and best_f < ref_f):
            ref_f, mem.stall = best_f, 0
        else:
            mem.stall += 1
        history.append((gen, evals, best_f))

        if mem.stall >= cfg.stall_generations and evals < budget_evals:
            mem.centers.append(best_u.copy())
            mem.stall = 0
            rng = np.random.default_rng([seed, gen, 2])
            n_new = min(P, budget_evals - evals)
            U = _sample_outside(rng, P, d, mem, cfg.retry_cap, cfg.init_scale)[:n_new]
            f, nf = _evaluate(objective, U, lo, span, cfg.vectorized)
            nonfinite += nf
            evals += n_new
            log.debug("CERAF restart at generation %d (best %.3g)", gen, best_f)
            if n_new < 2:
                break

    return OptimizeResult(
        x=lo + best_u * span,
        fun=best_f,
        evals=evals,
        generations=gen,
        history=history,
        centers=[lo + c * span for c in mem.centers],
        n_nonfinite=nonfinite,
    )


def train_ann(
    data: Dataset,
    topology: Topology,
    out_interval: tuple[float, float],
    budget: int = DESK_BUDGET,
    seed: int = 0,
    config: GradeConfig | None = None,
    target: str = "",
    inputs: tuple[str, ...] = (),
    box: float = WEIGHT_BOX,
) -> tuple[AnnModel, OptimizeResult]:
    """Fit network weights by minimizing the training error with GRADE."""
    if topology.n_in != data.X.shape[1]:
        raise OptimizerError("topology and dataset disagree on the number of inputs")
    lo, hi = map(float, out_interval)
    in_min, in_max = fit_scalers(data.X)
    Xs = (data.X - in_min) / (in_max - in_min)
    t = (data.y - lo) / (hi - lo)
    cfg = config or TRAINING_CONFIG
    if not cfg.vectorized:
        cfg = replace(cfg, vectorized=True)
    nw = topology.n_weights
    res = optimize(
        lambda W: training_error(W, Xs, t, topology),
        (np.full(nw, -box), np.full(nw, box)),
        budget,
        seed,
        cfg,
    )
    model = AnnModel(topology, res.x, in_min, in_max, lo, hi, target, tuple(inputs))
    return model, res
