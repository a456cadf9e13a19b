"""Command-line pipeline: sample -> simulate -> train -> identify / verify, plus sensitivity and report.

Every step writes under the output directory and records its inputs and the
sha256 of its outputs in ``manifest.json``.  A step whose recorded inputs
match the current configuration is skipped ("up to date"); a step whose
upstream artifacts no longer match is refused unless ``--force`` is given.
"""
from __future__ import annotations

import csv
import functools
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from microcal import cascade
from microcal.cascade import (
    CouplingError,
    CoverageError,
    IdentifyConfig,
    StageDataError,
    TrainedStage,
)
from microcal.config import ConfigError, PipelineConfig, load_config
from microcal.doe import DesignSet
from microcal.grade import OptimizerError
from microcal.lab import FeatureError, ResponseCurve, run_test
from microcal.neural import AnnModel
from microcal.params import PARAM_NAMES, ParameterError
from microcal.sensa import screen_test

log = logging.getLogger("microcal")

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_CONVERGENCE = 5
EXIT_IO = 6
EXIT_STALE = 7

MANIFEST = "manifest.json"
KINDS = ("uniaxial", "hydrostatic", "triaxial")


class StaleError(RuntimeError):
    pass


class MissingArtifact(RuntimeError):
    pass


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _key(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


class Manifest:
    """Step records: input key, seeds/budgets and output file hashes."""

    def __init__(self, root: Path):
        self.root = root
        self.path = root / MANIFEST
        self.steps: dict = {}
        if self.path.exists():
            try:
                self.steps = json.loads(self.path.read_text())["steps"]
            except (ValueError, KeyError) as exc:
                raise StaleError(f"{self.path} is unreadable ({exc}); remove it to start over") from exc

    def save(self) -> None:
        _dump(self.path, {"version": 1, "steps": self.steps})

    def _files_ok(self, entry) -> str | None:
        for rel, digest in entry["outputs"].items():
            f = self.root / rel
            if not f.exists():
                return f"{rel} is missing"
            if _sha(f) != digest:
                return f"{rel} changed since it was written"
        return None

    def up_to_date(self, step: str, key: str) -> bool:
        e = self.steps.get(step)
        return bool(e) and e["key"] == key and self._files_ok(e) is None

    def require(self, step: str, key: str, force: bool) -> None:
        e = self.steps.get(step)
        if e is None:
            raise MissingArtifact(f"no artifacts for '{step}'; run that step first")
        problem = "it was produced with different settings" if e["key"] != key else self._files_ok(e)
        if problem:
            msg = f"'{step}' is stale: {problem}"
            if not force:
                raise StaleError(msg + "; rerun it or pass --force")
            log.warning(msg + " (continuing because of --force)")

    def record(self, step: str, key: str, outputs, info: dict | None = None) -> None:
        files = sorted({Path(p) for p in outputs})
        self.steps[step] = {
            "key": key,
            "info": info or {},
            "outputs": {p.relative_to(self.root).as_posix(): _sha(p) for p in files},
        }
        self.save()


class _Counter(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.count = 0

    def emit(self, record):
        self.count += 1


class Run:
    """Resolved configuration, output root and manifest for one invocation."""

    def __init__(self, cfg: PipelineConfig, out: Path, jobs: int, force: bool):
        self.cfg = cfg
        self.out = out
        self.jobs = jobs
        self.force = force
        self.plan = cfg.plan()
        self.bounds = cfg.bounds_obj()
        out.mkdir(parents=True, exist_ok=True)
        self.manifest = Manifest(out)

    # input keys; each includes the keys of the steps it reads
    def k_sample(self, group):
        return _key("sample", group, self.cfg.digest("seed", "n_train", "n_test", "anneal_budget"))

    def k_simulate(self, group):
        return _key("simulate", self.k_sample(group),
                    self.cfg.digest("bounds", "fixed", "protocols", "triaxial_levels", "k3_variant"))

    def k_train(self, target):
        group = self.plan.stage(target).group
        return _key("train", target, self.k_simulate(group), self.cfg.digest("budget", "hidden", "seed"))

    def k_base(self):
        return _key(*(self.k_train(t) for t in ("E", "k1")),
                    self.cfg.digest("n_train", "n_test", "anneal_budget", "budget", "seed", "hidden"))

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def load_stage(self, target: str) -> TrainedStage:
        spec = self.plan.stage(target)
        model = AnnModel.load(self.path("models", f"{target}.json"))
        data = cascade.load_group_data(self.plan, spec.group, self.path("bundles", spec.group))
        train = cascade.stage_dataset(spec, data, "train")
        test = cascade.stage_dataset(spec, data, "test")
        report = cascade.error_report(model, train, test, self.bounds[target])
        info = self.manifest.steps[f"train/{target}"]["info"]
        return TrainedStage(spec, model, report, None, info["seed"], info["budget"])

    def identify_config(self) -> IdentifyConfig:
        c = self.cfg
        return IdentifyConfig(c.n_train, c.n_test, c.seed, c.budget, self.jobs, c.anneal_budget)


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _guard(fn):
    """Map failures to exit codes."""

    @functools.wraps(fn)
    def wrapper(*a, **kw):
        try:
            return fn(*a, **kw)
        except (ConfigError, ParameterError) as exc:
            _fail(EXIT_CONFIG, str(exc))
        except StaleError as exc:
            _fail(EXIT_STALE, str(exc))
        except (MissingArtifact, StageDataError, FeatureError, CoverageError) as exc:
            _fail(EXIT_DATA, str(exc))
        except (CouplingError, OptimizerError) as exc:
            _fail(EXIT_CONVERGENCE, str(exc))
        except OSError as exc:
            _fail(EXIT_IO, str(exc))

    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="YAML pipeline configuration (defaults apply when omitted).")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory (overrides the config 'output').")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
              help="Worker processes for bundle simulation.")
@click.option("--budget", type=click.IntRange(min=30), default=None,
              help="Training budget in objective evaluations (1e5 desk, 1e6 full scale).")
@click.option("--force", is_flag=True, help="Proceed even when upstream artifacts are stale.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, config_path, out, jobs, budget, force, verbose):
    """Calibrate microplane parameters with cascaded inverse networks."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    counter = _Counter()
    logging.getLogger().addHandler(counter)
    ctx.call_on_close(lambda: logging.getLogger().removeHandler(counter))
    ctx.obj = {"counter": counter}
    try:
        cfg = load_config(config_path)
        if budget is not None:
            cfg = replace(cfg, budget=budget)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    root = Path(out if out is not None else cfg.output)
    try:
        ctx.obj["run"] = Run(cfg, root, jobs, force)
    except StaleError as exc:
        _fail(EXIT_STALE, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, f"cannot use output directory {root}: {exc}")


def _done(ctx, what: str):
    n = ctx.obj["counter"].count
    click.echo(f"{what}: done" + (f" with {n} warning(s)" if n else ""))


def _groups(run: Run, selected) -> list[str]:
    names = [g.name for g in run.plan.groups]
    bad = set(selected) - set(names)
    if bad:
        raise ConfigError(f"unknown groups {sorted(bad)}; choose from {names}")
    return [g for g in names if not selected or g in selected]


def _stages(run: Run, selected) -> list[str]:
    names = [s.target for s in run.plan.stages]
    bad = set(selected) - set(names)
    if bad:
        raise ConfigError(f"unknown stages {sorted(bad)}; choose from {names}")
    return [t for t in names if not selected or t in selected]


# -- sample / simulate ------------------------------------------------------------


@main.command()
@click.option("--group", "groups", multiple=True, help="Restrict to these bundles.")
@click.pass_context
@_guard
def sample(ctx, groups):
    """Write training (LHS + annealing) and testing (random) designs."""
    run: Run = ctx.obj["run"]
    cfg = run.cfg
    for g in _groups(run, groups):
        step, key = f"sample/{g}", run.k_sample(g)
        if run.manifest.up_to_date(step, key) and not run.force:
            click.echo(f"{step}: up to date")
            continue
        designs = cascade.group_designs(run.plan, g, cfg.n_train, cfg.n_test, cfg.seed, cfg.anneal_budget)
        cols = run.plan.group(g).varied
        files = []
        for split, D in designs.items():
            p = run.path("designs", g, f"design_{split}.csv")
            p.parent.mkdir(parents=True, exist_ok=True)
            D.to_csv(p, cols)
            files += [p, p.with_suffix(".json")]
        run.manifest.record(step, key, files, {"seed": cfg.seed, "anneal_budget": cfg.anneal_budget,
                                               "n_train": cfg.n_train, "n_test": cfg.n_test})
        click.echo(f"{step}: wrote {cfg.n_train} training and {cfg.n_test} testing rows")
    _done(ctx, "sample")


@main.command()
@click.option("--group", "groups", multiple=True, help="Restrict to these bundles.")
@click.pass_context
@_guard
def simulate(ctx, groups):
    """Simulate the designed samples of each bundle and extract features."""
    run: Run = ctx.obj["run"]
    context = cascade.stage_context(run.plan, run.bounds)
    for g in _groups(run, groups):
        step, key = f"simulate/{g}", run.k_simulate(g)
        if run.manifest.up_to_date(step, key) and not run.force:
            click.echo(f"{step}: up to date")
            continue
        run.manifest.require(f"sample/{g}", run.k_sample(g), run.force)
        designs = {s: DesignSet.from_csv(run.path("designs", g, f"design_{s}.csv")) for s in ("train", "test")}
        data = cascade.simulate_group(run.plan, g, run.bounds, context, designs, run.jobs)
        target = run.path("bundles", g)
        cascade.save_group_data(data, target)
        run.manifest.record(step, key, [p for p in target.rglob("*") if p.is_file()],
                            {"jobs_independent": True, "n_failed": data.n_failed()})
        n_ok = data.n_total() - data.n_failed()
        click.echo(f"{step}: {n_ok} of {data.n_total()} curves usable")
    _done(ctx, "simulate")


# -- sensitivity ------------------------------------------------------------------


@main.command()
@click.option("--kind", "kinds", multiple=True, type=click.Choice(KINDS))
@click.pass_context
@_guard
def sensitivity(ctx, kinds):
    """Correlation profiles of all parameters along each test (60-sample bundles by default)."""
    run: Run = ctx.obj["run"]
    cfg = run.cfg
    sc = cfg.sensitivity
    lo, hi = run.bounds["nu"]
    bounds = run.bounds.with_interval("nu", lo, min(hi, sc.nu_max))
    levels = sorted(cfg.triaxial_levels)
    for kind in kinds or KINDS:
        step = f"sensitivity/{kind}"
        key = _key(step, cfg.digest("seed", "bounds", "protocols", "triaxial_levels", "sensitivity", "anneal_budget"))
        if run.manifest.up_to_date(step, key) and not run.force:
            click.echo(f"{step}: up to date")
            continue
        proto = dict(cfg.protocols.get(kind, {}))
        if kind == "triaxial":
            proto["sigma_h"] = levels[0]
        seed = cascade.derive_seed(cfg.seed, step)
        scr = screen_test(kind, bounds, sc.n, seed, proto, jobs=run.jobs, anneal_budget=cfg.anneal_budget)
        for i, e in enumerate(scr.errors):
            if e:
                log.warning("%s sample %d excluded: %s", kind, i, e)
        d = run.path("sensitivity", kind)
        d.mkdir(parents=True, exist_ok=True)
        scr.design.to_csv(d / "design.csv", PARAM_NAMES)
        scr.profile.to_csv(d / "profile.csv")
        files = [d / "design.csv", d / "design.json", d / "profile.csv"]
        with open(d / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "max_abs_r", "r_first_point"])
            for j, n in enumerate(PARAM_NAMES):
                w.writerow([n, repr(float(scr.profile.max_abs[j])), repr(float(scr.profile.r[j, 0]))])
        files.append(d / "summary.csv")
        if scr.peaks is not None:
            with open(d / "peaks.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["response", *PARAM_NAMES])
                for name, row in zip(("eps_peak", "sigma_peak"), scr.peaks):
                    w.writerow([name, *(repr(float(v)) for v in row)])
            files.append(d / "peaks.csv")
        for i, c in enumerate(scr.curves):
            if c is not None:
                p = d / "curves" / f"sample_{i:03d}.csv"
                p.parent.mkdir(exist_ok=True)
                c.to_csv(p)
                files.append(p)
        run.manifest.record(step, key, files, {"seed": seed, "n": sc.n})
        ranking = ", ".join(f"{n} {v:.2f}" for n, v in sorted(scr.profile.as_dict().items(), key=lambda kv: -kv[1]))
        click.echo(f"{step}: max|r| {ranking}")
    _done(ctx, "sensitivity")


# -- train --------------------------------------------------------------------------


@main.command()
@click.option("--stage", "stages", multiple=True, help="Restrict to these targets (E, k1, c20, k4, k3, k2).")
@click.pass_context
@_guard
def train(ctx, stages):
    """Train the inverse networks and write error reports (train/test, % of interval)."""
    run: Run = ctx.obj["run"]
    cfg = run.cfg
    for t in _stages(run, stages):
        spec = run.plan.stage(t)
        step, key = f"train/{t}", run.k_train(t)
        if run.manifest.up_to_date(step, key) and not run.force:
            click.echo(f"{step}: up to date")
            continue
        run.manifest.require(f"simulate/{spec.group}", run.k_simulate(spec.group), run.force)
        data = cascade.load_group_data(run.plan, spec.group, run.path("bundles", spec.group))
        ts = cascade.train_stage(spec, data, run.bounds, cfg.budget, cfg.seed)
        mpath = run.path("models", f"{t}.json")
        mpath.parent.mkdir(parents=True, exist_ok=True)
        ts.model.save(mpath)
        rdir = run.path("reports")
        rdir.mkdir(parents=True, exist_ok=True)
        ts.result.history_to_csv(rdir / f"history_{t}.csv")
        cascade.write_error_reports([ts], rdir / f"errors_{t}.csv")
        rows = cascade.verify_resimulation(spec, ts, data, run.bounds, run.jobs)
        _write_rows(rdir / f"resimulation_{t}.csv", rows, ["sample", "true", "predicted", "curve_error"])
        run.manifest.record(
            step, key,
            [mpath, rdir / f"history_{t}.csv", rdir / f"errors_{t}.csv", rdir / f"resimulation_{t}.csv"],
            {"seed": ts.seed, "budget": ts.budget, "evals": ts.result.evals,
             "ceraf_restarts": len(ts.result.centers)},
        )
        r = ts.report
        click.echo(f"{step}: {spec.topology} test max {r.test_max:.2f} % avg {r.test_avg:.2f} % "
                   f"(train max {r.train_max:.2f} %)")
    _collect_errors(run)
    _done(ctx, "train")


def _write_rows(path: Path, rows: list[dict], cols: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])


def _collect_errors(run: Run) -> None:
    """Merge per-stage error files, in plan order, into reports/errors.csv."""
    parts = [run.path("reports", f"errors_{s.target}.csv") for s in run.plan.stages]
    parts = [p for p in parts if p.exists()]
    if not parts:
        return
    lines = [parts[0].read_text().splitlines()[0]]
    for p in parts:
        lines += p.read_text().splitlines()[1:]
    run.path("reports", "errors.csv").write_text("\n".join(lines) + "\n")


# -- identify / verify --------------------------------------------------------------------


def _write_identification(d: Path, ident: cascade.Identification, run: Run, truth=None) -> list[Path]:
    d.mkdir(parents=True, exist_ok=True)
    files = []
    with open(d / "params.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "value", "source", "extrapolated"] + (["true", "error_pct"] if truth else []))
        errs = cascade.recovery_errors(ident, truth, run.bounds) if truth else {}
        tv = truth.as_dict() if truth else {}
        for n, v in ident.params.as_dict().items():
            src = "network" if n in ident.predictions else ("fixed" if n in run.plan.fixed_policy else "midpoint")
            row = [n, repr(float(v)), src, int(ident.extrapolated.get(n, False))]
            if truth:
                row += [repr(float(tv[n])), repr(float(errs[n]))]
            w.writerow(row)
    files.append(d / "params.csv")
    with open(d / "curve_errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["test", "identified", "midpoint"])
        for k in ident.curve_errors:
            w.writerow([k, repr(float(ident.curve_errors[k])), repr(float(ident.midpoint_errors.get(k, np.nan)))])
    files.append(d / "curve_errors.csv")
    if ident.coupled is not None:
        with open(d / "coupled_k3k4.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k3", "k4_from_k4_net", "k3_from_k3_net"])
            for row in ident.coupled.relation_rows():
                w.writerow([repr(float(v)) for v in row])
        files.append(d / "coupled_k3k4.csv")
    for kind, c in ident.resimulated.items():
        c.to_csv(d / f"resim_{kind}.csv")
        files.append(d / f"resim_{kind}.csv")
    # the triaxial prediction comes from the lowest level; show it at every level
    proto = dict(run.cfg.protocols.get("triaxial", {}))
    for level in sorted(run.cfg.triaxial_levels):
        try:
            c = run_test("triaxial", ident.params, **{**proto, "sigma_h": level})
        except ValueError as exc:
            log.warning("triaxial re-simulation at %g MPa failed: %s", level, exc)
            continue
        p = d / f"resim_triaxial_{level:g}.csv"
        c.to_csv(p)
        files.append(p)
    (d / "warnings.txt").write_text("".join(w + "\n" for w in ident.warnings))
    files.append(d / "warnings.txt")
    for t, ts in sorted(ident.stages.items()):
        if t not in ("E", "k1"):
            p = d / "models" / f"{t}.json"
            p.parent.mkdir(exist_ok=True)
            ts.model.save(p)
            files.append(p)
    return files


def _base(run: Run) -> dict:
    for t in ("E", "k1"):
        run.manifest.require(f"train/{t}", run.k_train(t), run.force)
    return {t: run.load_stage(t) for t in ("E", "k1")}


@main.command()
@click.option("--uniaxial", type=click.Path(exists=True, dir_okay=False), help="Measured uniaxial curve CSV.")
@click.option("--hydrostatic", type=click.Path(exists=True, dir_okay=False), help="Measured hydrostatic curve CSV.")
@click.option("--triaxial", type=click.Path(exists=True, dir_okay=False),
              help="Measured triaxial curve CSV at the lowest confining level.")
@click.option("--name", default="measured", show_default=True, help="Subdirectory of identify/ for the results.")
@click.pass_context
@_guard
def identify(ctx, uniaxial, hydrostatic, triaxial, name):
    """Identify parameters from measured curves (strain,stress[,branch] CSV files)."""
    run: Run = ctx.obj["run"]
    paths = {"uniaxial": uniaxial, "hydrostatic": hydrostatic, "triaxial": triaxial}
    paths = {k: Path(v) for k, v in paths.items() if v}
    if not paths:
        raise ConfigError("give at least one measured curve")
    step = f"identify/{name}"
    key = _key(step, run.k_base(), {k: _sha(p) for k, p in sorted(paths.items())})
    if run.manifest.up_to_date(step, key) and not run.force:
        click.echo(f"{step}: up to date")
        _done(ctx, "identify")
        return
    base = _base(run)
    try:
        measured = {k: ResponseCurve.from_csv(p, k) for k, p in paths.items()}
    except ValueError as exc:
        raise FeatureError(str(exc)) from exc
    ident = cascade.identify(run.plan, measured, run.bounds, base, run.identify_config())
    files = _write_identification(run.path("identify", name), ident, run)
    run.manifest.record(step, key, files, {"seed": run.cfg.seed, "budget": run.cfg.budget})
    for n, v in ident.params.as_dict().items():
        click.echo(f"  {n:>4} = {v:.6g}")
    for k, e in ident.curve_errors.items():
        click.echo(f"  curve error {k}: {e:.4g} (midpoint {ident.midpoint_errors.get(k, np.nan):.4g})")
    _done(ctx, "identify")


@main.command()
@click.option("--cases", type=click.IntRange(min=1), default=None, help="Number of random truths.")
@click.pass_context
@_guard
def verify(ctx, cases):
    """Closed loop: identify synthetic measurements of random true parameters."""
    run: Run = ctx.obj["run"]
    vc = run.cfg.verify
    n = cases or vc.n_cases
    step = "verify"
    key = _key(step, run.k_base(), n, vc.seed)
    if run.manifest.up_to_date(step, key) and not run.force:
        click.echo(f"{step}: up to date")
        _done(ctx, "verify")
        return
    base = _base(run)
    truths = cascade.random_truths(run.plan, run.bounds, n, vc.seed)
    files, rec_rows, curve_rows = [], [], []
    for i, truth in enumerate(truths):
        measured = cascade.synthetic_measurements(run.plan, truth)
        icfg = replace(run.identify_config(), seed=cascade.derive_seed(run.cfg.seed, f"verify/{i}"))
        ident = cascade.identify(run.plan, measured, run.bounds, base, icfg)
        files += _write_identification(run.path("verify", f"case_{i:02d}"), ident, run, truth)
        errs = cascade.recovery_errors(ident, truth, run.bounds)
        for nme in run.plan.fixed_policy.free:
            rec_rows.append({"case": i, "parameter": nme, "true": float(truth.as_dict()[nme]),
                             "identified": float(ident.params.as_dict()[nme]), "error_pct": float(errs[nme])})
        for k, e in ident.curve_errors.items():
            curve_rows.append({"case": i, "test": k, "identified": float(e),
                               "midpoint": float(ident.midpoint_errors.get(k, np.nan))})
        worst = max(errs[nme] for nme in run.plan.fixed_policy.free)
        click.echo(f"verify case {i}: worst parameter error {worst:.2f} % of interval")
    _write_rows(run.path("verify", "recovery.csv"), rec_rows, ["case", "parameter", "true", "identified", "error_pct"])
    _write_rows(run.path("verify", "curve_errors.csv"), curve_rows, ["case", "test", "identified", "midpoint"])
    files += [run.path("verify", "recovery.csv"), run.path("verify", "curve_errors.csv")]
    run.manifest.record(step, key, files, {"seed": vc.seed, "identify_seed": run.cfg.seed,
                                           "budget": run.cfg.budget, "cases": n})
    _done(ctx, "verify")


# -- report ---------------------------------------------------------------------------


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@main.command()
@click.pass_context
@_guard
def report(ctx):
    """Summarize every available result in report.txt."""
    run: Run = ctx.obj["run"]
    lines = ["microcal run report", "", "settings: " + json.dumps(
        {k: v for k, v in run.cfg.as_dict().items() if k in ("seed", "n_train", "n_test", "budget", "k3_variant")},
        sort_keys=True)]
    errs = run.path("reports", "errors.csv")
    if errs.exists():
        lines += ["", "stage errors (% of interval)",
                  f"{'target':>6} {'net':>7} {'train max':>10} {'train avg':>10} {'test max':>9} {'test avg':>9}"]
        for r in _read_csv(errs):
            lines.append(f"{r['target']:>6} {r['topology']:>7} {float(r['train_max_pct']):10.2f} "
                         f"{float(r['train_avg_pct']):10.2f} {float(r['test_max_pct']):9.2f} {float(r['test_avg_pct']):9.2f}")
    for kind in KINDS:
        p = run.path("sensitivity", kind, "summary.csv")
        if p.exists():
            rows = _read_csv(p)
            lines += ["", f"sensitivity {kind}: " + ", ".join(
                f"{r['parameter']} {float(r['max_abs_r']):.2f}" for r in rows)]
    idir = run.path("identify")
    if idir.exists():
        for d in sorted(p for p in idir.iterdir() if p.is_dir()):
            lines += ["", f"identification '{d.name}'"]
            lines += [f"  {r['parameter']:>4} = {float(r['value']):.6g} ({r['source']})"
                      for r in _read_csv(d / "params.csv")]
            lines += [f"  curve error {r['test']}: {float(r['identified']):.4g} (midpoint {float(r['midpoint']):.4g})"
                      for r in _read_csv(d / "curve_errors.csv")]
    rec = run.path("verify", "recovery.csv")
    if rec.exists():
        rows = _read_csv(rec)
        lines += ["", "closed-loop recovery (max error % of interval per parameter)"]
        for nme in dict.fromkeys(r["parameter"] for r in rows):
            worst = max(float(r["error_pct"]) for r in rows if r["parameter"] == nme)
            lines.append(f"  {nme:>4} {worst:.2f}")
        ce = _read_csv(run.path("verify", "curve_errors.csv"))
        wins = sum(float(r["identified"]) < float(r["midpoint"]) for r in ce)
        lines.append(f"  identified beats midpoint on {wins} of {len(ce)} curves")
    path = run.path("report.txt")
    path.write_text("\n".join(lines) + "\n")
    click.echo(path.read_text(), nl=False)
    _done(ctx, "report")


if __name__ == "__main__":
    main()
