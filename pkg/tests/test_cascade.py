import numpy as np
import pytest
from scipy.special import logit

from microcal import cascade
from microcal.cascade import (
    CouplingError,
    CoverageError,
    ErrorReport,
    IdentifyConfig,
    TrainedStage,
    build_default_plan,
    curve_error,
    derive_seed,
    solve_coupled_k3k4,
)
from microcal.lab import LOAD, UNLOAD, ResponseCurve, run_hydrostatic, run_uniaxial
from microcal.neural import AnnModel, Topology
from microcal.params import PARAM_NAMES


@pytest.fixture(scope="module")
def plan():
    return build_default_plan()


def constant_model(target, inputs, interval, value):
    """Network that ignores its inputs and returns `value`."""
    topo = Topology(len(inputs), 1)
    w = np.zeros(topo.n_weights)
    w[-1] = logit((value - interval[0]) / (interval[1] - interval[0]))
    n = len(inputs)
    return AnnModel(topo, w, np.zeros(n), np.ones(n), *interval, target, tuple(inputs))


def coupled_model(target, partner, inputs, bounds, slope, at_partner, value):
    """1-hidden-neuron net, monotone in the partner input, passing through (at_partner, value)."""
    lo_in, hi_in = bounds[partner]
    lo, hi = bounds[target]
    n = len(inputs)
    in_min = np.zeros(n)
    in_max = np.ones(n)
    j = inputs.index(partner)
    in_min[j], in_max[j] = lo_in, hi_in
    topo = Topology(n, 1)
    w = np.zeros(topo.n_weights)
    a, b, v = slope, -0.5 * slope, 2.0
    w[j], w[n] = a, b
    u = (at_partner - lo_in) / (hi_in - lo_in)
    h = 1.0 / (1.0 + np.exp(-(a * u + b)))
    w[n + 1] = v
    w[n + 2] = logit((value - lo) / (hi - lo)) - v * h
    return AnnModel(topo, w, in_min, in_max, lo, hi, target, tuple(inputs))


# -- plan -----------------------------------------------------------------------


def test_default_plan_inputs(plan):
    assert plan.stage("E").inputs == ("sigma@0.0005", "sigma@0.001", "sigma@0.0015")
    assert plan.stage("k2").inputs == ("sigma_peak", "sigma@0.0128", "sigma@0.0308")
    k3 = plan.stage("k3").inputs
    assert "eps@137" in k3 and "eps@308" in k3
    assert "eps@308" not in build_default_plan("four").stage("k3").inputs
    assert [s.target for s in plan.stages] == ["E", "k1", "c20", "k4", "k3", "k2"]
    assert [str(s.topology) for s in plan.stages] == ["3+2+1", "5+3+1", "4+2+1", "3+2+1", "5+2+1", "3+2+1"]


def test_plan_triaxial_uses_lowest_level(plan):
    assert plan.group("triaxial").protocol_dict["sigma_h"] == 34.5
    assert build_default_plan(triaxial_levels=(100.0, 50.0)).group("triaxial").protocol_dict["sigma_h"] == 50.0


def test_plan_rejects_unknown_overrides():
    with pytest.raises(ValueError):
        build_default_plan(hidden={"k9": 2})
    with pytest.raises(ValueError):
        build_default_plan("six")


def test_derive_seed_is_stable():
    assert derive_seed(0, "train/E") == derive_seed(0, "train/E")
    assert derive_seed(0, "train/E") != derive_seed(0, "train/k1")
    assert derive_seed(1, "x") != derive_seed(2, "x")


# -- bundles --------------------------------------------------------------------


@pytest.fixture(scope="module")
def c20_data(plan):
    from microcal.params import default_bounds

    b = default_bounds()
    ctx = cascade.stage_context(plan, b)
    return cascade.generate_group_data(plan, "c20", b, ctx, n_train=6, n_test=2, seed=3, anneal_budget=200)


def test_group_data_varies_only_its_parameters(c20_data):
    P = np.vstack([c20_data.params["train"], c20_data.params["test"]])
    assert len(P) == 8
    j = PARAM_NAMES.index("c20")
    others = np.delete(P, j, axis=1)
    assert np.all(others == others[0])
    assert np.unique(P[:, j]).size == 8
    assert c20_data.n_failed() == 0


def test_group_data_is_deterministic(plan, c20_data, bounds):
    again = cascade.generate_group_data(plan, "c20", bounds, c20_data.context, 6, 2, 3, anneal_budget=200)
    assert np.array_equal(again.values["train"], c20_data.values["train"])


def test_c20_bundle_differs_only_after_peak(c20_data):
    curves = c20_data.curves["train"]
    early = np.array([c.stress[:12] for c in curves])   # up to 0.0011, well before the peak
    late = np.array([c.stress[-10:] for c in curves])
    assert np.ptp(early, axis=0).max() < 1e-9 * early.max()
    assert np.ptp(late, axis=0).min() > 1.0


def test_stage_dataset_uses_true_upstream(plan, bounds):
    data = cascade.GroupData(
        plan.group("uniaxial"), {}, {}, {"train": np.tile(np.arange(1.0, 8.0), (3, 1))}, {},
        cascade.group_features(plan, "uniaxial"), {}, {},
    )
    data.values["train"] = np.arange(3.0 * len(data.features)).reshape(3, -1)
    data.values["train"][1, 0] = np.nan
    ds = cascade.stage_dataset(plan.stage("k1"), data, "train")
    assert ds.X.shape == (2, 5)
    assert np.all(ds.X[:, -1] == 1.0)       # E column from the parameters
    assert np.all(ds.y == 3.0)              # k1 column


def test_group_data_round_trip(tmp_path, plan, c20_data):
    cascade.save_group_data(c20_data, tmp_path)
    back = cascade.load_group_data(plan, "c20", tmp_path)
    for split in ("train", "test"):
        assert np.array_equal(back.values[split], c20_data.values[split])
        assert np.array_equal(back.params[split], c20_data.params[split])
        assert np.array_equal(back.curves[split][0].stress, c20_data.curves[split][0].stress)
    assert back.context == c20_data.context


def test_too_many_failures_raise(plan, bounds, monkeypatch):
    from microcal import lab

    def broken(kind, p, **kw):
        raise lab.DriverError("no convergence")

    monkeypatch.setattr(lab, "run_test", broken)
    ctx = cascade.stage_context(plan, bounds)
    with pytest.raises(cascade.StageDataError):
        cascade.generate_group_data(plan, "c20", bounds, ctx, 4, 1, 0, anneal_budget=0)


# -- errors and re-simulation -----------------------------------------------------


def test_error_report_percentages():
    r = ErrorReport((0.0, 200.0), np.array([2.0, 4.0]), np.array([10.0]))
    assert (r.train_max, r.train_avg, r.test_max, r.test_avg) == (2.0, 1.5, 5.0, 5.0)


def test_verify_resimulation_rows(plan, bounds, c20_data):
    spec = plan.stage("c20")
    model = constant_model("c20", spec.inputs, bounds["c20"], 2.0)
    ts = TrainedStage(spec, model, None)
    rows = cascade.verify_resimulation(spec, ts, c20_data, bounds)
    assert len(rows) == c20_data.ok("test").sum()
    assert all(r["predicted"] == pytest.approx(2.0) and r["curve_error"] >= 0 for r in rows)
    # a perfect predictor re-simulates the test curves exactly
    for r, i in zip(rows, np.flatnonzero(c20_data.ok("test"))):
        truth = cascade.TrainedStage(spec, constant_model("c20", spec.inputs, bounds["c20"], r["true"]), None)
        exact = cascade.verify_resimulation(spec, truth, c20_data, bounds)
        assert exact[0]["curve_error"] == pytest.approx(0.0, abs=1e-6)
        break


# -- coupled k3/k4 --------------------------------------------------------------------


def test_coupled_known_fixed_point(plan, bounds):
    k3s, k4s = 11.3, 87.0
    f4 = plan.stage("k4").inputs
    f3 = plan.stage("k3").inputs
    net4 = coupled_model("k4", "k3", f4, bounds, 1.5, k3s, k4s)
    net3 = coupled_model("k3", "k4", f3, bounds, -1.0, k4s, k3s)
    feats = {n: 0.5 for n in set(f4 + f3)}
    sol = solve_coupled_k3k4(net4, net3, feats, bounds)
    assert abs(sol.k3 - k3s) / 10.0 < 1e-3
    assert abs(sol.k4 - k4s) / 170.0 < 1e-3
    assert sol.residual_k3 < 1e-6 and sol.residual_k4 < 1e-6
    assert len(sol.roots) == 1
    assert sol.relation_rows().shape == (400, 3)


def test_decoupled_nets_give_direct_predictions(plan, bounds):
    net4 = constant_model("k4", plan.stage("k4").inputs, bounds["k4"], 120.0)
    net3 = constant_model("k3", plan.stage("k3").inputs, bounds["k3"], 7.5)
    feats = {n: 0.5 for n in net4.inputs + net3.inputs}
    sol = solve_coupled_k3k4(net4, net3, feats, bounds)
    assert sol.k3 == pytest.approx(7.5, abs=1e-5) and sol.k4 == pytest.approx(120.0)
    assert len(sol.roots) == 1


class _Stub:
    def __init__(self, fn, inputs):
        self.fn, self.inputs = fn, inputs

    def predict(self, X):
        return self.fn(np.asarray(X)[:, 0])


def test_multiple_roots_use_choice(bounds):
    net4 = _Stub(lambda k3: 10.0 * k3, ("k3",))
    net3 = _Stub(lambda k4: 10.0 + 4.0 * np.sin(k4 / 6.0), ("k4",))
    sol = solve_coupled_k3k4(net4, net3, {}, bounds, choose=lambda k3, k4: abs(k3 - 13.0))
    assert len(sol.roots) >= 2
    assert sol.k3 == min((r[0] for r in sol.roots), key=lambda k: abs(k - 13.0))
    first = solve_coupled_k3k4(net4, net3, {}, bounds)
    assert first.k3 == sol.roots[0][0]


def test_no_intersection_raises(bounds):
    net4 = _Stub(lambda k3: np.full_like(k3, 100.0), ("k3",))
    net3 = _Stub(lambda k4: np.full_like(k4, 30.0), ("k4",))
    with pytest.raises(CouplingError):
        solve_coupled_k3k4(net4, net3, {}, bounds)


# -- curve error -------------------------------------------------------------------------


def test_curve_error_identity_and_offset():
    e = np.linspace(0, 0.01, 25)
    a = ResponseCurve(e, 3e4 * e, (LOAD,) * 25)
    assert curve_error(a, a) == 0.0
    b = ResponseCurve(e, 3e4 * e + 0.7, (LOAD,) * 25)
    assert abs(curve_error(b, a) - 0.7 * np.sqrt(25)) < 1e-12


def test_curve_error_strain_axis_and_branches():
    e = np.array([0.0, 1.0, 2.0, 1.9, 1.5])
    s = np.array([0.0, 10.0, 20.0, 10.0, 5.0])
    br = (LOAD, LOAD, LOAD, UNLOAD, UNLOAD)
    sim = ResponseCurve(np.array([0.0, 1.0, 2.0, 1.8, 1.2]), np.array([0.0, 10.0, 20.0, 10.0, 2.0]),
                        (LOAD, LOAD, LOAD, UNLOAD, UNLOAD))
    meas = ResponseCurve(e, s, br)
    # unload points: stress 10 simulated at 1.8, stress 5 at 1.2 + 0.6 * 3/8
    expected = np.hypot(1.9 - 1.8, 1.5 - (1.2 + 0.6 * 3 / 8))
    assert curve_error(meas, sim, "strain") == pytest.approx(expected, abs=1e-12)


def test_curve_error_coverage():
    e = np.linspace(0, 0.01, 5)
    short = ResponseCurve(e / 2, e, (LOAD,) * 5)
    with pytest.raises(CoverageError):
        curve_error(ResponseCurve(e, e, (LOAD,) * 5), short)


# -- identification -------------------------------------------------------------------------


def constant_stages(plan, bounds, values):
    return {t: TrainedStage(plan.stage(t), constant_model(t, plan.stage(t).inputs, bounds[t], v), None)
            for t, v in values.items()}


def test_identify_falls_back_without_triaxial(plan, bounds, mid):
    values = dict(E=31000.0, k1=1.4e-4, c20=1.5, k4=90.0, k3=9.0)
    stages = constant_stages(plan, bounds, values)
    base = {t: stages.pop(t) for t in ("E", "k1")}
    measured = {"uniaxial": run_uniaxial(mid), "hydrostatic": run_hydrostatic(mid)}
    ident = cascade.identify(plan, measured, bounds, base, IdentifyConfig(), downstream=stages)
    assert ident.params.k2 == 550.0
    assert any(w.startswith("k2:") for w in ident.warnings)
    assert ident.params.nu == 0.2
    for t, v in values.items():
        # the coupled pair comes from a bisection to 1e-6 of the interval
        assert ident.params.as_dict()[t] == pytest.approx(v, rel=1e-5)
    assert set(ident.curve_errors) == {"uniaxial", "hydrostatic"}
    assert ident.coupled is not None


def test_recovery_errors_and_truths(plan, bounds):
    truths = cascade.random_truths(plan, bounds, 3, seed=0)
    assert all(t.nu == 0.2 for t in truths)
    assert truths[0] != truths[1]
    assert cascade.random_truths(plan, bounds, 3, seed=0) == truths
