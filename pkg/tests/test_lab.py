import numpy as np
import pytest

from microcal import lab
from microcal.lab import (
    LOAD,
    UNLOAD,
    DriverError,
    FeatureError,
    FeatureSpec,
    ResponseCurve,
    extract_feature,
    run_hydrostatic,
    run_triaxial,
    run_uniaxial,
    simulate_bundle,
)


def curve(e, s, branch=None):
    return ResponseCurve(np.asarray(e, float), np.asarray(s, float), branch or (LOAD,) * len(e))


def test_uniaxial_elastic_line(mid):
    c = run_uniaxial(mid, eps_max=1e-4, n_steps=20)
    assert np.allclose(c.stress, mid.E * c.strain, rtol=5e-3)


def test_uniaxial_single_interior_peak(mid):
    c = run_uniaxial(mid)
    i = int(np.argmax(c.stress))
    assert 0 < i < len(c) - 1
    assert np.all(np.diff(c.stress[: i + 1]) > 0)
    assert c.stress[-1] < 0.8 * c.stress[i]


def test_uniaxial_peak_stable_under_refinement(mid):
    a = extract_feature(run_uniaxial(mid, n_steps=100), "sigma_peak")
    b = extract_feature(run_uniaxial(mid, n_steps=200), "sigma_peak")
    assert abs(a - b) < 0.01 * a


def test_hydrostatic_elastic_slope(mid):
    c = run_hydrostatic(mid, unload=False)
    K3 = mid.E / (1 - 2 * mid.nu)
    e, s = c.part(LOAD)
    assert s[1] / e[1] == pytest.approx(K3, rel=5e-3)


def test_hydrostatic_ordered_in_k3(mid, bounds):
    lo = run_hydrostatic(mid.with_values(k3=bounds["k3"][0]), unload=False)
    hi = run_hydrostatic(mid.with_values(k3=bounds["k3"][1]), unload=False)
    # post-elastic: less strain for a stiffer boundary at the same pressure
    for level in (100.0, 200.0, 400.0):
        assert extract_feature(hi, f"eps@{level}") < extract_feature(lo, f"eps@{level}")


def test_hydrostatic_without_unload_is_one_branch(mid):
    c = run_hydrostatic(mid, unload=False)
    assert set(c.branch) == {LOAD}
    u = run_hydrostatic(mid)
    assert u.branch[-1] == UNLOAD and u.stress[-1] == pytest.approx(45.0)


@pytest.mark.parametrize("sigma_h", lab.TRIAXIAL_LEVELS)
def test_triaxial_levels_start_at_confinement(mid, sigma_h):
    c = run_triaxial(mid, sigma_h=sigma_h, n_steps=30, eps_max=0.01)
    assert c.strain[0] == 0.0
    assert c.stress[0] == pytest.approx(sigma_h)


def test_triaxial_ordered_in_k2(mid, bounds):
    lo = run_triaxial(mid.with_values(k2=bounds["k2"][0]))
    hi = run_triaxial(mid.with_values(k2=bounds["k2"][1]))
    for eps in (0.005, 0.0128, 0.0308):
        assert extract_feature(hi, f"sigma@{eps}") > extract_feature(lo, f"sigma@{eps}")


def test_driver_rejects_high_nu(mid):
    with pytest.raises(DriverError):
        run_uniaxial(mid.with_values(nu=0.245))


def test_feature_stress_at_strain_on_line():
    e = np.linspace(0, 0.01, 11)
    assert extract_feature(curve(e, 30000 * e), "sigma@0.001") == pytest.approx(30.0, rel=1e-12)


def test_feature_peak_of_discrete_curve():
    # symmetric neighbours: the refined vertex is the sampled maximum
    c = curve([1, 2, 3], [1, 3, 1])
    assert extract_feature(c, "eps_peak") == pytest.approx(2.0)
    assert extract_feature(c, "sigma_peak") == pytest.approx(3.0)


def test_feature_peak_vertex_stays_within_neighbours():
    c = curve([1, 2, 3], [1, 3, 2])
    e, s = extract_feature(c, "eps_peak"), extract_feature(c, "sigma_peak")
    assert 2.0 <= e <= 3.0 and s >= 3.0


def test_feature_peak_needs_interior_maximum():
    with pytest.raises(FeatureError):
        extract_feature(curve([0, 1, 2], [0, 1, 2]), "eps_peak")


def test_strain_at_stress_uses_requested_branch():
    e = [0.0, 1.0, 2.0, 1.5, 1.0]
    s = [0.0, 10.0, 20.0, 10.0, 5.0]
    c = curve(e, s, (LOAD, LOAD, LOAD, UNLOAD, UNLOAD))
    assert extract_feature(c, "eps@10") == pytest.approx(1.0)
    assert extract_feature(c, "eps@10:unload") == pytest.approx(1.5)
    assert extract_feature(c, "eps@7.5:unload") == pytest.approx(1.25)


def test_feature_spec_round_trip():
    for text in ("sigma@0.001", "eps@85.5:unload", "eps_peak", "sigma_peak", "eps_yield"):
        assert str(FeatureSpec.parse(text)) == text
    with pytest.raises(ValueError):
        FeatureSpec.parse("tau@1")


def test_yield_strain_on_bilinear_curve():
    e = np.linspace(0, 2, 201)
    s = np.where(e < 1, e, 1 + 0.1 * (e - 1))
    # secant s/e = 0.7 where (1 + 0.1(e-1)) / e = 0.7
    assert extract_feature(curve(e, s), "eps_yield") == pytest.approx(0.9 / 0.6, rel=1e-3)


def test_curve_csv_round_trip(tmp_path, mid):
    c = run_hydrostatic(mid, n_steps=20)
    c.to_csv(tmp_path / "c.csv")
    back = ResponseCurve.from_csv(tmp_path / "c.csv", "hydrostatic")
    assert np.array_equal(back.strain, c.strain) and np.array_equal(back.stress, c.stress)
    assert back.branch == c.branch


def test_bundle_isolates_failures(mid):
    params = [mid, mid.with_values(nu=0.245), mid.with_values(E=40000.0)]
    curves, errors = simulate_bundle("uniaxial", params, {"n_steps": 20, "eps_max": 0.002})
    assert [c is None for c in curves] == [False, True, False]
    assert errors[0] is None and "nu" in errors[1]


def test_bundle_independent_of_jobs(mid):
    params = [mid.with_values(E=e) for e in (25000.0, 35000.0, 45000.0)]
    a, _ = simulate_bundle("uniaxial", params, {"n_steps": 20}, jobs=1)
    b, _ = simulate_bundle("uniaxial", params, {"n_steps": 20}, jobs=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.stress, y.stress)
