import math

import numpy as np
import pytest

from microcal.neural import (
    AnnModel,
    Dataset,
    Topology,
    fit_scalers,
    forward,
    forward_normalized,
    logsig,
    model_error,
    select_hidden_size,
    training_error,
)


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def test_logsig_limits():
    assert logsig(0.0) == 0.5
    assert logsig(50.0) == pytest.approx(1.0)
    assert logsig(-50.0) == pytest.approx(0.0)


def test_zero_weights_give_interval_midpoint():
    topo = Topology(3, 2)
    m = AnnModel(topo, np.zeros(topo.n_weights), np.zeros(3), np.ones(3), 5.0, 15.0)
    value, flag = forward(m, [0.2, 0.4, 0.6])
    assert value == 10.0 and not flag


def test_hand_forward_pass():
    topo = Topology(2, 2)
    # hidden rows [w1, w2, b], then output [v1, v2, c]
    w = np.array([0.3, -0.2, 0.1, -0.4, 0.5, 0.05, 0.7, -0.6, 0.2])
    x = np.array([0.25, 0.8])
    h1 = sig(0.3 * 0.25 - 0.2 * 0.8 + 0.1)
    h2 = sig(-0.4 * 0.25 + 0.5 * 0.8 + 0.05)
    o = sig(0.7 * h1 - 0.6 * h2 + 0.2)
    assert abs(forward_normalized(w, x[None], topo)[0] - o) < 1e-12


def test_population_forward_matches_single(rng):
    topo = Topology(3, 4)
    W = rng.normal(size=(5, topo.n_weights))
    X = rng.random((7, 3))
    batch = forward_normalized(W, X, topo)
    assert batch.shape == (5, 7)
    for k in range(5):
        assert np.allclose(batch[k], forward_normalized(W[k], X, topo), rtol=0, atol=1e-15)


def test_training_error_values():
    topo = Topology(1, 1)
    w = np.zeros(topo.n_weights)
    X = np.array([[0.3]])
    assert training_error(w, X, [0.5], topo) == 0.0
    assert training_error(w, X, [0.0], topo) == pytest.approx(0.5)
    X3 = np.array([[0.1], [0.5], [0.9]])
    t = np.array([0.2, 0.4, 0.9])
    w3 = np.array([1.5, -0.5, 2.0, -1.0])
    o = [sig(2.0 * sig(1.5 * x - 0.5) - 1.0) for x in X3[:, 0]]
    assert training_error(w3, X3, t, topo) == pytest.approx(math.sqrt(sum((a - b) ** 2 for a, b in zip(o, t))))


def test_model_json_round_trip_is_exact(rng, tmp_path):
    topo = Topology(3, 2)
    m = AnnModel(topo, rng.normal(size=topo.n_weights), rng.random(3), 1 + rng.random(3), 0.2, 5.0, "c20",
                 ("a", "b", "c"))
    m.save(tmp_path / "m.json")
    back = AnnModel.load(tmp_path / "m.json")
    assert np.array_equal(back.weights, m.weights) and back.inputs == m.inputs
    X = rng.random((4, 3))
    assert np.array_equal(back.predict(X), m.predict(X))


def test_extrapolation_flag():
    topo = Topology(1, 1)
    m = AnnModel(topo, np.zeros(topo.n_weights), [0.0], [1.0], 0.0, 1.0)
    assert forward(m, [1.5])[1] and not forward(m, [0.5])[1]


def test_scalers_pad_constant_columns():
    lo, hi = fit_scalers(np.array([[1.0, 2.0], [3.0, 2.0]]))
    assert lo[0] == 1.0 and hi[0] == 3.0 and lo[1] < 2.0 < hi[1]


def test_model_validation():
    topo = Topology(2, 1)
    with pytest.raises(ValueError):
        AnnModel(topo, np.zeros(3), [0, 0], [1, 1], 0, 1)
    with pytest.raises(ValueError):
        AnnModel(topo, np.zeros(topo.n_weights), [0, 0], [1, 1], 1, 1)


def test_hidden_size_selection_prefers_small_on_ties(rng):
    X = rng.random((20, 1))
    data = Dataset(X, X[:, 0])

    def trainer(topo, ds):
        # the same (perfect) linear fit for every size
        return AnnModel(topo, np.zeros(topo.n_weights), [0.0], [1.0], 0.0, 1.0)

    topo, table = select_hidden_size([1, 2, 3, 4, 5], data, data, trainer)
    assert topo.n_hidden == 1 and len(table) == 5


def test_hidden_size_single_candidate_and_failures(rng):
    X = rng.random((5, 2))
    data = Dataset(X, X[:, 0])

    def broken(topo, ds):
        raise RuntimeError("diverged")

    topo, table = select_hidden_size([3], data, data, broken)
    assert topo.n_hidden == 3 and table[0].failure.startswith("RuntimeError")
    with pytest.raises(RuntimeError):
        select_hidden_size([1, 2], data, data, broken)


def test_model_error_zero_for_exact(rng):
    topo = Topology(1, 1)
    m = AnnModel(topo, np.zeros(topo.n_weights), [0.0], [1.0], 0.0, 2.0)
    X = rng.random((4, 1))
    assert model_error(m, Dataset(X, np.ones(4))) == 0.0
