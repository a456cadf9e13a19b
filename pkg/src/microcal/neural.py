"""Three-layer log-sigmoid perceptron used as an inverse model for one parameter.

Weights are kept as a flat vector so the evolutionary trainer can treat a
network as a point in a box.  Layout: hidden layer rows ``[w_1 .. w_n_in, b]``
for each hidden neuron, then the output row ``[v_1 .. v_n_hidden, c]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

WEIGHT_BOX = 20.0
FORMAT_VERSION = 1


def logsig(x):
    return expit(x)


@dataclass(frozen=True)
class Topology:
    n_in: int
    n_hidden: int
    n_out: int = 1

    def __post_init__(self):
        if self.n_in < 1 or self.n_hidden < 1:
            raise ValueError("n_in and n_hidden must be >= 1")
        if self.n_out != 1:
            raise ValueError("one output per network")

    @property
    def n_weights(self) -> int:
        return (self.n_in + 1) * self.n_hidden + (self.n_hidden + 1)

    def __str__(self) -> str:
        return f"{self.n_in}+{self.n_hidden}+{self.n_out}"


def forward_normalized(w, X: np.ndarray, topo: Topology) -> np.ndarray:
    """Network output in (0, 1) for scaled inputs.

    `w` may be a single weight vector (returns shape (n,)) or a population
    of shape (P, n_weights) (returns shape (P, n)).
    """
    w = np.asarray(w, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    single = w.ndim == 1
    W = np.atleast_2d(w)
    if W.shape[1] != topo.n_weights:
        raise ValueError(f"expected {topo.n_weights} weights for {topo}, got {W.shape[1]}")
    if X.shape[1] != topo.n_in:
        raise ValueError(f"expected {topo.n_in} inputs, got {X.shape[1]}")
    nh, ni = topo.n_hidden, topo.n_in
    split = (ni + 1) * nh
    hid = W[:, :split].reshape(-1, nh, ni + 1)
    out = W[:, split:]
    # (P, n, nh)
    h = logsig(np.einsum("pji,ni->pnj", hid[:, :, :ni], X) + hid[:, None, :, ni])
    o = logsig(np.einsum("pnj,pj->pn", h, out[:, :nh]) + out[:, None, nh])
    return o[0] if single else o


def training_error(w, X: np.ndarray, t: np.ndarray, topo: Topology):
    """sqrt(sum_i (o(x_i) - t_i)^2) on scaled inputs and normalized targets.

    Vectorized over a population when `w` is 2-D.
    """
    o = forward_normalized(w, X, topo)
    return np.sqrt(np.sum((o - np.asarray(t, dtype=float)) ** 2, axis=-1))


@dataclass(frozen=True)
class AnnModel:
    """Trained network with its input scalers and output interval."""

    topology: Topology
    weights: np.ndarray
    in_min: np.ndarray
    in_max: np.ndarray
    out_lo: float
    out_hi: float
    target: str = ""
    inputs: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("weights", "in_min", "in_max"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.weights.shape != (self.topology.n_weights,):
            raise ValueError("weight vector does not match topology")
        if self.in_min.shape != (self.topology.n_in,) or self.in_max.shape != (self.topology.n_in,):
            raise ValueError("one scaler per input is required")
        if np.any(self.in_min >= self.in_max):
            raise ValueError("scaler min must be below max for every input")
        if not self.out_lo < self.out_hi:
            raise ValueError("output interval is empty")

    def scale(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.topology.n_in:
            raise ValueError(f"expected {self.topology.n_in} inputs, got {X.shape[1]}")
        return (X - self.in_min) / (self.in_max - self.in_min)

    def extrapolated(self, X) -> np.ndarray:
        u = self.scale(X)
        return np.any((u < 0.0) | (u > 1.0), axis=1)

    def predict(self, X) -> np.ndarray:
        o = forward_normalized(self.weights, self.scale(X), self.topology)
        return self.out_lo + o * (self.out_hi - self.out_lo)

    def to_json(self) -> str:
        # json writes floats with repr, so loading gives back identical doubles
        doc = {
            "format": FORMAT_VERSION,
            "target": self.target,
            "inputs": list(self.inputs),
            "topology": [self.topology.n_in, self.topology.n_hidden, self.topology.n_out],
            "in_min": self.in_min.tolist(),
            "in_max": self.in_max.tolist(),
            "out_interval": [self.out_lo, self.out_hi],
            "weights": self.weights.tolist(),
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AnnModel":
        doc = json.loads(text)
        if doc.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {doc.get('format')!r}")
        return cls(
            Topology(*doc["topology"]),
            np.array(doc["weights"]),
            np.array(doc["in_min"]),
            np.array(doc["in_max"]),
            float(doc["out_interval"][0]),
            float(doc["out_interval"][1]),
            doc.get("target", ""),
            tuple(doc.get("inputs", ())),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "AnnModel":
        return cls.from_json(Path(path).read_text())


def forward(m: AnnModel, x) -> tuple[float, bool]:
    """Estimate for one raw input vector and whether it lies outside the training range."""
    x = np.asarray(x, dtype=float)
    if x.shape != (m.topology.n_in,):
        raise ValueError(f"expected {m.topology.n_in} inputs, got shape {x.shape}")
    return float(m.predict(x)[0]), bool(m.extrapolated(x)[0])


def fit_scalers(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column min/max; constant columns get a unit-width window so scaling stays finite."""
    X = np.asarray(X, dtype=float)
    lo, hi = X.min(axis=0), X.max(axis=0)
    flat = hi <= lo
    pad = np.where(np.abs(lo) > 0, np.abs(lo) * 0.5, 0.5)
    return np.where(flat, lo - pad, lo), np.where(flat, hi + pad, hi)


@dataclass(frozen=True)
class Dataset:
    """Raw features and physical targets for one network."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if len(X) != len(y) or len(y) == 0:
            raise ValueError("dataset needs matching, nonempty X and y")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return len(self.y)


Trainer = Callable[[Topology, Dataset], AnnModel]


@dataclass
class SizeTrial:
    n_hidden: int
    train_error: float
    test_error: float
    model: AnnModel | None = None
    failure: str | None = None


def model_error(m: AnnModel, data: Dataset) -> float:
    """Training-error measure evaluated in normalized target units."""
    o = (m.predict(data.X) - m.out_lo) / (m.out_hi - m.out_lo)
    t = (data.y - m.out_lo) / (m.out_hi - m.out_lo)
    return float(np.sqrt(np.sum((o - t) ** 2)))


def select_hidden_size(
    candidates: Sequence[int], train: Dataset, test: Dataset, trainer: Trainer
) -> tuple[Topology, list[SizeTrial]]:
    """Train one network per hidden size and keep the one with the lowest test error.

    Ties go to the smaller network.  A single candidate is returned as is.
    """
    candidates = sorted(set(int(c) for c in candidates))
    if not candidates:
        raise ValueError("no candidate sizes")
    n_in = train.X.shape[1]
    table = []
    for nh in candidates:
        topo = Topology(n_in, nh)
        try:
            m = trainer(topo, train)
            table.append(SizeTrial(nh, model_error(m, train), model_error(m, test), m))
        except Exception as exc:  # recorded in the table, never silently dropped
            table.append(SizeTrial(nh, np.inf, np.inf, None, f"{type(exc).__name__}: {exc}"))
    if len(candidates) == 1:
        return Topology(n_in, candidates[0]), table
    ok = [t for t in table if t.failure is None]
    if not ok:
        raise RuntimeError("training failed for every candidate size")
    best = min(ok, key=lambda t: (t.test_error, t.n_hidden))
    return Topology(n_in, best.n_hidden), table
