"""Small feed-forward networks trained with Adam, and the classifier-based metric.

The networks are plain numpy: ReLU hidden layers, identity output, He-normal
initialization. Heads:

* ``binary``      one logit, binary cross-entropy;
* ``multiclass``  k logits, softmax cross-entropy;
* ``regression``  real outputs, mean squared error.
"""

from __future__ import annotations

import csv
import json
import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .groups import GroupAction
from .synthdata import LabeledDataset, OrbitDistribution, build_detection_dataset

HEADS = ("binary", "multiclass", "regression")


class DegenerateDatasetError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class MLPSpec:
    hidden: tuple = (128, 128, 128, 128)
    head: str = "binary"
    n_out: int = 1

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 10

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.patience < 1:
            raise ValueError(f"invalid training config {self}")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class MLPModel:
    widths: list
    weights: list
    biases: list
    head: str
    in_mean: np.ndarray
    in_scale: np.ndarray

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))

    def forward(self, X, return_cache: bool = False):
        h = (np.asarray(X, dtype=float) - self.in_mean) / self.in_scale
        cache = [h]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if i == last else np.maximum(z, 0.0)
            cache.append(h)
        return (h, cache) if return_cache else h

    def predict(self, X) -> np.ndarray:
        out = self.forward(X)
        if self.head == "binary":
            return (out[:, 0] > 0).astype(int)
        if self.head == "multiclass":
            return out.argmax(axis=1)
        return out

    def predict_proba(self, X) -> np.ndarray:
        out = self.forward(X)
        if self.head == "binary":
            return _sigmoid(out[:, 0])
        if self.head == "multiclass":
            return _softmax(out)
        raise ValueError("regression head has no probabilities")

    def copy(self) -> "MLPModel":
        return MLPModel(
            list(self.widths),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.head,
            self.in_mean.copy(),
            self.in_scale.copy(),
        )

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "widths": list(self.widths),
            "head": self.head,
            "in_mean": self.in_mean.tolist(),
            "in_scale": self.in_scale.tolist(),
            "layers": [
                {"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MLPModel":
        if doc.get("format_version") != 1:
            raise ValueError(f"unsupported checkpoint format {doc.get('format_version')}")
        weights = [np.array(L["weight"], dtype=float).reshape(L["shape"]) for L in doc["layers"]]
        biases = [np.array(L["bias"], dtype=float) for L in doc["layers"]]
        return cls(
            list(doc["widths"]),
            weights,
            biases,
            doc["head"],
            np.array(doc["in_mean"]),
            np.array(doc["in_scale"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "MLPModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def init_model(spec: MLPSpec, n_in: int, rng: np.random.Generator, X=None) -> MLPModel:
    widths = [n_in, *spec.hidden, spec.n_out]
    weights = [rng.standard_normal((a, b)) * math.sqrt(2.0 / a) for a, b in zip(widths[:-1], widths[1:])]
    biases = [np.zeros(b) for b in widths[1:]]
    if X is None:
        mean, scale = np.zeros(n_in), np.ones(n_in)
    else:
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale < 1e-12] = 1.0
    return MLPModel(widths, weights, biases, spec.head, mean, scale)


def loss(model: MLPModel, X, y) -> float:
    return loss_and_grads(model, X, y, grads=False)[0]


def loss_and_grads(model: MLPModel, X, y, grads: bool = True):
    """Mean loss over the batch and gradients w.r.t. (weights, biases)."""
    out, cache = model.forward(X, return_cache=True)
    n = len(out)
    if model.head == "binary":
        z = out[:, 0]
        t = np.asarray(y, dtype=float)
        # log(1 + e^z) - t z, computed stably
        val = np.mean(np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z))))
        dout = ((_sigmoid(z) - t) / n)[:, None]
    elif model.head == "multiclass":
        t = np.asarray(y, dtype=int)
        zmax = out.max(axis=1, keepdims=True)
        logz = np.log(np.exp(out - zmax).sum(axis=1)) + zmax[:, 0]
        val = np.mean(logz - out[np.arange(n), t])
        dout = _softmax(out)
        dout[np.arange(n), t] -= 1.0
        dout /= n
    else:
        t = np.asarray(y, dtype=float).reshape(n, -1)
        diff = out - t
        val = np.mean(np.sum(diff**2, axis=1))
        dout = 2.0 * diff / n
    if not grads:
        return float(val), None, None
    gW, gb, _ = backward(model, cache, dout)
    return float(val), gW, gb


def backward(model: MLPModel, cache: list, dout: np.ndarray, input_grad: bool = False):
    """Backpropagate ``dout`` (gradient w.r.t. the outputs) through a cached forward pass.

    Returns weight gradients, bias gradients and, if requested, the gradient
    w.r.t. the raw (unstandardized) input.
    """
    gW, gb = [None] * len(model.weights), [None] * len(model.biases)
    delta = dout
    for i in range(len(model.weights) - 1, -1, -1):
        gW[i] = cache[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (cache[i] > 0)
    dX = (delta @ model.weights[0].T) / model.in_scale if input_grad else None
    return gW, gb, dX


class Adam:
    """Adam state for a list of parameter arrays, updated in place."""

    def __init__(self, params: list, config: TrainConfig):
        self.config = config
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list, grads: list) -> None:
        c = self.config
        self.t += 1
        c1 = 1 - c.beta1**self.t
        c2 = 1 - c.beta2**self.t
        for i, g in enumerate(grads):
            self.m[i] = c.beta1 * self.m[i] + (1 - c.beta1) * g
            self.v[i] = c.beta2 * self.v[i] + (1 - c.beta2) * g**2
            params[i] -= c.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + c.eps)


def accuracy(model: MLPModel, X, y) -> float:
    return float(np.mean(model.predict(X) == np.asarray(y)))


@dataclass
class TrainResult:
    model: MLPModel
    curve: list = field(default_factory=list)  # dicts: epoch, train_loss, train_acc, val_acc
    best_epoch: int = 0


def _check_labels(spec: MLPSpec, y: np.ndarray) -> None:
    if spec.head == "regression":
        return
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise DegenerateDatasetError("training labels contain a single class")
    if counts.min() < 2:
        raise DegenerateDatasetError("every class needs at least two items")


def train(
    spec: MLPSpec,
    X,
    y,
    config: TrainConfig,
    epoch_data: Callable[[int], tuple] | None = None,
) -> TrainResult:
    """Mini-batch Adam with early stopping on a held-out validation slice.

    ``epoch_data(epoch)`` may return a fresh ``(X, y)`` training set for each
    epoch; the validation slice is still carved from the initial ``(X, y)``.
    Returns the model from the best validation epoch (epoch 0 is the
    initialization).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    _check_labels(spec, y)
    rng = np.random.default_rng(config.seed)
    n = len(X)
    n_val = max(1, int(round(config.val_fraction * n)))
    order = rng.permutation(n)
    val_idx, tr_idx = order[:n_val], order[n_val:]
    Xv, yv = X[val_idx], y[val_idx]
    Xt, yt = X[tr_idx], y[tr_idx]
    model = init_model(spec, X.shape[1], rng, Xt)
    regression = spec.head == "regression"

    def score(m):
        return -loss(m, Xv, yv) if regression else accuracy(m, Xv, yv)

    best = model.copy()
    best_score = score(model)
    best_epoch = 0
    curve = [
        {
            "epoch": 0,
            "train_loss": loss(model, Xt, yt),
            "train_acc": float("nan") if regression else accuracy(model, Xt, yt),
            "val_acc": float("nan") if regression else best_score,
        }
    ]
    opt = Adam(model.weights + model.biases, config)
    stale = 0
    for epoch in range(1, config.epochs + 1):
        if epoch_data is not None:
            Xt, yt = epoch_data(epoch)
            Xt, yt = np.asarray(Xt, dtype=float), np.asarray(yt)
        perm = rng.permutation(len(Xt))
        tot, cnt = 0.0, 0
        for s in range(0, len(Xt), config.batch_size):
            bi = perm[s : s + config.batch_size]
            val, gW, gb = loss_and_grads(model, Xt[bi], yt[bi])
            if not np.isfinite(val):
                raise DivergenceError(epoch)
            tot += val * len(bi)
            cnt += len(bi)
            opt.step(model.weights + model.biases, gW + gb)  # arrays update in place
        s_val = score(model)
        curve.append(
            {
                "epoch": epoch,
                "train_loss": tot / max(cnt, 1),
                "train_acc": float("nan") if regression else accuracy(model, Xt, yt),
                "val_acc": float("nan") if regression else s_val,
            }
        )
        if s_val > best_score:
            best, best_score, best_epoch, stale = model.copy(), s_val, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return TrainResult(best, curve, best_epoch)


def write_curve(curve: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
        for row in curve:
            w.writerow([row["epoch"]] + [format(row[k], ".17g") for k in ("train_loss", "train_acc", "val_acc")])


# -- featurization --------------------------------------------------------------


def featurize(data: LabeledDataset, pad_to: int | None = None) -> np.ndarray:
    """Flat feature matrix. Clouds are sorted lexicographically, zero-padded and
    followed by their mask bits."""
    if not data.is_cloud:
        return data.x.reshape(len(data), -1)
    n, m, k = data.x.shape
    width = pad_to or m
    mask = data.mask if data.mask is not None else np.ones((n, m), dtype=bool)
    pts = np.zeros((n, width, k))
    bits = np.zeros((n, width))
    for i in range(n):
        valid = data.x[i][mask[i]]
        order = np.lexsort(valid.T[::-1])
        pts[i, : len(valid)] = valid[order]
        bits[i, : len(valid)] = 1.0
    return np.concatenate([pts.reshape(n, -1), bits], axis=1)


def _cloud_width(*datasets: LabeledDataset) -> int | None:
    if not datasets[0].is_cloud:
        return None
    return max(d.x.shape[1] for d in datasets)


# -- metric -------------------------------------------------------------------------


@dataclass
class MetricResult:
    test_accuracy: float
    curve: list
    confusion: dict  # tp, tn, fp, fn with label 1 = transformed
    n_train: int = 0
    n_test: int = 0
    model: MLPModel | None = None

    def __post_init__(self):
        c = self.confusion
        total = c["tp"] + c["tn"] + c["fp"] + c["fn"]
        if total and not math.isclose(self.test_accuracy, (c["tp"] + c["tn"]) / total):
            raise ValueError("accuracy does not match confusion counts")


def confusion_counts(pred, truth) -> dict:
    pred, truth = np.asarray(pred), np.asarray(truth)
    return {
        "tp": int(np.sum((pred == 1) & (truth == 1))),
        "tn": int(np.sum((pred == 0) & (truth == 0))),
        "fp": int(np.sum((pred == 1) & (truth == 0))),
        "fn": int(np.sum((pred == 0) & (truth == 1))),
    }


def classifier_distance(
    train_set: LabeledDataset, test_set: LabeledDataset, spec: MLPSpec, config: TrainConfig
) -> MetricResult:
    """Held-out accuracy of a binary discriminator trained on ``train_set`` labels."""
    width = _cloud_width(train_set, test_set)
    Xtr, Xte = featurize(train_set, width), featurize(test_set, width)
    res = train(spec, Xtr, train_set.y, config)
    pred = res.model.predict(Xte)
    acc = float(np.mean(pred == test_set.y))
    return MetricResult(
        acc, res.curve, confusion_counts(pred, test_set.y), len(train_set), len(test_set), res.model
    )


def task_independent_metric(
    raw_train: LabeledDataset,
    raw_test: LabeledDataset,
    group: GroupAction,
    spec: MLPSpec | None = None,
    config: TrainConfig | None = None,
    seed: int = 0,
) -> MetricResult:
    """Accuracy of telling original items from Haar-transformed ones."""
    spec = spec or MLPSpec()
    config = config or TrainConfig(seed=seed)
    det = build_detection_dataset(raw_train, raw_test, group, seed)
    return classifier_distance(det.train, det.test, spec, config)


def optimal_orbit_accuracy(dist: OrbitDistribution):
    """Bayes accuracy of telling theta from the uniform law on an r-point orbit.

    Exact (a ``Fraction``) when the weights are ``Fraction`` values.
    """
    r = dist.r
    unif = Fraction(1, r) if _rational(dist) else 1.0 / r
    return 1 - sum(min(unif, t) for t in dist.weights) / 2


def brute_force_orbit_accuracy(dist: OrbitDistribution):
    """Best accuracy over all 2^r deterministic labelings of the orbit points."""
    r = dist.r
    unif = Fraction(1, r) if _rational(dist) else 1.0 / r
    best = 0
    for bits in range(1 << r):
        acc = 0
        for i, t in enumerate(dist.weights):
            acc += unif if (bits >> i) & 1 else t
        best = max(best, acc / 2)
    return best


def _rational(dist: OrbitDistribution) -> bool:
    return all(isinstance(t, Fraction) for t in dist.weights)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
