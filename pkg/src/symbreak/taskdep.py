"""Task-dependent symmetry-breaking metrics.

A canonicalizer assigns each input the group element that brings it to a
canonical pose: ``c(x) = argmin_g s(g^-1 x)`` for a scalar scorer ``s``. The
two metrics then ask how much ``c(x)`` says about the label ``f(x)``:

* ``m1``: accuracy of a classifier telling matched pairs ``(c(x), f(x))``
  from mismatched pairs ``(c(x), f(x'))`` with ``x'`` independent;
* ``m2``: how much better a predictor of ``f(x)`` from ``c(x)`` does on
  matched than on mismatched targets, under 0/1 loss.

``affine_relation_check`` computes the Bayes optima of both by enumeration on
a discrete joint law of ``(c, f)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import classifier as clf
from . import groups
from .groups import GroupAction
from .synthdata import LabeledDataset, transform_items

MODES = ("frozen-random", "trained-jointly")
AFFINE_TOL = 1e-12


class AffineRelationError(AssertionError):
    def __init__(self, m1, m2):
        super().__init__(f"m2* = {float(m2):.17g} differs from 2 m1* - 1 = {float(2 * m1 - 1):.17g}")
        self.m1, self.m2 = m1, m2


@dataclass
class Canonicalizer:
    scorer: clf.MLPModel  # maps selected input features to one real score
    group: GroupAction
    mode: str = "frozen-random"
    features: tuple | None = None  # flattened input coordinates the scorer sees

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown canonicalizer mode {self.mode!r}")
        if not self.group.is_finite:
            raise groups.UnsupportedActionError("canonicalization needs a finite group")
        self._elems = groups.elements(self.group)
        self._inv = [groups.inverse(self.group, g) for g in self._elems]
        self._index = {groups.element_key(self.group, g): i for i, g in enumerate(self._elems)}

    @property
    def order(self) -> int:
        return len(self._elems)

    def element(self, i: int):
        return self._elems[i]

    def index_of(self, g) -> int:
        return self._index[groups.element_key(self.group, g)]

    def _select(self, x: np.ndarray) -> np.ndarray:
        flat = x.reshape(len(x), -1)
        return flat if self.features is None else flat[:, list(self.features)]

    def pulled_back(self, X) -> np.ndarray:
        """Scorer inputs for g^-1 x, shape (n, |G|, n_features)."""
        X = np.asarray(X, dtype=float)
        return np.stack([self._select(groups.apply(self.group, gi, X)) for gi in self._inv], axis=1)

    def scores(self, X) -> np.ndarray:
        """Scores s(g^-1 x) for every item and element, shape (n, |G|)."""
        Z = self.pulled_back(X)
        n, k, f = Z.shape
        return self.scorer.forward(Z.reshape(n * k, f))[:, 0].reshape(n, k)

    def __call__(self, X) -> np.ndarray:
        """Element indices c(x); ties go to the earliest element."""
        return np.argmin(self.scores(X), axis=1)


def random_canonicalizer(
    group: GroupAction,
    n_features: int,
    hidden: tuple = (32, 32),
    seed: int = 0,
    features: tuple | None = None,
) -> Canonicalizer:
    """Canonicalizer with an untrained, randomly initialized scorer."""
    rng = np.random.default_rng(seed)
    scorer = clf.init_model(clf.MLPSpec(hidden=hidden, head="regression", n_out=1), n_features, rng)
    return Canonicalizer(scorer, group, "frozen-random", features)


def swiss_roll_canonicalizer(group: GroupAction, seed: int = 0) -> Canonicalizer:
    """z-only random scorer for the vertical shift acting on swiss-roll points."""
    return random_canonicalizer(group, 1, hidden=(16, 16), seed=seed, features=(2,))


def canonicalize(c: Canonicalizer, x):
    """The group element c(x) for a single input."""
    x = np.asarray(x, dtype=float)
    return c.element(int(c(x[None])[0]))


def train_canonicalizer_jointly(
    data: LabeledDataset,
    group: GroupAction,
    n_features: int,
    hidden: tuple = (32, 32),
    config: clf.TrainConfig | None = None,
    features: tuple | None = None,
    temperature: float = 1.0,
) -> Canonicalizer:
    """Train the scorer together with a label predictor.

    The hard argmin is relaxed to ``softmax(-s/temperature)`` over the group
    elements; a linear softmax predictor maps that distribution to label
    logits and both are fitted by cross-entropy. The returned canonicalizer
    uses the hard argmin again.
    """
    config = config or clf.TrainConfig(epochs=20)
    y = _class_labels(data.y)
    rng = np.random.default_rng(config.seed)
    c = random_canonicalizer(group, n_features, hidden, int(rng.integers(2**31)), features)
    c.mode = "trained-jointly"
    k = c.order
    n_cls = int(y.max()) + 1
    pred = clf.init_model(clf.MLPSpec(hidden=(), head="multiclass", n_out=n_cls), k, rng)
    params = c.scorer.weights + c.scorer.biases + pred.weights + pred.biases
    opt = clf.Adam(params, config)
    Z = c.pulled_back(data.x)
    for _ in range(config.epochs):
        perm = rng.permutation(len(Z))
        for s in range(0, len(Z), config.batch_size):
            bi = perm[s : s + config.batch_size]
            b, f = len(bi), Z.shape[2]
            out, s_cache = c.scorer.forward(Z[bi].reshape(b * k, f), return_cache=True)
            soft = clf._softmax(-out[:, 0].reshape(b, k) / temperature)
            logits, p_cache = pred.forward(soft, return_cache=True)
            dlogits = clf._softmax(logits)
            dlogits[np.arange(b), y[bi]] -= 1.0
            dlogits /= b
            gWp, gbp, dsoft = clf.backward(pred, p_cache, dlogits, input_grad=True)
            # softmax Jacobian, then the chain rule through -s/temperature
            dlogit_soft = soft * (dsoft - np.sum(dsoft * soft, axis=1, keepdims=True))
            dscore = -dlogit_soft / temperature
            gWs, gbs, _ = clf.backward(c.scorer, s_cache, dscore.reshape(b * k, 1))
            opt.step(params, gWs + gbs + gWp + gbp)
    return c


# -- metrics --------------------------------------------------------------------


@dataclass
class TaskDepResult:
    m1: float | None = None
    m2: float | None = None
    m2_cross_entropy: float | None = None  # auxiliary, not used in the affine check
    curves: dict = field(default_factory=dict)
    n_train: int = 0
    n_test: int = 0

    def __post_init__(self):
        if self.m1 is not None and not 0.0 <= self.m1 <= 1.0:
            raise ValueError(f"m1 must lie in [0, 1], got {self.m1}")
        if self.m2 is not None and not -1.0 <= self.m2 <= 1.0:
            raise ValueError(f"m2 must lie in [-1, 1], got {self.m2}")


def _class_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype.kind not in "iub":
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("this metric needs integer class labels")
    y = y.astype(int)
    if y.min() < 0:
        raise ValueError("class labels must be nonnegative")
    return y


def _one_hot(idx: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(idx), k))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def _label_features(y: np.ndarray, n_cls: int | None) -> np.ndarray:
    if n_cls is None:
        return np.asarray(y, dtype=float).reshape(len(y), -1)
    return _one_hot(y, n_cls)


def _label_encoding(y):
    """Labels and class count; real-valued labels give ``None`` and stay raw."""
    y = np.asarray(y)
    if y.dtype.kind in "iub":
        y = y.astype(int)
        return y, int(y.max()) + 1
    return y.astype(float), None


def _halves(n: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return perm[: n // 2], perm[n // 2 :]


def _pairs(cs, ys, n_cls, k, rng):
    """Matched rows (label 0) followed by rows with shuffled targets (label 1)."""
    C = _one_hot(cs, k)
    shuffled = ys[rng.permutation(len(ys))]
    X = np.concatenate(
        [np.hstack([C, _label_features(ys, n_cls)]), np.hstack([C, _label_features(shuffled, n_cls)])]
    )
    t = np.concatenate([np.zeros(len(cs), dtype=int), np.ones(len(cs), dtype=int)])
    return X, t


def detection_metric_m1(
    data: LabeledDataset,
    c: Canonicalizer,
    spec: clf.MLPSpec | None = None,
    config: clf.TrainConfig | None = None,
    seed: int = 0,
) -> TaskDepResult:
    """Held-out accuracy of telling (c(x), f(x)) from (c(x), f(x'))."""
    spec = spec or clf.MLPSpec(hidden=(32, 32))
    config = config or clf.TrainConfig(epochs=20, seed=seed)
    rng = np.random.default_rng(seed)
    y, n_cls = _label_encoding(data.y)
    cs = c(data.x)
    tr, te = _halves(len(data), rng)
    Xtr, ttr = _pairs(cs[tr], y[tr], n_cls, c.order, rng)
    Xte, tte = _pairs(cs[te], y[te], n_cls, c.order, rng)
    pair_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])

    def epoch_data(_epoch):
        return _pairs(cs[tr], y[tr], n_cls, c.order, pair_rng)

    res = clf.train(spec, Xtr, ttr, config, epoch_data=epoch_data)
    acc = clf.accuracy(res.model, Xte, tte)
    return TaskDepResult(m1=acc, curves={"m1": res.curve}, n_train=len(Xtr), n_test=len(Xte))


def direct_metric_m2(
    data: LabeledDataset,
    c: Canonicalizer,
    spec: clf.MLPSpec | None = None,
    config: clf.TrainConfig | None = None,
    seed: int = 0,
) -> TaskDepResult:
    """Mismatched minus matched 0/1 loss of a predictor of f(x) from c(x)."""
    y = _class_labels(data.y)
    n_cls = int(y.max()) + 1
    rng = np.random.default_rng(seed)
    cs = c(data.x)
    tr, te = _halves(len(data), rng)
    C = _one_hot(cs, c.order)
    if len(np.unique(y[tr])) < 2:
        # a constant target is predicted perfectly on both terms
        return TaskDepResult(m2=0.0, m2_cross_entropy=0.0, n_train=len(tr), n_test=len(te))
    spec = spec or clf.MLPSpec(hidden=(32,), head="multiclass", n_out=n_cls)
    if spec.head != "multiclass" or spec.n_out < n_cls:
        raise ValueError(f"predictor needs a multiclass head with at least {n_cls} outputs")
    config = config or clf.TrainConfig(epochs=20, seed=seed)
    res = clf.train(spec, C[tr], y[tr], config)
    pred = res.model.predict(C[te])
    y_te = y[te]
    y_mis = y_te[rng.permutation(len(te))]
    m2 = float(np.mean(pred != y_mis) - np.mean(pred != y_te))
    proba = np.clip(res.model.predict_proba(C[te]), 1e-12, 1.0)
    rows = np.arange(len(te))
    ce = float(np.mean(-np.log(proba[rows, y_mis])) - np.mean(-np.log(proba[rows, y_te])))
    return TaskDepResult(m2=m2, m2_cross_entropy=ce, curves={"m2": res.curve}, n_train=len(tr), n_test=len(te))


def task_dependent_metrics(
    data: LabeledDataset, c: Canonicalizer, seed: int = 0, config: clf.TrainConfig | None = None
) -> TaskDepResult:
    """Both metrics with default architectures."""
    r1 = detection_metric_m1(data, c, config=config, seed=seed)
    r2 = direct_metric_m2(data, c, config=config, seed=seed)
    return TaskDepResult(r1.m1, r2.m2, r2.m2_cross_entropy, {**r1.curves, **r2.curves}, r1.n_train, r1.n_test)


# -- exact optima -----------------------------------------------------------------


def _validate_joint(joint):
    P = [list(row) for row in joint]
    if not P or not P[0] or any(len(row) != len(P[0]) for row in P):
        raise ValueError("joint must be a nonempty rectangular table")
    if len(P) * len(P[0]) > 10_000:
        raise ValueError("joint table is too large to enumerate")
    exact = all(isinstance(v, (Fraction, int)) for row in P for v in row)
    if any(v < 0 for row in P for v in row):
        raise ValueError("joint has negative mass")
    total = sum(sum(row) for row in P)
    if exact:
        if total != 1:
            raise ValueError(f"joint sums to {total}, not 1")
        P = [[Fraction(v) for v in row] for row in P]
    elif abs(float(total) - 1.0) > 1e-9:
        raise ValueError(f"joint sums to {float(total)}, not 1")
    return P


def optimal_task_metrics(joint):
    """Bayes-optimal (m1*, m2*) for a joint law P(c, y) given as a table.

    m1* = 1/2 sum max(P, Q) with Q the product of marginals (the best detector
    picks the likelier hypothesis per cell); m2* = sum_c max_y (P - Q)(c, y)
    (the best predictor picks, per c, the label maximizing the matched minus
    mismatched hit rate). Exact for ``Fraction`` entries.
    """
    P = _validate_joint(joint)
    pc = [sum(row) for row in P]
    py = [sum(col) for col in zip(*P)]
    Q = [[a * b for b in py] for a in pc]
    m1 = sum(max(p, q) for rp, rq in zip(P, Q) for p, q in zip(rp, rq)) / 2
    m2 = sum(max(p - q for p, q in zip(rp, rq)) for rp, rq in zip(P, Q))
    return m1, m2


def affine_relation_check(joint, check: bool = True):
    """Exact (m1*, m2*); with ``check`` raises unless m2* = 2 m1* - 1 to 1e-12."""
    m1, m2 = optimal_task_metrics(joint)
    if check and abs(float(m2 - (2 * m1 - 1))) > AFFINE_TOL:
        raise AffineRelationError(m1, m2)
    return m1, m2


def brute_force_task_metrics(joint):
    """(m1*, m2*) by enumerating every deterministic detector and predictor."""
    P = _validate_joint(joint)
    nc, ny = len(P), len(P[0])
    pc = [sum(row) for row in P]
    py = [sum(col) for col in zip(*P)]
    Q = [[a * b for b in py] for a in pc]
    cells = [(i, j) for i in range(nc) for j in range(ny)]
    best1 = None
    for bits in range(1 << len(cells)):
        # bit set -> declare "mismatched"
        acc = sum(Q[i][j] if (bits >> n) & 1 else P[i][j] for n, (i, j) in enumerate(cells)) / 2
        best1 = acc if best1 is None or acc > best1 else best1
    best2 = None
    for choice in np.ndindex(*([ny] * nc)):
        val = sum(P[i][choice[i]] - Q[i][choice[i]] for i in range(nc))
        best2 = val if best2 is None or val > best2 else best2
    return best1, best2


# -- train/test augmentation settings ---------------------------------------------


def augmentation_accuracies(
    train_set: LabeledDataset,
    test_set: LabeledDataset,
    group: GroupAction,
    spec: clf.MLPSpec | None = None,
    config: clf.TrainConfig | None = None,
    seed: int = 0,
) -> dict:
    """Label accuracy under the four train/test augmentation settings.

    Keys are two letters, train then test: ``T`` means every item gets an
    independent Haar transform, ``F`` means the data are used as is.
    """
    y_tr, y_te = _class_labels(train_set.y), _class_labels(test_set.y)
    n_cls = int(max(y_tr.max(), y_te.max())) + 1
    spec = spec or clf.MLPSpec(hidden=(64, 64), head="multiclass", n_out=n_cls)
    config = config or clf.TrainConfig(epochs=30, seed=seed)
    rng = np.random.default_rng(seed)
    test_aug = transform_items(test_set, group, rng)
    out = {}
    for t_flag in ("T", "F"):
        if t_flag == "T":
            aug_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
            first = transform_items(train_set, group, aug_rng)

            def epoch_data(_epoch, aug_rng=aug_rng):
                return transform_items(train_set, group, aug_rng).x.reshape(len(train_set), -1), y_tr

            res = clf.train(spec, first.x.reshape(len(first), -1), y_tr, config, epoch_data=epoch_data)
        else:
            res = clf.train(spec, train_set.x.reshape(len(train_set), -1), y_tr, config)
        for s_flag, ts in (("T", test_aug), ("F", test_set)):
            out[t_flag + s_flag] = clf.accuracy(res.model, ts.x.reshape(len(ts), -1), y_te)
    return out


def write_rows(rows: list, path) -> None:
    """CSV with columns dataset, p, m1, m2, seed (plus any extra keys, sorted)."""
    base = ["dataset", "p", "m1", "m2", "seed"]
    extra = sorted({k for r in rows for k in r} - set(base))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(base + extra)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in base + extra])


def _fmt(v):
    return format(v, ".17g") if isinstance(v, float) else v
