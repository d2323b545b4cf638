"""Synthetic datasets and the original-vs-transformed detection split."""

from __future__ import annotations

import csv
import json
import math
from fractions import Fraction
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import groups
from .groups import GroupAction

FORMAT_VERSION = 1


class EmptyDatasetError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass
class LabeledDataset:
    """Stacked items ``x`` (vectors ``(N, d)`` or clouds ``(N, m, k)``) with labels.

    ``mask`` marks valid points of variable-size clouds, shape ``(N, m)``.
    """

    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y)
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} items but {len(self.y)} labels")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.x.shape[:2]:
                raise ValueError(f"mask shape {self.mask.shape} does not match clouds {self.x.shape}")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def is_cloud(self) -> bool:
        return self.x.ndim == 3

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(int)
        return LabeledDataset(
            self.x[idx], self.y[idx], None if self.mask is None else self.mask[idx]
        )


@dataclass
class DetectionDataset:
    train: LabeledDataset
    test: LabeledDataset
    group: GroupAction
    seed: int


@dataclass(frozen=True)
class OrbitDistribution:
    weights: tuple

    def __post_init__(self):
        w = np.asarray([float(v) for v in self.weights])
        if w.ndim != 1 or len(w) == 0 or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
            raise ConfigurationError(f"orbit weights must be a probability vector, got {self.weights}")
        # Fractions are kept so Bayes-accuracy formulas can be evaluated exactly
        object.__setattr__(
            self, "weights", tuple(v if isinstance(v, Fraction) else float(v) for v in self.weights)
        )

    @property
    def r(self) -> int:
        return len(self.weights)

    @classmethod
    def uniform(cls, r: int) -> "OrbitDistribution":
        return cls(tuple([Fraction(1, r)] * r))

    @classmethod
    def one_hot(cls, r: int, i: int = 0) -> "OrbitDistribution":
        w = [Fraction(0)] * r
        w[i] = Fraction(1)
        return cls(tuple(w))

    @classmethod
    def modes(cls, r: int, m: int) -> "OrbitDistribution":
        w = [Fraction(1, m)] * m + [Fraction(0)] * (r - m)
        return cls(tuple(w))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def transform_items(
    data: LabeledDataset, group: GroupAction, rng: np.random.Generator, which=None
) -> LabeledDataset:
    """Apply an independent Haar sample to each selected item (all by default)."""
    idx = np.arange(len(data)) if which is None else np.asarray(which, dtype=int)
    x = data.x.copy()
    if idx.size:
        gs = groups.haar_samples(group, idx.size, rng)
        x[idx] = groups.apply_batch(group, gs, data.x[idx])
    return LabeledDataset(x, data.y.copy(), None if data.mask is None else data.mask.copy())


def _split_and_label(data: LabeledDataset, group: GroupAction, rng: np.random.Generator) -> LabeledDataset:
    n = len(data)
    perm = rng.permutation(n)
    n_orig = n // 2
    orig, moved = perm[:n_orig], perm[n_orig:]
    transformed = transform_items(data.subset(moved), group, rng)
    x = np.concatenate([data.x[orig], transformed.x])
    y = np.concatenate([np.zeros(len(orig), dtype=int), np.ones(len(moved), dtype=int)])
    mask = None
    if data.mask is not None:
        mask = np.concatenate([data.mask[orig], data.mask[moved]])
    return LabeledDataset(x, y, mask)


def build_detection_dataset(
    raw_train: LabeledDataset, raw_test: LabeledDataset, group: GroupAction, seed: int
) -> DetectionDataset:
    """Halve each split at random and transform one half by Haar samples.

    Label 0 marks untouched items, label 1 transformed ones; with an odd count
    the transformed half gets the extra item.
    """
    if len(raw_train) == 0 or len(raw_test) == 0:
        raise EmptyDatasetError("detection dataset needs nonempty train and test sets")
    ss = np.random.SeedSequence(seed)
    r_train, r_test = (np.random.default_rng(s) for s in ss.spawn(2))
    return DetectionDataset(
        _split_and_label(raw_train, group, r_train),
        _split_and_label(raw_test, group, r_test),
        group,
        seed,
    )


# -- generators ---------------------------------------------------------------

SWISS_T_RANGE = (1.5 * math.pi, 4.5 * math.pi)
SWISS_SEPARATED_Z = 1.0
SWISS_Z_JITTER = 0.05


def swiss_roll(n: int, p: float, seed, z_jitter: float = SWISS_Z_JITTER) -> LabeledDataset:
    """Two interleaved planar spirals; a p-fraction of class 1 is lifted to z=1."""
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"p must lie in [0, 1], got {p}")
    rng = _rng(seed)
    n1 = n // 2
    n0 = n - n1
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    t = rng.uniform(*SWISS_T_RANGE, size=n)
    sign = np.where(y == 0, 1.0, -1.0)  # class 1 is the class-0 spiral turned by pi
    xy = np.stack([sign * t * np.cos(t), sign * t * np.sin(t)], axis=1)
    lifted = (y == 1) & (rng.random(n) < p)
    z = np.where(lifted, SWISS_SEPARATED_Z, 0.0) + z_jitter * rng.standard_normal(n)
    return LabeledDataset(np.column_stack([xy, z]), y)


def orbit_dataset(
    group: GroupAction, x0, dist: OrbitDistribution, n: int, seed
) -> LabeledDataset:
    """n i.i.d. draws g x0 with g ~ dist over the enumerated group elements.

    Labels are the drawn element indices.
    """
    if not group.is_finite or group.order != dist.r:
        raise ConfigurationError(f"orbit distribution has r={dist.r} but group order is {group.order}")
    rng = _rng(seed)
    elems = groups.elements(group)
    idx = rng.choice(dist.r, size=n, p=np.asarray([float(t) for t in dist.weights]))
    x0 = np.asarray(x0, dtype=float)
    orbit = np.stack([groups.apply(group, g, x0) for g in elems])
    return LabeledDataset(orbit[idx], idx)


def grid_pattern(side: int, seed) -> np.ndarray:
    """A random flattened side x side grid with no rotational self-symmetry."""
    rng = _rng(seed)
    while True:
        g = (rng.random((side, side)) < 0.4).astype(float)
        if all(not np.array_equal(g, np.rot90(g, k)) for k in (1, 2, 3)):
            return g.ravel()


def canonicalized_clouds(n_clouds: int, m_points: int, anisotropy: float, seed) -> LabeledDataset:
    """Clouds of i.i.d. points from N(0, diag(anisotropy, 1, 1)).

    anisotropy = 1 gives an SO(3)-invariant cloud distribution.
    """
    if anisotropy < 1:
        raise ConfigurationError("anisotropy must be >= 1")
    rng = _rng(seed)
    scale = np.array([math.sqrt(anisotropy), 1.0, 1.0])
    x = rng.standard_normal((n_clouds, m_points, 3)) * scale
    return LabeledDataset(x, np.zeros(n_clouds, dtype=int))


@dataclass
class MinimalModel:
    sigma: np.ndarray
    coupling: np.ndarray  # (d, d_c) columns u_k
    v0: np.ndarray  # (d, d0) orthonormal basis of V0
    vperp: np.ndarray
    sigma_c: float
    sigma_w: float
    d_c: int

    def coupling_factor(self, beta) -> float:
        beta = np.asarray(beta, dtype=float)
        nb = beta @ beta
        if nb == 0:
            return 0.0
        proj = self.v0[:, : self.d_c].T @ beta
        return float(proj @ proj / nb)


def minimal_model_covariance(
    d: int, d0: int, d_c: int, sigma_c: float, sigma_w: float, group: GroupAction
) -> MinimalModel:
    """Covariance with d_c coupling modes u_k = (v0_k + vperp_k)/sqrt(2) at sigma_c."""
    if group.dim != d:
        raise ConfigurationError(f"group acts on dimension {group.dim}, not {d}")
    v0, vperp = groups.invariant_bases(group)
    if v0.shape[1] != d0:
        raise ConfigurationError(f"group has invariant dimension {v0.shape[1]}, not {d0}")
    if not d_c < min(d0, d - d0):
        raise ConfigurationError(f"need d_c < min(d0, d - d0), got d_c={d_c}")
    if not sigma_c >= sigma_w >= 0:
        raise ConfigurationError("need sigma_c >= sigma_w >= 0")
    u = (v0[:, :d_c] + vperp[:, :d_c]) / math.sqrt(2.0)
    sigma = (sigma_c - sigma_w) * (u @ u.T) + sigma_w * np.eye(d)
    sigma = (sigma + sigma.T) / 2
    return MinimalModel(sigma, u, v0, vperp, float(sigma_c), float(sigma_w), d_c)


def gaussian_regression_sample(sigma, beta, sigma_noise: float, n: int, seed):
    """Rows of X i.i.d. N(0, sigma); y = X beta + N(0, sigma_noise^2) noise."""
    rng = _rng(seed)
    L = covariance_factor(sigma)
    d = L.shape[0]
    X = rng.standard_normal((n, d)) @ L.T
    eps = rng.standard_normal(n) * sigma_noise
    return X, X @ np.asarray(beta, dtype=float) + eps


def covariance_factor(sigma) -> np.ndarray:
    """Cholesky factor L with L L^T = sigma, jittered when only semi-definite."""
    sigma = np.asarray(sigma, dtype=float)
    if not np.any(sigma):
        return np.zeros_like(sigma)
    evals = np.linalg.eigvalsh(sigma)
    if evals.min() < -1e-8:
        raise np.linalg.LinAlgError(f"covariance is not PSD (min eigenvalue {evals.min():.3g})")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(sigma + 1e-12 * np.eye(len(sigma)))


def invariant_beta(group: GroupAction, d: int, norm: float, seed) -> np.ndarray:
    if group.dim != d:
        raise ConfigurationError(f"group acts on dimension {group.dim}, not {d}")
    P0 = groups.invariant_projection(group)
    if groups.invariant_dim(group) == 0:
        raise ConfigurationError("group has no invariant direction")
    rng = _rng(seed)
    while True:
        b = P0 @ rng.standard_normal(d)
        nb = np.linalg.norm(b)
        if nb > 1e-8:
            b = P0 @ (b / nb)
            return b / np.linalg.norm(b) * norm


# -- serialization ------------------------------------------------------------


def save_dataset(data: LabeledDataset, path, meta: dict | None = None) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (id, label, flattened coords, mask bits) and ``<path>.json``."""
    path = Path(path)
    csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
    n = len(data)
    flat = data.x.reshape(n, -1)
    mask = data.mask.reshape(n, -1).astype(int) if data.mask is not None else np.zeros((n, 0), int)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["id", "label"]
            + [f"x{j}" for j in range(flat.shape[1])]
            + [f"mask{j}" for j in range(mask.shape[1])]
        )
        for i in range(n):
            w.writerow(
                [i, data.y[i].item()]
                + [format(v, ".17g") for v in flat[i]]
                + [int(b) for b in mask[i]]
            )
    sidecar = {
        "format_version": FORMAT_VERSION,
        "n_items": n,
        "item_shape": list(data.x.shape[1:]),
        "has_mask": data.mask is not None,
        "label_dtype": "int" if np.issubdtype(data.y.dtype, np.integer) else "float",
        "meta": meta or {},
    }
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return csv_path, json_path


def load_dataset(path) -> LabeledDataset:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    if sidecar.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported dataset format_version {sidecar.get('format_version')}")
    shape = tuple(sidecar["item_shape"])
    width = int(np.prod(shape)) if shape else 1
    rows = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    n = sidecar["n_items"]
    rows = rows.reshape(n, -1)
    ydtype = int if sidecar["label_dtype"] == "int" else float
    y = rows[:, 1].astype(ydtype)
    x = rows[:, 2 : 2 + width].reshape((n,) + shape)
    mask = None
    if sidecar["has_mask"]:
        mask = rows[:, 2 + width :].astype(bool).reshape(n, shape[0])
    return LabeledDataset(x, y, mask)
