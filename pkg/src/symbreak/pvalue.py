"""Monte Carlo p-values for the null hypothesis that the data distribution is
invariant under the group.

Each round draws train/test subsamples (without replacement), transforms
either all items (calibration rounds) or a random ``augmented_fraction`` of
them (actual rounds), and evaluates a distance between the result and its
symmetrization:

* ``mmd``: MMD between the train subsample and the test subsample after a
  fresh Haar transform of every test item;
* ``classifier``: the detection accuracy of a discriminator trained on the
  train subsample and scored on the test subsample.

Larger distances mean more asymmetry. The test is one-sided: the p-value
counts calibration distances strictly above the mean actual distance.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import classifier as clf
from . import mmdkernels
from .groups import GroupAction
from .synthdata import LabeledDataset, transform_items


class DistanceError(RuntimeError):
    def __init__(self, kind: str, index: int, cause: Exception):
        super().__init__(f"distance failed in {kind} round {index}: {cause}")
        self.kind, self.index = kind, index


@dataclass(frozen=True)
class PValueConfig:
    n1: int = 99
    n2: int = 1
    subsample: int | None = None
    distance: str = "mmd"
    kernel: mmdkernels.KernelSpec = field(default_factory=mmdkernels.KernelSpec)
    mlp: clf.MLPSpec = field(default_factory=lambda: clf.MLPSpec(hidden=(64, 64)))
    train: clf.TrainConfig = field(default_factory=lambda: clf.TrainConfig(epochs=20))
    augmented_fraction: float = 0.0

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("n1 and n2 must be >= 1")
        if self.distance not in ("mmd", "classifier"):
            raise ValueError(f"unknown distance {self.distance!r}")
        if not 0.0 <= self.augmented_fraction <= 1.0:
            raise ValueError("augmented_fraction must lie in [0, 1]")


@dataclass
class PValueResult:
    p: float
    calibration: list
    actual: list
    mean_actual: float
    n1: int
    n2: int


def p_from_distances(calibration, mean_actual: float) -> float:
    count = sum(1 for d in calibration if d > mean_actual)
    return (1 + count) / (1 + len(calibration))


def _subsample(data: LabeledDataset, size: int | None, rng: np.random.Generator) -> LabeledDataset:
    if size is None or size >= len(data):
        if size is not None and size > len(data):
            raise ValueError(f"subsample {size} exceeds available {len(data)} items")
        return data.subset(rng.permutation(len(data)))
    return data.subset(rng.choice(len(data), size=size, replace=False))


def _transform_fraction(data: LabeledDataset, group, fraction: float, rng) -> LabeledDataset:
    k = int(round(fraction * len(data)))
    which = rng.choice(len(data), size=k, replace=False)
    return transform_items(data, group, rng, which)


def distance(a: LabeledDataset, b: LabeledDataset, group: GroupAction, config: PValueConfig, rng) -> float:
    if config.distance == "mmd":
        ref = transform_items(b, group, rng)
        return mmdkernels.mmd(a.x, ref.x, config.kernel, a.mask, ref.mask).value
    seed = int(rng.integers(2**31))
    res = clf.task_independent_metric(a, b, group, config.mlp, _reseed(config.train, seed), seed)
    return res.test_accuracy


def _reseed(tc: clf.TrainConfig, seed: int) -> clf.TrainConfig:
    d = clf.config_dict(tc)
    d["seed"] = seed
    return clf.TrainConfig(**d)


def _round(args) -> float:
    train, test, group, config, fraction, seq, kind, index = args
    rng = np.random.default_rng(seq)
    a = _subsample(train, config.subsample, rng)
    b = _subsample(test, config.subsample, rng)
    a = _transform_fraction(a, group, fraction, rng)
    b = _transform_fraction(b, group, fraction, rng)
    try:
        return float(distance(a, b, group, config, rng))
    except Exception as exc:  # noqa: BLE001 - re-raised with the round index
        raise DistanceError(kind, index, exc) from exc


def _run_rounds(train, test, group, config, fraction, seqs, kind, workers) -> list:
    jobs = [(train, test, group, config, fraction, s, kind, i) for i, s in enumerate(seqs)]
    if workers <= 1:
        return [_round(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_round, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _seeds(seed: int, config: PValueConfig):
    cal, act = np.random.SeedSequence(seed).spawn(2)
    return cal.spawn(config.n1), act.spawn(config.n2)


def calibration_distances(train, test, group, config: PValueConfig, seed: int, workers: int = 1) -> list:
    cal_seqs, _ = _seeds(seed, config)
    return _run_rounds(train, test, group, config, 1.0, cal_seqs, "calibration", workers)


def compute_pvalue(
    train: LabeledDataset,
    test: LabeledDataset,
    group: GroupAction,
    config: PValueConfig,
    seed: int,
    workers: int = 1,
    calibration: list | None = None,
) -> PValueResult:
    if len(train) == 0 or len(test) == 0:
        raise ValueError("p-value computation needs nonempty data")
    cal_seqs, act_seqs = _seeds(seed, config)
    if calibration is None:
        calibration = _run_rounds(train, test, group, config, 1.0, cal_seqs, "calibration", workers)
    actual = _run_rounds(train, test, group, config, config.augmented_fraction, act_seqs, "actual", workers)
    mean_actual = float(np.mean(actual))
    return PValueResult(
        p_from_distances(calibration, mean_actual), list(calibration), actual, mean_actual, config.n1, config.n2
    )


@dataclass
class SweepRow:
    fraction: float
    mean_distance: float
    p: float
    result: PValueResult


@dataclass
class SweepResult:
    rows: list
    spearman: float  # rank correlation of fraction vs mean distance
    non_increasing: bool


def distance_sweep(
    train, test, group, config: PValueConfig, fractions, seed: int, workers: int = 1
) -> SweepResult:
    """p-values at several augmented fractions, sharing one calibration sample."""
    fractions = [float(f) for f in fractions]
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValueError("fractions must lie in [0, 1]")
    calibration = calibration_distances(train, test, group, config, seed, workers)
    rows = []
    for f in fractions:
        cfg = PValueConfig(**{**config.__dict__, "augmented_fraction": f})
        res = compute_pvalue(train, test, group, cfg, seed, workers, calibration=calibration)
        rows.append(SweepRow(f, res.mean_actual, res.p, res))
    means = [r.mean_distance for r in rows]
    if len(rows) > 1 and np.ptp(fractions) > 0:
        rho = float(stats.spearmanr(fractions, means).statistic)
    else:
        rho = float("nan")
    order = np.argsort(fractions, kind="stable")
    sorted_means = np.asarray(means)[order]
    return SweepResult(rows, rho, bool(np.all(np.diff(sorted_means) <= 0)))


def write_histogram_csv(result: PValueResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "kind", "distance"])
        for i, d in enumerate(result.calibration):
            w.writerow([i, "calibration", format(d, ".17g")])
        for i, d in enumerate(result.actual):
            w.writerow([i, "actual", format(d, ".17g")])


def summary(result: PValueResult) -> dict:
    return {"p": result.p, "n1": result.n1, "n2": result.n2, "mean_actual": result.mean_actual}


def write_summary(result: PValueResult, path) -> None:
    Path(path).write_text(json.dumps(summary(result), indent=2, sort_keys=True))
