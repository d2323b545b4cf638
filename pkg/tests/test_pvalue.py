import numpy as np
import pytest

from symbreak import classifier as clf
from symbreak import groups, mmdkernels as mk, pvalue as pv, synthdata as sd


def test_p_from_distances_counts_strict_exceedances():
    assert pv.p_from_distances([0.1, 0.2, 0.3, 0.4], 0.2) == pytest.approx(3 / 5)
    assert pv.p_from_distances([0.1, 0.2], 5.0) == pytest.approx(1 / 3)
    assert pv.p_from_distances([1.0] * 99, 0.0) == 1.0


def _clouds(seed, aniso=4.0, n=40):
    return sd.canonicalized_clouds(n, 6, aniso, seed)


@pytest.fixture(scope="module")
def so3():
    return groups.so3()


def test_deterministic_and_worker_independent(so3):
    cfg = pv.PValueConfig(n1=9, n2=2, subsample=10, kernel=mk.KernelSpec("chamfer", 1.0))
    a = pv.compute_pvalue(_clouds(0), _clouds(1), so3, cfg, seed=5)
    b = pv.compute_pvalue(_clouds(0), _clouds(1), so3, cfg, seed=5, workers=2)
    assert a.calibration == b.calibration and a.actual == b.actual and a.p == b.p
    assert len(a.calibration) == 9 and len(a.actual) == 2


def test_canonicalized_data_is_rejected(so3):
    cfg = pv.PValueConfig(n1=99, subsample=16, kernel=mk.KernelSpec("chamfer", 1.0))
    res = pv.compute_pvalue(_clouds(0, 8.0), _clouds(1, 8.0), so3, cfg, seed=0)
    assert res.p == pytest.approx(0.01)


def test_full_augmentation_makes_actual_a_calibration_draw(so3):
    cfg = pv.PValueConfig(n1=19, n2=1, subsample=10, augmented_fraction=1.0)
    res = pv.compute_pvalue(_clouds(0), _clouds(1), so3, cfg, seed=3)
    cal_cfg = pv.PValueConfig(n1=19, n2=1, subsample=10)
    assert pv.calibration_distances(_clouds(0), _clouds(1), so3, cal_cfg, seed=3) == res.calibration
    assert min(res.calibration) < res.mean_actual < max(res.calibration) or res.p > 0.05


def test_sweep_distance_decreases_with_augmentation(so3):
    cfg = pv.PValueConfig(n1=19, n2=5, subsample=16, kernel=mk.KernelSpec("chamfer", 1.0))
    sweep = pv.distance_sweep(_clouds(0, 8.0), _clouds(1, 8.0), so3, cfg, [0.0, 0.5, 1.0], seed=1)
    means = [r.mean_distance for r in sweep.rows]
    assert means[0] > means[2]
    assert sweep.spearman <= 0
    assert all(r.result.calibration == sweep.rows[0].result.calibration for r in sweep.rows)


def test_classifier_distance_round(so3):
    cfg = pv.PValueConfig(
        n1=2, subsample=30, distance="classifier", mlp=clf.MLPSpec(hidden=(8,)), train=clf.TrainConfig(epochs=2)
    )
    res = pv.compute_pvalue(_clouds(0), _clouds(1), so3, cfg, seed=0)
    assert all(0.0 <= d <= 1.0 for d in res.calibration + res.actual)


def test_errors_carry_round_index(so3):
    bad = sd.LabeledDataset(np.zeros((3, 2, 3)), [0, 0, 0], np.zeros((3, 2), bool))
    with pytest.raises(pv.DistanceError) as info:
        pv.compute_pvalue(bad, bad, so3, pv.PValueConfig(n1=2), seed=0)
    assert info.value.kind == "calibration" and info.value.index == 0
    with pytest.raises(ValueError):
        pv.PValueConfig(n1=0)
    with pytest.raises(ValueError):
        pv.compute_pvalue(_clouds(0), _clouds(1), so3, pv.PValueConfig(subsample=1000), seed=0)


def test_histogram_and_summary_files(tmp_path, so3):
    res = pv.compute_pvalue(_clouds(0), _clouds(1), so3, pv.PValueConfig(n1=3, subsample=8), seed=0)
    pv.write_histogram_csv(res, tmp_path / "h.csv")
    pv.write_summary(res, tmp_path / "s.json")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "round,kind,distance" and len(lines) == 1 + 3 + 1
    assert '"p"' in (tmp_path / "s.json").read_text()


def test_isotropic_clouds_are_not_rejected(so3):
    cfg = pv.PValueConfig(n1=99, n2=20, subsample=16, kernel=mk.KernelSpec("chamfer", 1.0))
    clean = 0
    for rerun in range(20):
        tr, te = _clouds(2 * rerun, 1.0, 200), _clouds(2 * rerun + 1, 1.0, 200)
        sweep = pv.distance_sweep(tr, te, so3, cfg, [0.0, 0.25, 0.5, 0.75, 1.0], seed=rerun)
        clean += all(r.p > 0.05 for r in sweep.rows)
    assert clean >= 18


def test_classifier_and_mmd_agree_on_canonicalized_data(so3):
    tr, te = _clouds(0, 16.0, 1000), _clouds(1, 16.0, 1000)
    mmd_cfg = pv.PValueConfig(n1=39, subsample=100, kernel=mk.KernelSpec("chamfer", 1.0))
    clf_cfg = pv.PValueConfig(
        n1=39, distance="classifier", mlp=clf.MLPSpec(hidden=(32, 32)), train=clf.TrainConfig(epochs=20, lr=3e-3)
    )
    p_mmd = pv.compute_pvalue(tr, te, so3, mmd_cfg, seed=0).p
    p_clf = pv.compute_pvalue(tr, te, so3, clf_cfg, seed=0).p
    assert p_mmd == p_clf == 1 / 40
