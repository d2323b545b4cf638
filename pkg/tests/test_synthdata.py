import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from symbreak import groups, synthdata as sd


def test_swiss_roll_structure():
    d = sd.swiss_roll(2001, 0.0, 0)
    assert d.x.shape == (2001, 3)
    assert np.sum(d.y == 0) == 1001 and np.sum(d.y == 1) == 1000
    r = np.linalg.norm(d.x[:, :2], axis=1)
    assert r.min() >= 1.5 * math.pi - 1e-9 and r.max() <= 4.5 * math.pi + 1e-9
    assert np.abs(d.x[:, 2]).max() < 0.5


@pytest.mark.parametrize("p", [0.0, 0.3, 1.0])
def test_swiss_roll_lift_fraction(p):
    d = sd.swiss_roll(20000, p, 1)
    lifted = d.x[:, 2] > 0.5
    assert not np.any(lifted[d.y == 0])
    assert abs(lifted[d.y == 1].mean() - p) < 0.02


def test_swiss_roll_classes_are_half_turns_of_each_other():
    d = sd.swiss_roll(4000, 0.0, 2)
    # each point at angle t has radius t; class 1 points sit at angle t + pi
    for cls, shift in ((0, 0.0), (1, math.pi)):
        pts = d.x[d.y == cls, :2]
        r = np.linalg.norm(pts, axis=1)
        ang = np.arctan2(pts[:, 1], pts[:, 0]) - shift
        assert np.allclose(np.cos(ang), np.cos(r), atol=1e-9)
        assert np.allclose(np.sin(ang), np.sin(r), atol=1e-9)


def test_swiss_roll_rejects_bad_p():
    with pytest.raises(sd.ConfigurationError):
        sd.swiss_roll(10, 1.5, 0)


def test_orbit_distribution_validation_and_exactness():
    assert sd.OrbitDistribution.uniform(3).weights == (Fraction(1, 3),) * 3
    assert sum(sd.OrbitDistribution.modes(6, 4).weights) == 1
    for bad in ((0.5, 0.6), (-0.1, 1.1), ()):
        with pytest.raises(sd.ConfigurationError):
            sd.OrbitDistribution(bad)


def test_orbit_dataset_draws_orbit_points_with_given_law():
    g = groups.cyclic_rotation_2d(4)
    dist = sd.OrbitDistribution((0.1, 0.2, 0.3, 0.4))
    d = sd.orbit_dataset(g, [1.0, 0.5], dist, 40000, 0)
    counts = np.bincount(d.y, minlength=4) / len(d)
    np.testing.assert_allclose(counts, [0.1, 0.2, 0.3, 0.4], atol=0.01)
    for k in range(4):
        pts = d.x[d.y == k]
        want = groups.apply(g, k, np.array([1.0, 0.5]))
        assert np.allclose(pts, want, atol=1e-12)
    with pytest.raises(sd.ConfigurationError):
        sd.orbit_dataset(g, [1.0, 0.5], sd.OrbitDistribution.uniform(3), 10, 0)


def test_detection_split_labels_and_transforms():
    g = groups.cyclic_rotation_2d(4)
    raw = sd.orbit_dataset(g, [1.0, 0.5], sd.OrbitDistribution.one_hot(4), 101, 0)
    det = sd.build_detection_dataset(raw, raw, g, seed=5)
    assert np.sum(det.train.y == 0) == 50 and np.sum(det.train.y == 1) == 51
    # untouched items keep the canonical pose; every item stays on the orbit
    np.testing.assert_allclose(det.train.x[det.train.y == 0], np.tile([1.0, 0.5], (50, 1)), atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(det.train.x, axis=1), math.hypot(1.0, 0.5), atol=1e-12)
    again = sd.build_detection_dataset(raw, raw, g, seed=5)
    np.testing.assert_array_equal(det.train.x, again.train.x)
    with pytest.raises(sd.EmptyDatasetError):
        sd.build_detection_dataset(raw.subset([]), raw, g, 0)


def test_transform_items_only_touches_selected():
    d = sd.canonicalized_clouds(10, 5, 4.0, 0)
    out = sd.transform_items(d, groups.so3(), np.random.default_rng(0), which=[2, 7])
    changed = [i for i in range(10) if not np.array_equal(out.x[i], d.x[i])]
    assert changed == [2, 7]
    # rotations preserve the point norms
    np.testing.assert_allclose(np.linalg.norm(out.x, axis=2), np.linalg.norm(d.x, axis=2), atol=1e-12)


def test_canonicalized_clouds_variance():
    d = sd.canonicalized_clouds(2000, 10, 9.0, 0)
    var = d.x.reshape(-1, 3).var(axis=0)
    np.testing.assert_allclose(var, [9.0, 1.0, 1.0], rtol=0.05)
    with pytest.raises(sd.ConfigurationError):
        sd.canonicalized_clouds(5, 3, 0.5, 0)


def test_grid_pattern_has_no_rotational_symmetry():
    for seed in range(5):
        g = sd.grid_pattern(4, seed).reshape(4, 4)
        assert all(not np.array_equal(g, np.rot90(g, k)) for k in (1, 2, 3))


def test_minimal_model_spectrum_and_coupling():
    g = groups.permute_first(13, 30)  # d0 = 18
    mm = sd.minimal_model_covariance(30, 18, 5, 2.0, 0.1, g)
    ev = np.sort(np.linalg.eigvalsh(mm.sigma))
    np.testing.assert_allclose(ev[-5:], 2.0, atol=1e-12)
    np.testing.assert_allclose(ev[:-5], 0.1, atol=1e-12)
    P0 = groups.invariant_projection(g)
    np.testing.assert_allclose(P0 @ mm.coupling, mm.v0[:, :5] / math.sqrt(2), atol=1e-12)
    assert mm.coupling_factor(mm.v0[:, 0] + mm.v0[:, 3]) == pytest.approx(1.0)
    assert mm.coupling_factor(mm.v0[:, 10]) == pytest.approx(0.0, abs=1e-14)
    assert mm.coupling_factor(mm.v0[:, 0] + mm.v0[:, 10]) == pytest.approx(0.5)
    with pytest.raises(sd.ConfigurationError):
        sd.minimal_model_covariance(30, 18, 13, 2.0, 0.1, g)


def test_covariance_factor_and_sampling(rng):
    A = rng.standard_normal((4, 2))
    S = A @ A.T  # rank 2
    L = sd.covariance_factor(S)
    np.testing.assert_allclose(L @ L.T, S, atol=1e-10)
    np.testing.assert_array_equal(sd.covariance_factor(np.zeros((3, 3))), np.zeros((3, 3)))
    with pytest.raises(np.linalg.LinAlgError):
        sd.covariance_factor(np.diag([1.0, -1.0]))
    S = np.array([[2.0, 0.5], [0.5, 1.0]])
    X, y = sd.gaussian_regression_sample(S, [1.0, -1.0], 0.0, 50000, 0)
    np.testing.assert_allclose(X.T @ X / len(X), S, atol=0.05)
    np.testing.assert_allclose(y, X @ [1.0, -1.0])


def test_invariant_beta():
    g = groups.permute_first(4, 7)
    b = sd.invariant_beta(g, 7, 2.5, 0)
    np.testing.assert_allclose(groups.invariant_projection(g) @ b, b, atol=1e-14)
    assert np.linalg.norm(b) == pytest.approx(2.5)


@given(st.integers(1, 6), st.integers(1, 5), st.booleans(), st.booleans())
def test_dataset_round_trip(n, m, cloud, masked):
    rng = np.random.default_rng(n * 10 + m)
    x = rng.standard_normal((n, m, 3)) if cloud else rng.standard_normal((n, m))
    mask = (rng.random((n, m)) < 0.7) if cloud and masked else None
    d = sd.LabeledDataset(x, rng.integers(0, 3, n), mask)
    import tempfile, pathlib

    with tempfile.TemporaryDirectory() as tmp:
        sd.save_dataset(d, pathlib.Path(tmp) / "set")
        back = sd.load_dataset(pathlib.Path(tmp) / "set")
    np.testing.assert_array_equal(back.x, d.x)
    np.testing.assert_array_equal(back.y, d.y)
    if mask is None:
        assert back.mask is None
    else:
        np.testing.assert_array_equal(back.mask, mask)


def test_load_rejects_other_format_version(tmp_path):
    d = sd.swiss_roll(4, 0.5, 0)
    _, js = sd.save_dataset(d, tmp_path / "s")
    js.write_text(js.read_text().replace('"format_version": 1', '"format_version": 99'))
    with pytest.raises(sd.ConfigurationError):
        sd.load_dataset(tmp_path / "s")


def test_fully_lifted_swiss_roll_is_separable_by_a_horizontal_plane():
    d = sd.swiss_roll(2000, 1.0, 3)
    assert np.all((d.x[:, 2] > 0.5) == (d.y == 1))


def test_uniform_orbit_frequencies_pass_chi_square():
    from scipy import stats

    g = groups.cyclic_rotation_2d(5)
    d = sd.orbit_dataset(g, [1.0, 0.2], sd.OrbitDistribution.uniform(5), 10000, 4)
    assert stats.chisquare(np.bincount(d.y, minlength=5)).pvalue > 0.01


def test_anisotropic_clouds_are_detectable():
    # a fixed threshold on the x share of the second moment lower-bounds the Bayes accuracy
    g = groups.so3()
    raw = sd.canonicalized_clouds(10000, 8, 16.0, 5)
    det = sd.build_detection_dataset(raw, raw, g, seed=6).train
    share = (det.x[..., 0] ** 2).sum(axis=1) / (det.x**2).sum(axis=(1, 2))
    acc = np.mean((share > 0.6) == (det.y == 0))
    assert acc > 0.9


def test_equal_variances_give_isotropic_minimal_model():
    g = groups.permute_first(5, 12)
    mm = sd.minimal_model_covariance(12, 8, 3, 0.7, 0.7, g)
    np.testing.assert_allclose(mm.sigma, 0.7 * np.eye(12), atol=1e-12)


def test_empirical_covariance_converges():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((5, 5))
    S = A @ A.T / 5 + 0.2 * np.eye(5)
    X, _ = sd.gaussian_regression_sample(S, np.zeros(5), 1.0, 100_000, 8)
    emp = X.T @ X / len(X)
    assert np.linalg.norm(emp - S, 2) / np.linalg.norm(S, 2) < 0.02
