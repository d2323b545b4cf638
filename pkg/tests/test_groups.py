import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from symbreak import groups


def _perm_matrix_oracle(p, m, d):
    # (gx)_i = x_{p[i]}: row i picks column p[i]
    M = np.eye(d)
    M[:m, :m] = 0.0
    for i, j in enumerate(p):
        M[i, j] = 1.0
    return M


def test_c4_orbit_of_a_point_is_the_four_quarter_turns():
    g = groups.cyclic_rotation_2d(4)
    imgs = {tuple(np.round(groups.apply(g, e, np.array([1.0, 0.0])), 12) + 0.0) for e in groups.elements(g)}
    assert imgs == {(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)}


def test_c4_grid_orbit_matches_numpy_rot90(rng):
    g = groups.cyclic_rotation_2d(4, grid=5)
    img = rng.random((5, 5))
    got = {tuple(groups.apply(g, e, img.ravel())) for e in groups.elements(g)}
    want = {tuple(np.rot90(img, k).ravel()) for k in range(4)}
    assert got == want


def test_identity_is_first_element():
    for g in (groups.cyclic_rotation_2d(6), groups.trivial(3), groups.permute_first(3, 5)):
        e = groups.elements(g)[0]
        x = np.arange(g.dim, dtype=float) + 1
        assert np.array_equal(groups.apply(g, e, x), x)


def test_finite_matrix_group_moves_identity_to_front():
    R = np.array([[0.0, 1.0], [1.0, 0.0]])
    g = groups.finite_matrix_group([R, np.eye(2)])
    assert np.array_equal(g.matrices[0], np.eye(2))
    with pytest.raises(ValueError):
        groups.finite_matrix_group([R])


@st.composite
def finite_group_and_point(draw):
    kind = draw(st.sampled_from(["cyclic", "grid", "perm", "shift"]))
    if kind == "cyclic":
        g = groups.cyclic_rotation_2d(draw(st.integers(1, 8)))
    elif kind == "grid":
        g = groups.cyclic_rotation_2d(draw(st.sampled_from([1, 2, 4])), grid=draw(st.integers(2, 4)))
    elif kind == "perm":
        d = draw(st.integers(1, 6))
        g = groups.permute_first(draw(st.integers(1, min(d, 4))), d)
    else:
        g = groups.vertical_shift(draw(st.floats(0.5, 3.0)))
    x = np.array(draw(st.lists(st.floats(-0.24, 0.24), min_size=g.dim, max_size=g.dim)))
    return g, x


@given(finite_group_and_point(), st.data())
def test_compose_and_inverse_agree_with_action(gx, data):
    g, x = gx
    elems = groups.elements(g)
    a = elems[data.draw(st.integers(0, len(elems) - 1))]
    b = elems[data.draw(st.integers(0, len(elems) - 1))]
    ab = groups.compose(g, a, b)
    np.testing.assert_allclose(groups.apply(g, ab, x), groups.apply(g, a, groups.apply(g, b, x)), atol=1e-12)
    np.testing.assert_allclose(groups.apply(g, groups.inverse(g, a), groups.apply(g, a, x)), x, atol=1e-12)


@given(st.integers(1, 5), st.integers(0, 3))
def test_perm_matrix_matches_index_rule(m, extra):
    d = m + extra
    g = groups.permute_first(m, d)
    for p in itertools.permutations(range(m)):
        np.testing.assert_array_equal(groups.matrix(g, np.array(p)), _perm_matrix_oracle(p, m, d))


@pytest.mark.parametrize("m,d", [(1, 3), (3, 5), (4, 4), (5, 7)])
def test_perm_projection_equals_explicit_group_average(m, d):
    g = groups.permute_first(m, d)
    mats = [_perm_matrix_oracle(p, m, d) for p in itertools.permutations(range(m))]
    P = sum(mats) / len(mats)
    np.testing.assert_allclose(groups.invariant_projection(g), P, atol=1e-14)
    assert groups.invariant_dim(g) == d - m + 1


@pytest.mark.parametrize("m,d", [(2, 4), (3, 5), (4, 4)])
def test_perm_symmetrized_covariance_equals_explicit_average(m, d, rng):
    g = groups.permute_first(m, d)
    A = rng.standard_normal((d, d))
    S = A @ A.T
    mats = [_perm_matrix_oracle(p, m, d) for p in itertools.permutations(range(m))]
    want = sum(M @ S @ M.T for M in mats) / len(mats)
    np.testing.assert_allclose(groups.symmetrize_covariance(g, S), want, atol=1e-12)


def test_matrix_group_projection_is_orthogonal_projector():
    g = groups.cyclic_rotation_2d(4, grid=4)
    P = groups.invariant_projection(g)
    np.testing.assert_allclose(P @ P, P, atol=1e-12)
    np.testing.assert_allclose(P, P.T, atol=1e-12)
    # 16 cells in orbits of size 4 under quarter turns
    assert groups.invariant_dim(g) == 4
    assert groups.invariant_dim(groups.cyclic_rotation_2d(4)) == 0


def test_invariant_bases_are_orthonormal_and_complementary():
    g = groups.permute_first(4, 7)
    v0, vp = groups.invariant_bases(g)
    assert v0.shape == (7, 4) and vp.shape == (7, 3)
    B = np.hstack([v0, vp])
    np.testing.assert_allclose(B.T @ B, np.eye(7), atol=1e-12)
    np.testing.assert_allclose(v0 @ v0.T, groups.invariant_projection(g), atol=1e-12)


def test_so3_haar_samples_are_rotations_with_haar_moments():
    rng = np.random.default_rng(0)
    R = np.stack(groups.haar_samples(groups.so3(), 20000, rng))
    np.testing.assert_allclose(np.einsum("nij,nkj->nik", R, R), np.broadcast_to(np.eye(3), R.shape), atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-12)
    tr = np.trace(R, axis1=1, axis2=2)
    # the character of an irreducible representation: E[chi] = 0, E[chi^2] = 1
    assert abs(tr.mean()) < 0.03
    assert abs((tr**2).mean() - 1.0) < 0.05
    # entries of a Haar rotation have mean 0 and variance 1/3
    assert np.abs(R.mean(axis=0)).max() < 0.02
    assert np.abs((R**2).mean(axis=0) - 1 / 3).max() < 0.02


def test_haar_samples_consume_rng_like_repeated_calls():
    for g in (groups.so3(), groups.permute_first(4, 6), groups.cyclic_rotation_2d(5)):
        ra, rb = np.random.default_rng(3), np.random.default_rng(3)
        a = groups.haar_samples(g, 7, ra)
        b = [groups.haar_sample(g, rb) for _ in range(7)]
        for x, y in zip(a, b):
            np.testing.assert_allclose(np.asarray(x, dtype=float), np.asarray(y, dtype=float), atol=1e-14)
        assert ra.random() == rb.random()


def test_quaternion_rotation_about_z():
    t = 0.7
    q = np.array([math.cos(t / 2), 0.0, 0.0, math.sin(t / 2)])
    want = np.array([[math.cos(t), -math.sin(t), 0], [math.sin(t), math.cos(t), 0], [0, 0, 1]])
    np.testing.assert_allclose(groups.quaternion_to_matrix(q), want, atol=1e-14)


def test_vertical_shift_squares_to_identity_and_keeps_range():
    g = groups.vertical_shift(1.0)
    x = np.array([[0.3, -0.2, 0.05], [1.0, 2.0, 1.02], [0.0, 0.0, -0.4]])
    once = groups.apply(g, 1, x)
    np.testing.assert_allclose(once[:, 2], [1.05, 0.02, 0.6], atol=1e-12)
    np.testing.assert_allclose(groups.apply(g, 1, once), x, atol=1e-12)
    assert np.all((once[:, 2] >= -0.5) & (once[:, 2] < 1.5))
    with pytest.raises(groups.UnsupportedActionError):
        groups.matrix(g, 1)


def test_unsupported_operations_raise():
    with pytest.raises(groups.UnsupportedActionError):
        groups.invariant_projection(groups.so3())
    with pytest.raises(groups.UnsupportedActionError):
        groups.elements(groups.so3())
    with pytest.raises(groups.UnsupportedActionError):
        groups.elements(groups.permute_first(8, 8))
    with pytest.raises(groups.DimensionError):
        groups.apply(groups.so3(), np.eye(3), np.zeros(4))


@pytest.mark.parametrize(
    "text,dim,kind,order",
    [("trivial", 3, "matrix", 1), ("c4", None, "cyclic", 4), ("c4:grid=8", None, "cyclic", 4),
     ("so3", None, "so3", None), ("perm:first=4", 6, "perm", 24), ("shift:z=2", None, "shift", 2)],
)
def test_parse_group(text, dim, kind, order):
    g = groups.parse_group(text, dim)
    assert g.kind == kind and g.order == order


def test_parse_group_rejects_bad_text():
    for bad in ("foo", "perm:first=3", "c4:grid"):
        with pytest.raises(ValueError):
            groups.parse_group(bad)


def test_so3_preserves_pairwise_distances(rng):
    X = rng.standard_normal((9, 3))
    g = groups.haar_sample(groups.so3(), rng)
    Y = groups.apply(groups.so3(), g, X)
    dist = lambda A: np.linalg.norm(A[:, None] - A[None], axis=-1)
    np.testing.assert_allclose(dist(Y), dist(X), atol=1e-10)


def test_c4_haar_frequencies_pass_chi_square():
    from scipy import stats

    g = groups.cyclic_rotation_2d(4)
    rng = np.random.default_rng(1)
    keys = [groups.element_key(g, e) for e in groups.elements(g)]
    draws = [keys.index(groups.element_key(g, groups.haar_sample(g, rng))) for _ in range(10000)]
    counts = np.bincount(draws, minlength=4)
    assert np.all((counts / 10000 >= 0.23) & (counts / 10000 <= 0.27))
    assert stats.chisquare(counts).pvalue > 0.01


def test_so3_mean_rotation_is_near_zero():
    R = np.stack(groups.haar_samples(groups.so3(), 10000, np.random.default_rng(2)))
    assert np.linalg.norm(R.mean(axis=0), 2) < 0.05


def test_perm_first_projection_block_form():
    d, d0 = 9, 4
    m = d - d0 + 1
    P = groups.invariant_projection(groups.permute_first(m, d))
    want = np.eye(d)
    want[:m, :m] = 1.0 / m
    np.testing.assert_allclose(P, want, atol=1e-14)
    assert np.linalg.matrix_rank(P) == d0


def test_s3_on_three_coordinates():
    g = groups.permute_first(3, 3)
    P = groups.invariant_projection(g)
    w, V = np.linalg.eigh(P)
    np.testing.assert_allclose(w, [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(np.abs(V[:, -1]), np.ones(3) / math.sqrt(3), atol=1e-12)
    # the average of the six permuted copies of diag(1, 2, 3), by hand
    S = groups.symmetrize_covariance(g, np.diag([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(np.diag(S), [2.0, 2.0, 2.0], atol=1e-12)
    off = S[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, off[0], atol=1e-12)
