"""Compact group actions on vectors and point clouds.

Elements are represented per kind:

* explicit finite kinds (``matrix``, ``cyclic``, ``shift``): an ``int`` index
  into the element list, with index 0 the identity;
* ``perm`` (symmetric group on the first ``m`` coordinates): an integer
  permutation array ``p`` with ``(g x)_i = x_{p[i]}`` for ``i < m``;
* ``so3``: a 3x3 rotation matrix.

Vectors of length ``dim`` and point clouds of shape ``(m, dim)`` are both
accepted by :func:`apply`; the action is taken row-wise on the last axis.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    pass


class UnsupportedActionError(ValueError):
    pass


MAX_ENUMERATED = 5040


@dataclass(frozen=True, eq=False)
class GroupAction:
    kind: str
    dim: int
    order: int | None  # None for continuous groups
    matrices: np.ndarray | None = field(default=None, repr=False)
    m: int = 0
    offset: float = 0.0
    label: str = ""

    @property
    def is_finite(self) -> bool:
        return self.order is not None

    def __str__(self) -> str:
        return self.label or self.kind


# -- constructors -----------------------------------------------------------


def finite_matrix_group(matrices, label: str = "") -> GroupAction:
    mats = np.asarray(matrices, dtype=float)
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise DimensionError(f"expected (r, d, d) matrices, got {mats.shape}")
    d = mats.shape[1]
    if not np.allclose(mats[0], np.eye(d), atol=1e-12):
        # keep the identity first so index 0 is always e
        idx = [i for i in range(len(mats)) if np.allclose(mats[i], np.eye(d), atol=1e-12)]
        if not idx:
            raise ValueError("matrix list does not contain the identity")
        order = [idx[0]] + [i for i in range(len(mats)) if i != idx[0]]
        mats = mats[order]
    return GroupAction("matrix", d, len(mats), matrices=mats, label=label or f"matrix:{len(mats)}")


def trivial(dim: int) -> GroupAction:
    return finite_matrix_group(np.eye(dim)[None], label="trivial")


def cyclic_rotation_2d(order: int, grid: int | None = None) -> GroupAction:
    """C_r acting by in-plane rotation.

    With ``grid=None`` the action is on 2D points (dim 2). With ``grid=k`` the
    action permutes the cells of a flattened k x k grid by quarter turns, which
    requires ``order`` in {1, 2, 4}.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if grid is None:
        mats = []
        for k in range(order):
            a = 2 * math.pi * k / order
            c, s = math.cos(a), math.sin(a)
            mats.append([[c, -s], [s, c]])
        mats = np.array(mats)
        # snap exact zeros / ones so quarter turns are exact permutations
        mats[np.abs(mats) < 1e-15] = 0.0
        return GroupAction("cyclic", 2, order, matrices=mats, label=f"c{order}")
    if order not in (1, 2, 4):
        raise ValueError("grid rotations support order 1, 2 or 4")
    n = grid * grid
    cells = np.arange(n).reshape(grid, grid)
    mats = []
    step = 4 // order
    for k in range(order):
        src = np.rot90(cells, k * step).ravel()
        P = np.zeros((n, n))
        P[np.arange(n), src] = 1.0
        mats.append(P)
    return GroupAction("cyclic", n, order, matrices=np.array(mats), label=f"c{order}:grid={grid}")


def vertical_shift(offset: float = 1.0) -> GroupAction:
    """Z2 acting on 3D points by a half-period translation of z.

    z is treated as a coordinate on a circle of circumference ``2*offset``
    with representatives in ``[-offset/2, 3*offset/2)``, so the shift squares
    to the identity.
    """
    if offset <= 0:
        raise ValueError("offset must be positive")
    return GroupAction("shift", 3, 2, offset=float(offset), label=f"shift:z={offset:g}")


def so3() -> GroupAction:
    return GroupAction("so3", 3, None, label="so3")


def permute_first(m: int, dim: int) -> GroupAction:
    """Symmetric group S_m permuting the first m of dim coordinates."""
    if not 1 <= m <= dim:
        raise ValueError(f"need 1 <= m <= dim, got m={m}, dim={dim}")
    return GroupAction("perm", dim, math.factorial(m), m=m, label=f"perm:first={m},d={dim}")


def parse_group(text: str, dim: int | None = None) -> GroupAction:
    """Parse the short text form used in configs and on the command line.

    Accepted forms: ``trivial``, ``c4`` (any ``c<r>``), ``c4:grid=8``, ``so3``,
    ``perm:first=13`` (needs ``dim`` unless ``d=`` is given), ``shift:z=1.0``.
    """
    head, _, rest = text.strip().lower().partition(":")
    opts = {}
    if rest:
        for part in rest.split(","):
            k, eq, v = part.partition("=")
            if not eq:
                raise ValueError(f"bad group option {part!r} in {text!r}")
            opts[k.strip()] = v.strip()
    if head == "trivial":
        return trivial(int(opts.get("d", dim or 1)))
    if head == "so3":
        return so3()
    if head == "shift":
        return vertical_shift(float(opts.get("z", 1.0)))
    if head == "perm":
        d = int(opts.get("d", dim or 0))
        if "first" not in opts or d <= 0:
            raise ValueError(f"perm group needs first=<m> and a dimension: {text!r}")
        return permute_first(int(opts["first"]), d)
    if head.startswith("c") and head[1:].isdigit():
        grid = int(opts["grid"]) if "grid" in opts else None
        return cyclic_rotation_2d(int(head[1:]), grid=grid)
    raise ValueError(f"unknown group {text!r}")


# -- elements ---------------------------------------------------------------


def identity(action: GroupAction):
    if action.kind == "so3":
        return np.eye(3)
    if action.kind == "perm":
        return np.arange(action.m)
    return 0


def elements(action: GroupAction) -> list:
    """All elements of a finite group, identity first."""
    if action.kind == "so3":
        raise UnsupportedActionError("cannot enumerate a continuous group")
    if action.kind == "perm":
        if action.order > MAX_ENUMERATED:
            raise UnsupportedActionError(f"S_{action.m} is too large to enumerate")
        return [np.array(p) for p in itertools.permutations(range(action.m))]
    return list(range(action.order))


def haar_sample(action: GroupAction, rng: np.random.Generator):
    if action.kind == "so3":
        return quaternion_to_matrix(random_unit_quaternion(rng))
    if action.kind == "perm":
        return rng.permutation(action.m)
    return int(rng.integers(action.order))


def haar_samples(action: GroupAction, n: int, rng: np.random.Generator) -> list:
    """n independent Haar samples; consumes the generator like n calls to haar_sample."""
    if action.kind == "so3":
        q = rng.standard_normal((n, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        return list(quaternions_to_matrices(q))
    return [haar_sample(action, rng) for _ in range(n)]


def random_unit_quaternion(rng: np.random.Generator) -> np.ndarray:
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def quaternion_to_matrix(q) -> np.ndarray:
    return quaternions_to_matrices(np.asarray(q, dtype=float)[None])[0]


def quaternions_to_matrices(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions (w, x, y, z), shape (n, 4) -> (n, 3, 3)."""
    w, x, y, z = q.T
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], axis=-1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], axis=-1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=1,
    )


def matrix(action: GroupAction, g) -> np.ndarray:
    """Orthogonal matrix representing g. Not defined for the z-shift."""
    if action.kind == "so3":
        return np.asarray(g, dtype=float)
    if action.kind == "perm":
        M = np.eye(action.dim)
        M[: action.m, : action.m] = 0.0
        M[np.arange(action.m), np.asarray(g)] = 1.0
        return M
    if action.kind == "shift":
        raise UnsupportedActionError("the z-shift is not a linear action")
    return action.matrices[g]


def _check_shape(action: GroupAction, x: np.ndarray) -> None:
    if x.ndim == 0 or x.shape[-1] != action.dim:
        raise DimensionError(f"{action} acts on last axis of size {action.dim}, got shape {x.shape}")


def apply(action: GroupAction, g, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_shape(action, x)
    if action.kind == "shift":
        if g == 0:
            return x.copy()
        out = x.copy()
        period = 2 * action.offset
        lo = -action.offset / 2
        out[..., 2] = np.mod(out[..., 2] + action.offset - lo, period) + lo
        return out
    if action.kind == "perm":
        out = x.copy()
        out[..., : action.m] = x[..., np.asarray(g)]
        return out
    return x @ matrix(action, g).T


def apply_batch(action: GroupAction, gs, xs) -> np.ndarray:
    """Apply gs[i] to xs[i] for every i."""
    xs = np.asarray(xs, dtype=float)
    if len(gs) != len(xs):
        raise DimensionError("need one group element per item")
    if len(xs) == 0:
        return xs.copy()
    if action.kind in ("so3", "matrix", "cyclic"):
        _check_shape(action, xs[0])
        mats = np.stack([matrix(action, g) for g in gs])
        if xs.ndim == 2:
            return np.einsum("nij,nj->ni", mats, xs)
        return np.einsum("nij,npj->npi", mats, xs)
    return np.stack([apply(action, g, x) for g, x in zip(gs, xs)])


def compose(action: GroupAction, g1, g2):
    """The element g1 g2 (apply g2 first)."""
    if action.kind == "so3":
        return np.asarray(g1) @ np.asarray(g2)
    if action.kind == "perm":
        return np.asarray(g2)[np.asarray(g1)]
    if action.kind == "shift":
        return (g1 + g2) % 2
    return _cayley(action)[g1, g2]


def inverse(action: GroupAction, g):
    if action.kind == "so3":
        return np.asarray(g).T
    if action.kind == "perm":
        return np.argsort(np.asarray(g))
    if action.kind == "shift":
        return g
    table = _cayley(action)
    return int(np.flatnonzero(table[g] == 0)[0])


def element_key(action: GroupAction, g):
    """Hashable key identifying a finite-group element."""
    if action.kind == "perm":
        return tuple(int(i) for i in np.asarray(g))
    if action.kind == "so3":
        return tuple(np.round(np.asarray(g), 12).ravel())
    return int(g)


_CAYLEY_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _cayley(action: GroupAction) -> np.ndarray:
    mats = action.matrices
    hit = _CAYLEY_CACHE.get(id(mats))
    if hit is not None and hit[0] is mats:
        return hit[1]
    r = len(mats)
    flat = mats.reshape(r, -1)
    table = np.empty((r, r), dtype=int)
    for i in range(r):
        prods = np.einsum("ij,njk->nik", mats[i], mats).reshape(r, -1)
        dist = np.abs(prods[:, None, :] - flat[None, :, :]).max(axis=2)
        j = dist.argmin(axis=1)
        if np.any(dist[np.arange(r), j] > 1e-8):
            raise ValueError("matrix set is not closed under composition")
        table[i] = j
    _CAYLEY_CACHE[id(mats)] = (mats, table)
    return table


def cayley_table(action: GroupAction) -> np.ndarray:
    if action.kind not in ("matrix", "cyclic"):
        raise UnsupportedActionError(f"no stored Cayley table for {action.kind}")
    return _cayley(action).copy()


# -- invariant subspace -----------------------------------------------------


def _require_linear_finite(action: GroupAction) -> None:
    if action.kind == "so3":
        raise UnsupportedActionError("projection onto SO(3) invariants is not supported")
    if action.kind == "shift":
        raise UnsupportedActionError("the z-shift is affine, not linear")


def invariant_projection(action: GroupAction) -> np.ndarray:
    """P0 = average of the representation matrices."""
    _require_linear_finite(action)
    if action.kind == "perm":
        P = np.eye(action.dim)
        P[: action.m, : action.m] = 1.0 / action.m
        return P
    return action.matrices.mean(axis=0)


def invariant_dim(action: GroupAction) -> int:
    if action.kind == "perm":
        return action.dim - action.m + 1
    return int(round(np.trace(invariant_projection(action))))


def symmetrize_covariance(action: GroupAction, S) -> np.ndarray:
    """Group average of g S g^T."""
    _require_linear_finite(action)
    S = np.asarray(S, dtype=float)
    if S.shape != (action.dim, action.dim):
        raise DimensionError(f"expected {(action.dim, action.dim)} matrix, got {S.shape}")
    if action.kind == "perm":
        m = action.m
        out = S.copy()
        A = S[:m, :m]
        diag = np.trace(A) / m
        off = (A.sum() - np.trace(A)) / (m * (m - 1)) if m > 1 else 0.0
        out[:m, :m] = off
        out[np.arange(m), np.arange(m)] = diag
        col = S[:m, m:].mean(axis=0)
        out[:m, m:] = col[None, :]
        out[m:, :m] = col[:, None]
        return out
    mats = action.matrices
    return np.einsum("gij,jk,glk->il", mats, S, mats) / len(mats)


def _sign_fix(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for j in range(out.shape[1]):
        nz = np.flatnonzero(np.abs(out[:, j]) > 1e-12)
        if nz.size and out[nz[0], j] < 0:
            out[:, j] = -out[:, j]
    return out


def invariant_bases(action: GroupAction) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases (columns) of V0 and its orthogonal complement."""
    P0 = invariant_projection(action)
    vals, vecs = np.linalg.eigh(P0)
    v0 = vecs[:, vals > 0.5]
    vperp = vecs[:, vals <= 0.5]
    return _sign_fix(v0[:, ::-1]), _sign_fix(vperp)
