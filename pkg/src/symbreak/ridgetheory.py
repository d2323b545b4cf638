"""Ridge regression with an invariant ground truth: three estimators, their
exact conditional bias/variance, expected risks, high-dimensional
deterministic equivalents, and Monte Carlo harnesses.

Estimators, with ``S = X^T X / n`` and ``s_yx = X^T y / n``:

* vanilla          ``(S + lam I)^-1 s_yx``
* test-symmetrized ``P0`` applied to the vanilla estimate
* augmented        ``(P0 S P0 + lam I)^-1 P0 s_yx`` (equal to training on the
  group-averaged second moments)

``lam = 0`` means the minimum-norm solution, with singular values of ``S``
below ``1e-10`` times the largest treated as zero.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import groups
from .groups import GroupAction
from .synthdata import MinimalModel, covariance_factor, invariant_beta, minimal_model_covariance

RCOND = 1e-10
INVARIANCE_TOL = 1e-10


class RegimeError(ValueError):
    pass


class EstimatorMode(str, Enum):
    VANILLA = "vanilla"
    TEST_SYMMETRIZED = "test_symmetrized"
    AUGMENTED = "augmented_invariant"


MODES = tuple(EstimatorMode)


def as_mode(mode) -> EstimatorMode:
    try:
        return EstimatorMode(mode)
    except ValueError:
        raise ValueError(f"unknown estimator mode {mode!r}; expected one of {[m.value for m in MODES]}") from None


@dataclass
class RidgeProblem:
    sigma: np.ndarray
    beta: np.ndarray
    sigma_noise: float
    n: int
    lam: float
    group: GroupAction
    invariant_truth: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        d = self.sigma.shape[0]
        if self.sigma.shape != (d, d) or self.beta.shape != (d,):
            raise groups.DimensionError("sigma must be d x d and beta a d-vector")
        if self.group.dim != d:
            raise groups.DimensionError(f"group acts on dimension {self.group.dim}, not {d}")
        if self.lam < 0 or self.n < 1 or self.sigma_noise < 0:
            raise ValueError("need lam >= 0, n >= 1 and sigma_noise >= 0")
        if np.linalg.eigvalsh((self.sigma + self.sigma.T) / 2).min() < -1e-8:
            raise ValueError("sigma is not positive semi-definite")
        if self.invariant_truth and np.max(np.abs(self.P0 @ self.beta - self.beta), initial=0) > INVARIANCE_TOL:
            raise ValueError("beta is not invariant under the group")

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    @property
    def P0(self) -> np.ndarray:
        if "P0" not in self._cache:
            self._cache["P0"] = groups.invariant_projection(self.group)
        return self._cache["P0"]

    @property
    def d0(self) -> int:
        return int(round(np.trace(self.P0)))

    @property
    def sigma_inv(self) -> np.ndarray:
        if "sigma_inv" not in self._cache:
            self._cache["sigma_inv"] = self.P0 @ self.sigma @ self.P0
        return self._cache["sigma_inv"]

    @property
    def factor(self) -> np.ndarray:
        if "factor" not in self._cache:
            self._cache["factor"] = covariance_factor(self.sigma)
        return self._cache["factor"]

    def sample(self, rng: np.random.Generator):
        X = rng.standard_normal((self.n, self.d)) @ self.factor.T
        return X, X @ self.beta + self.sigma_noise * rng.standard_normal(self.n)

    def risk(self, beta_hat) -> float:
        e = self.beta - beta_hat
        return float(e @ self.sigma @ e)


# -- estimators -------------------------------------------------------------------


def _ridge(X, y, lam):
    n, d = X.shape
    if lam == 0:
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        # cutoff on eigenvalues of X^T X / n, i.e. squared singular values
        keep = s**2 > RCOND * (s[0] ** 2 if s.size else 0.0)
        return Vt[keep].T @ ((U[:, keep].T @ y) / s[keep])
    if d > n:
        return X.T @ np.linalg.solve(X @ X.T / n + lam * np.eye(n), y / n)
    return np.linalg.solve(X.T @ X / n + lam * np.eye(d), X.T @ y / n)


def fit(X, y, lam: float, mode, P0) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise groups.DimensionError(f"X must be n x d and y an n-vector, got {X.shape} and {y.shape}")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    mode = as_mode(mode)
    P0 = np.asarray(P0, dtype=float)
    if mode is EstimatorMode.AUGMENTED:
        return P0 @ _ridge(X @ P0, y, lam)
    b = _ridge(X, y, lam)
    return P0 @ b if mode is EstimatorMode.TEST_SYMMETRIZED else b


def augmented_estimator(X, y, lam: float, group: GroupAction) -> np.ndarray:
    """Ridge on explicitly group-averaged second moments.

    Enumerates the group, so it is meant for small groups only.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    mats = [groups.matrix(group, g) for g in groups.elements(group)]
    S = X.T @ X / n
    s_yx = X.T @ y / n
    S_aug = sum(M @ S @ M.T for M in mats) / len(mats)
    s_aug = sum(M @ s_yx for M in mats) / len(mats)
    if lam == 0:
        return np.linalg.pinv(S_aug, rcond=RCOND, hermitian=True) @ s_aug
    return np.linalg.solve(S_aug + lam * np.eye(d), s_aug)


def augmentation_equivalence_check(X, y, lam: float, group: GroupAction) -> float:
    """Max-abs difference between the group-averaged and projected estimators."""
    P0 = groups.invariant_projection(group)
    return float(np.max(np.abs(augmented_estimator(X, y, lam, group) - fit(X, y, lam, EstimatorMode.AUGMENTED, P0))))


# -- conditional bias and variance ------------------------------------------------


@dataclass(frozen=True)
class BiasVariance:
    bias: float
    variance: float
    risk: float
    null_rank: int | None = None  # rank of the ridgeless null-space projector


def _pinv_sym(S):
    return np.linalg.pinv(S, rcond=RCOND, hermitian=True)


def bias_variance_conditional(X, problem: RidgeProblem, mode, lam: float | None = None) -> BiasVariance:
    """Exact E_eps[ ||beta - beta_hat||_Sigma^2 | X ] split into bias and variance.

    Uses the closed forms for an invariant beta; ``Sigma`` is replaced by
    ``P0 Sigma P0`` where the estimate lives in the invariant subspace.
    """
    mode = as_mode(mode)
    lam = problem.lam if lam is None else lam
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if mode is not EstimatorMode.VANILLA and not problem.invariant_truth:
        raise ValueError("closed forms for symmetrized estimators need an invariant beta")
    P0, Sig, b, s2 = problem.P0, problem.sigma, problem.beta, problem.sigma_noise**2
    S = X.T @ X / n
    if mode is EstimatorMode.AUGMENTED:
        S = P0 @ S @ P0
    # Sigma seen by the error vector: symmetrized estimates only err inside V0
    Sig_err = problem.sigma_inv if mode is EstimatorMode.TEST_SYMMETRIZED else Sig
    null_rank = None
    if lam > 0:
        R = np.linalg.inv(S + lam * np.eye(d))
        Rb = R @ b
        bias = lam**2 * Rb @ Sig_err @ Rb
        variance = s2 / n * np.trace(S @ R @ R @ Sig_err)
    else:
        Sp = _pinv_sym(S)
        base = P0 if mode is EstimatorMode.AUGMENTED else np.eye(d)
        Pi = base - Sp @ S
        null_rank = int(np.linalg.matrix_rank(Pi, tol=1e-8))
        Pb = Pi @ b
        bias = Pb @ Sig_err @ Pb
        variance = s2 / n * np.trace(Sp @ Sig_err)
    bias, variance = float(bias), float(variance)
    return BiasVariance(bias, variance, bias + variance, null_rank)


def smoother(X, lam: float, mode, P0) -> np.ndarray:
    """The d x n matrix L with beta_hat = L y."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    return np.column_stack([fit(X, e, lam, mode, P0) for e in np.eye(n)])


def noise_monte_carlo_risk(X, problem: RidgeProblem, mode, draws: int, seed, lam: float | None = None) -> float:
    """E_eps[ ||beta - beta_hat||_Sigma^2 | X ] estimated over ``draws`` noise vectors."""
    lam = problem.lam if lam is None else lam
    X = np.asarray(X, dtype=float)
    L = smoother(X, lam, mode, problem.P0)
    mean_err = problem.beta - L @ (X @ problem.beta)
    rng = np.random.default_rng(seed)
    total, done = 0.0, 0
    while done < draws:
        k = min(10_000, draws - done)
        E = problem.sigma_noise * rng.standard_normal((k, X.shape[0]))
        err = mean_err[None, :] - E @ L.T
        total += float(np.einsum("ki,ij,kj->", err, problem.sigma, err))
        done += k
    return total / draws


# -- expected risk, under-parameterized ---------------------------------------------


def expected_risk_underparam(problem: RidgeProblem, mode) -> float:
    """Expected ridgeless risk over Gaussian designs when d < n - 1."""
    mode = as_mode(mode)
    n, d, s2 = problem.n, problem.d, problem.sigma_noise**2
    if not d < n - 1:
        raise RegimeError(f"needs d < n - 1, got d={d}, n={n}")
    if mode is EstimatorMode.VANILLA:
        return s2 * d / (n - d - 1)
    if mode is EstimatorMode.AUGMENTED:
        d0 = problem.d0
        return s2 * d0 / (n - d0 - 1)
    if np.linalg.matrix_rank(problem.sigma) < d:
        raise RegimeError("the symmetrized risk needs a full-rank covariance")
    tr = float(np.trace(np.linalg.solve(problem.sigma, problem.sigma_inv)))
    return s2 * tr / (n - d - 1)


def perm_example_matrices(sigma_inv2: float, rho: float, tau: float):
    """Covariance on R^3 with the given block form in the invariant basis, and P0."""
    if not (sigma_inv2 > 0 and abs(tau) < 1 and sigma_inv2 * (1 + tau) > 2 * rho**2):
        raise ValueError("parameters leave the positive-definite domain")
    v0 = np.ones(3) / math.sqrt(3.0)
    vp1 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    vp2 = np.array([1.0, 1.0, -2.0]) / math.sqrt(6.0)
    V = np.column_stack([v0, vp1, vp2])
    M = np.array([[sigma_inv2, rho, rho], [rho, 1.0, tau], [rho, tau, 1.0]])
    return V @ M @ V.T, np.outer(v0, v0)


def perm_example_trace(sigma_inv2: float, rho: float, tau: float, tol: float = 1e-10) -> tuple[float, float]:
    """Tr(Sigma^-1 P0 Sigma P0) in closed form and from the assembled matrix."""
    sigma, P0 = perm_example_matrices(sigma_inv2, rho, tau)
    closed = 1.0 / (1.0 - 2.0 * rho**2 / (sigma_inv2 * (1.0 + tau)))
    numeric = float(np.trace(np.linalg.solve(sigma, P0 @ sigma @ P0)))
    if abs(closed - numeric) > tol * max(1.0, abs(closed)):
        raise ArithmeticError(f"closed form {closed!r} disagrees with numeric trace {numeric!r}")
    return closed, numeric


# -- deterministic equivalents ------------------------------------------------------


@dataclass
class AsymptoticSpec:
    kappa: float
    T: float
    gamma: float = float("nan")
    gamma0: float = float("nan")
    gamma_c: float = float("nan")
    df1: float = float("nan")  # Tr((S_mu + kappa)^-1 S_mu)
    df2: float = float("nan")  # Tr((S_mu + kappa)^-2 S_mu S_nu)
    alpha_mn: float = float("nan")
    alpha_mm: float = float("nan")
    bias: float = float("nan")
    variance: float = float("nan")
    diverged: bool = False

    @property
    def risk(self) -> float:
        return self.bias + self.variance


def _T(evals: np.ndarray, kappa: float, n: int) -> float:
    return float(np.sum(evals / (evals + kappa)) / n)


def kappa_from_eigenvalues(evals, n: int, lam: float, tol: float = 1e-12) -> tuple[float, float]:
    """Solve kappa (1 - T(kappa)) = lam by bisection; returns (kappa, T(kappa))."""
    evals = np.clip(np.asarray(evals, dtype=float), 0.0, None)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    rank = int(np.sum(evals > RCOND * max(evals.max(initial=0.0), 1e-300)))
    if lam == 0 and rank <= n:
        raise RegimeError(f"no positive ridgeless root: rank {rank} <= n = {n}")
    evals = evals[evals > 0]

    def g(k):
        return k * (1.0 - _T(evals, k, n)) - lam

    lo = max(lam, 1e-12)
    hi = lam + float(evals.sum()) / n
    if g(lo) > 0:
        # the root lies below the floor of the bracket; shrink toward zero
        while g(lo) > 0 and lo > 1e-300:
            lo /= 2
    if g(hi) < 0:
        raise ArithmeticError("fixed-point bracket does not contain a sign change")
    # bisect until the bracket collapses to adjacent floats
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    kappa = lo if abs(g(lo)) <= abs(g(hi)) else hi
    if abs(g(kappa)) > tol * max(1.0, lam):
        raise ArithmeticError(f"fixed point residual {g(kappa):.3g} above tolerance")
    return kappa, _T(evals, kappa, n)


def kappa_fixed_point(sigma_mu, n: int, lam: float) -> AsymptoticSpec:
    evals = np.linalg.eigvalsh((np.asarray(sigma_mu) + np.asarray(sigma_mu).T) / 2)
    kappa, T = kappa_from_eigenvalues(evals, n, lam)
    return AsymptoticSpec(kappa, T)


def _pair(mode: EstimatorMode, problem: RidgeProblem):
    plain, inv = problem.sigma, problem.sigma_inv
    if mode is EstimatorMode.VANILLA:
        return plain, plain
    if mode is EstimatorMode.TEST_SYMMETRIZED:
        return plain, inv
    return inv, plain


def dof_and_deterministic_risk(problem: RidgeProblem, mode, frag: AsymptoticSpec | None = None) -> AsymptoticSpec:
    """Deterministic-equivalent bias and variance for one estimator."""
    mode = as_mode(mode)
    S_mu, S_nu = _pair(mode, problem)
    evals, U = np.linalg.eigh((S_mu + S_mu.T) / 2)
    evals = np.clip(evals, 0.0, None)
    if frag is None:
        kappa, T = kappa_from_eigenvalues(evals, problem.n, problem.lam)
    else:
        kappa, T = frag.kappa, frag.T
    n = problem.n
    r = 1.0 / (evals + kappa)
    nu_diag = np.einsum("ij,jk,ki->i", U.T, S_nu, U)
    df1 = float(np.sum(evals * r))
    df2 = float(np.sum(evals * r**2 * nu_diag))
    alpha_mn = df2 / n
    alpha_mm = float(np.sum((evals * r) ** 2)) / n
    b = U.T @ problem.beta
    first = float(np.sum(b**2 * evals * r**2))
    rb = r * b
    second = float(rb @ (U.T @ S_nu @ U) @ rb)
    spec = AsymptoticSpec(
        kappa,
        T,
        gamma=problem.d / n,
        gamma0=problem.d0 / n,
        df1=df1,
        df2=df2,
        alpha_mn=alpha_mn,
        alpha_mm=alpha_mm,
    )
    if alpha_mm >= 1.0:
        spec.diverged = True
        spec.bias = spec.variance = float("inf")
        return spec
    spec.bias = kappa**2 * alpha_mn / (1.0 - alpha_mm) * first + kappa**2 * second
    spec.variance = problem.sigma_noise**2 * alpha_mn / (1.0 - alpha_mm)
    return spec


def isotropic_augmented_risk(gamma0: float, beta_norm: float = 1.0, sigma_noise: float = 1.0) -> float:
    """Ridgeless augmented risk for identity covariance when gamma0 > 1."""
    if not gamma0 > 1:
        raise RegimeError("needs gamma0 > 1")
    q = 1.0 / gamma0
    return (1.0 - q) * beta_norm**2 + sigma_noise**2 * q / (1.0 - q)


# -- minimal covariance model -------------------------------------------------------


@dataclass(frozen=True)
class MinimalModelSpec:
    sigma_c: float
    sigma_w: float
    d_c: int
    coupling: np.ndarray | None = None  # columns u_k
    coupling_factor: float = float("nan")

    def __post_init__(self):
        if not self.sigma_c > self.sigma_w >= 0:
            raise ValueError("need sigma_c > sigma_w >= 0")
        cf = self.coupling_factor
        if not math.isnan(cf) and not -1e-12 <= cf <= 1 + 1e-12:
            raise ValueError("coupling factor must lie in [0, 1]")

    @classmethod
    def from_model(cls, model: MinimalModel, beta) -> "MinimalModelSpec":
        return cls(model.sigma_c, model.sigma_w, model.d_c, model.coupling, model.coupling_factor(beta))


def minimal_model_kappa(s: float, w: float, g: float, gamma_c: float) -> float:
    """Nonnegative root of kappa^2 + b kappa + c = 0 (ridgeless fixed point).

    ``b = (s + w) - gamma_c s - (g - gamma_c) w`` and ``c = (1 - g) s w``.
    """
    if not g > gamma_c:
        raise ValueError("needs g > gamma_c")
    b = (s + w) - gamma_c * s - (g - gamma_c) * w
    c = (1.0 - g) * s * w
    disc = b * b - 4.0 * c
    if disc < 0:
        raise ArithmeticError("no real root")
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b)) if b != 0 else 0.5 * sq
    roots = [q, c / q] if q != 0 else [0.0, -b]
    return max(0.0, max(roots))


def minimal_model_alpha(s: float, w: float, g: float, gamma_c: float, kappa: float | None = None) -> float:
    k = minimal_model_kappa(s, w, g, gamma_c) if kappa is None else kappa
    first = gamma_c * (s / (s + k)) ** 2 if s + k > 0 else gamma_c
    second = (g - gamma_c) * (w / (w + k)) ** 2 if w + k > 0 else g - gamma_c
    return first + second


def minimal_model_closed_forms(s: float, w: float, g: float, gamma_c: float) -> tuple[float, float]:
    """(kappa, alpha) for the minimal model; pass s = (sigma_c + sigma_w)/2 and
    g = gamma0 for the augmented estimator."""
    k = minimal_model_kappa(s, w, g, gamma_c)
    return k, minimal_model_alpha(s, w, g, gamma_c, k)


@dataclass(frozen=True)
class StrongCorrelationReport:
    coupling_factor: float
    regime: str  # "correlational-under" (gamma_c < 1) or "correlational-over"
    bias_limit: float  # shared limit of both biases as sigma_w -> 0
    alpha_limit: float
    alpha_inv_limit: float
    kappa_limit: float
    kappa_inv_limit: float
    small_w_condition: bool  # gamma0 - gamma_c/2 < 1/2
    augmented_variance_larger: bool


def theorem3_limits(spec: MinimalModelSpec, gamma: float, gamma0: float, gamma_c: float, beta) -> StrongCorrelationReport:
    """Strong-correlation (sigma_w -> 0) limits of the minimal model, ridgeless."""
    if gamma_c == 1 or gamma0 == 1:
        raise RegimeError("gamma_c = 1 and gamma0 = 1 are excluded")
    if not gamma > gamma0 > gamma_c:
        raise RegimeError("needs gamma > gamma0 > gamma_c")
    beta = np.asarray(beta, dtype=float)
    nb2 = float(beta @ beta)
    C = spec.coupling_factor
    if math.isnan(C):
        raise ValueError("spec needs a coupling factor")
    s, sbar = spec.sigma_c, spec.sigma_c / 2
    k_lim = max(0.0, s * (gamma_c - 1))
    k_inv_lim = max(0.0, sbar * (gamma_c - 1))
    flag = gamma0 - gamma_c / 2 < 0.5
    if gamma_c > 1:
        bias = spec.sigma_c * (gamma_c - 1) * C * nb2 / (2 * gamma_c)
        a = a_inv = 1.0 / gamma_c
        larger = flag
        regime = "correlational-over"
    else:
        bias = 0.0
        a = gamma_c + (1 - gamma_c) ** 2 / (gamma - gamma_c)
        a_inv = gamma_c + (1 - gamma_c) ** 2 / (gamma0 - gamma_c)
        larger = a_inv > a
        regime = "correlational-under"
    return StrongCorrelationReport(C, regime, bias, a, a_inv, k_lim, k_inv_lim, flag, larger)


# -- Monte Carlo --------------------------------------------------------------------


@dataclass
class MCRisk:
    mean: float
    std: float
    risks: list

    @property
    def stderr(self) -> float:
        return self.std / math.sqrt(len(self.risks)) if len(self.risks) > 1 else float("nan")


def _trial_chunk(args):
    problem, modes, seqs = args
    out = []
    P0 = problem.P0
    for seq in seqs:
        rng = np.random.default_rng(seq)
        X, y = problem.sample(rng)
        out.append([problem.risk(fit(X, y, problem.lam, m, P0)) for m in modes])
    return out


def monte_carlo_risks(problem: RidgeProblem, modes, trials: int, seed, workers: int = 1) -> dict:
    """Risks of several estimators on shared draws of (X, y), per trial index."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    modes = [as_mode(m) for m in modes]
    seqs = np.random.SeedSequence(seed).spawn(trials)
    # fill the caches once so every worker receives them
    _ = problem.P0, problem.factor
    if workers <= 1:
        rows = _trial_chunk((problem, modes, seqs))
    else:
        size = math.ceil(trials / workers)
        chunks = [(problem, modes, seqs[i : i + size]) for i in range(0, trials, size)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = [r for part in ex.map(_trial_chunk, chunks) for r in part]
    arr = np.asarray(rows)
    return {
        m: MCRisk(float(arr[:, j].mean()), float(arr[:, j].std(ddof=1)) if trials > 1 else 0.0, arr[:, j].tolist())
        for j, m in enumerate(modes)
    }


def monte_carlo_risk(problem: RidgeProblem, mode, trials: int, seed, workers: int = 1) -> MCRisk:
    return monte_carlo_risks(problem, [mode], trials, seed, workers)[as_mode(mode)]


def bootstrap_positive_fraction(diffs, n_boot: int = 10_000, seed=0) -> float:
    """Fraction of bootstrap resamples whose mean difference is positive."""
    diffs = np.asarray(diffs, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(len(diffs), size=(n_boot, len(diffs)))
    return float(np.mean(diffs[idx].mean(axis=1) > 0))


def minimal_model_problem(
    n: int,
    d: int,
    d0: int,
    d_c: int,
    sigma_c: float,
    sigma_w: float,
    sigma_noise: float,
    lam: float,
    beta_seed=0,
    beta_norm: float = 1.0,
) -> tuple[RidgeProblem, MinimalModel]:
    """The minimal covariance model with S_m permuting the first d - d0 + 1 coordinates."""
    group = groups.permute_first(d - d0 + 1, d)
    model = minimal_model_covariance(d, d0, d_c, sigma_c, sigma_w, group)
    beta = invariant_beta(group, d, beta_norm, beta_seed)
    return RidgeProblem(model.sigma, beta, sigma_noise, n, lam, group), model
