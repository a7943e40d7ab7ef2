"""Exact Gaussian process regression with a fixed ARD squared-exponential kernel.

Zero prior mean, hyperparameters injected by the caller and never learned.
Inputs live in the unit square: first coordinate is the scaled controllable
parameter, second the scaled slice position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

JITTER_START = 1e-10
JITTER_STOP = 1e-6
JITTER_FACTOR = 100.0


class ConditioningError(np.linalg.LinAlgError):
    """A covariance matrix could not be factorized even with maximal jitter."""


@dataclass(frozen=True)
class KernelParams:
    signal_std: float
    lengthscales: tuple[float, ...]
    noise_std: float

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in self.lengthscales))
        if self.signal_std <= 0 or self.noise_std <= 0:
            raise ValueError("signal_std and noise_std must be positive")
        if not self.lengthscales or min(self.lengthscales) <= 0:
            raise ValueError("lengthscales must be a non-empty vector of positive values")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)


def kernel_matrix(a, b, params: KernelParams) -> np.ndarray:
    """Cross-covariance matrix between the rows of ``a`` and ``b``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != params.dim or b.shape[1] != params.dim:
        raise ValueError(
            f"points have dimension {a.shape[1]}/{b.shape[1]}, kernel expects {params.dim}"
        )
    ls = np.asarray(params.lengthscales)
    a = a / ls
    b = b / ls
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    np.maximum(sq, 0.0, out=sq)
    return params.signal_std**2 * np.exp(-0.5 * sq)


def kernel_eval(x1, x2, params: KernelParams) -> float:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != (params.dim,) or x2.shape != (params.dim,):
        raise ValueError(f"expected points of dimension {params.dim}")
    d = (x1 - x2) / np.asarray(params.lengthscales)
    return float(params.signal_std**2 * np.exp(-0.5 * np.dot(d, d)))


def robust_cholesky(matrix: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``matrix + jitter * I``.

    Jitter starts at ``1e-10 * scale`` and grows by 100x up to ``1e-6 * scale``.
    Returns the factor and the jitter that was used.
    """
    n = matrix.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    jitter = JITTER_START
    while True:
        try:
            factor = linalg.cholesky(
                matrix + jitter * scale * np.eye(n), lower=True, check_finite=False
            )
            if np.all(np.isfinite(factor)):
                return factor, jitter * scale
        except linalg.LinAlgError:
            pass
        jitter *= JITTER_FACTOR
        if jitter > JITTER_STOP * (1 + 1e-9):
            raise ConditioningError(
                f"{n}x{n} covariance is not positive definite even with jitter "
                f"{JITTER_STOP * scale:.1e}; the matrix is too badly conditioned"
            )


@dataclass(frozen=True)
class GpPosterior:
    """Immutable GP posterior; build it with :func:`fit`."""

    X: np.ndarray
    y: np.ndarray
    params: KernelParams
    gram_factor: np.ndarray = field(repr=False)
    dual_weights: np.ndarray = field(repr=False)
    # diagonal jitter the factorization needed on top of the noise
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def observation_variance(self) -> float:
        """Noise variance of a new observation, with the same jitter as the Gram diagonal."""
        return self.params.noise_std**2 + self.jitter


def fit(X, y, params: KernelParams) -> GpPosterior:
    """Condition the zero-mean GP on observations ``y`` at rows of ``X``.

    An empty dataset yields the prior.
    """
    X = np.asarray(X, dtype=float).reshape(-1, params.dim)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} locations but {y.shape[0]} observations")
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError("GP inputs must lie in the unit box")
    gram = kernel_matrix(X, X, params) + params.noise_std**2 * np.eye(X.shape[0])
    factor, jitter = robust_cholesky(gram, params.signal_std**2)
    if X.shape[0]:
        alpha = linalg.cho_solve((factor, True), y, check_finite=False)
    else:
        alpha = np.zeros(0)
    X.setflags(write=False)
    y.setflags(write=False)
    return GpPosterior(X, y, params, factor, alpha, jitter)


def _cross_terms(gp: GpPosterior, queries: np.ndarray):
    k_star = kernel_matrix(queries, gp.X, gp.params) if gp.n else np.zeros((len(queries), 0))
    mean = k_star @ gp.dual_weights
    v = (
        linalg.solve_triangular(gp.gram_factor, k_star.T, lower=True, check_finite=False)
        if gp.n
        else np.zeros((0, len(queries)))
    )
    return mean, v


def predict(gp: GpPosterior, queries, full_cov: bool = True):
    """Predictive mean and covariance (or variances if ``full_cov`` is False).

    Observation noise is not included.
    """
    queries = np.asarray(queries, dtype=float).reshape(-1, gp.params.dim)
    if queries.shape[0] == 0:
        return np.zeros(0), (np.zeros((0, 0)) if full_cov else np.zeros(0))
    mean, v = _cross_terms(gp, queries)
    sv2 = gp.params.signal_std**2
    if not full_cov:
        var = sv2 - (v * v).sum(0)
        return mean, np.maximum(var, 0.0)
    cov = kernel_matrix(queries, queries, gp.params) - v.T @ v
    cov = 0.5 * (cov + cov.T)
    diag = np.einsum("ii->i", cov)
    np.maximum(diag, 0.0, out=diag)
    return mean, cov


def gaussian_draws(mean: np.ndarray, cov: np.ndarray, normals: np.ndarray, scale: float):
    """Map standard normals (count x n) to draws from N(mean, cov)."""
    factor, _ = robust_cholesky(cov, scale)
    return mean[None, :] + normals @ factor.T


def sample_joint(gp: GpPosterior, queries, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` joint draws of the latent function at ``queries`` (count x len(queries))."""
    if count < 1:
        raise ValueError("count must be at least 1")
    mean, cov = predict(gp, queries)
    normals = rng.standard_normal((count, mean.shape[0]))
    return gaussian_draws(mean, cov, normals, gp.params.signal_std**2)


def fantasize(gp: GpPosterior, location, y_fictive: float) -> GpPosterior:
    """Posterior after adding the fictive observation ``y_fictive`` at ``location``."""
    location = np.asarray(location, dtype=float).reshape(1, gp.params.dim)
    X = np.vstack([gp.X, location])
    y = np.append(gp.y, float(y_fictive))
    return fit(X, y, gp.params)


@dataclass(frozen=True)
class FantasyBasis:
    """Closed form of all one-point fantasies at a fixed candidate.

    After observing ``y`` at the candidate, the latent posterior at the
    target locations has mean ``mean + gain * (y - cand_mean)`` and
    covariance ``cov - outer(cross, cross) / obs_var``; the covariance
    does not depend on ``y``.
    """

    mean: np.ndarray
    cov: np.ndarray
    cross: np.ndarray
    cand_mean: float
    obs_var: float

    @property
    def gain(self) -> np.ndarray:
        return self.cross / self.obs_var

    @property
    def fantasy_cov(self) -> np.ndarray:
        return self.cov - np.outer(self.cross, self.cross) / self.obs_var

    def fantasy_mean(self, y_fictive) -> np.ndarray:
        """Mean at the targets, one row per fictive observation."""
        shift = np.atleast_1d(np.asarray(y_fictive, dtype=float)) - self.cand_mean
        return self.mean[None, :] + shift[:, None] * self.gain[None, :]


def fantasy_basis(gp: GpPosterior, candidate, targets) -> FantasyBasis:
    targets = np.asarray(targets, dtype=float).reshape(-1, gp.params.dim)
    candidate = np.asarray(candidate, dtype=float).reshape(1, gp.params.dim)
    mean, cov = predict(gp, np.vstack([targets, candidate]))
    n = targets.shape[0]
    obs_var = cov[n, n] + gp.observation_variance
    return FantasyBasis(mean[:n], cov[:n, :n], cov[:n, n].copy(), float(mean[n]), float(obs_var))
