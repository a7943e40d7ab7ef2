"""Expectation propagation for Gaussian orthant probabilities of pairwise differences.

Approximates ``P(f[p_k] - f[m_k] >= 0 for all k)`` for ``f ~ N(mean, cov)``
with one Gaussian site per constraint.  Sites only see the differences
``u = A f`` (rows ``a_k = e_p - e_m``), so EP runs on ``u ~ N(c, C)`` with
``c = A m`` and ``C = A S A^T``, keeping the K-dimensional approximate
posterior and updating it with rank-one Sherman-Morrison steps.  The
normalizer is

    log Z = sum_k log s_k + sum_k (nu_k c_k - tau_k c_k^2 / 2)
            - log|B| / 2 + v^T Sigma_u v / 2,   B = I + T^1/2 C T^1/2

with ``v = nu - tau c`` and ``s_k`` the site scales.  Moments of f itself
follow from B by Woodbury (:func:`posterior_at`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

log = logging.getLogger(__name__)

LOG_PROB_FLOOR = math.log(1e-300)
_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LinearConstraint:
    """``f[plus_index] - f[minus_index] >= 0``."""

    plus_index: int
    minus_index: int

    def __post_init__(self):
        if self.plus_index == self.minus_index:
            raise ValueError("a constraint needs two distinct locations")


@dataclass(frozen=True)
class EpSettings:
    damping: float = 0.5
    tol: float = 1e-6
    max_sweeps: int = 100
    # restart damping for runs that fail to converge; 0 disables the retry
    retry_damping: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if not 0.0 <= self.retry_damping <= 1.0:
            raise ValueError("retry_damping must lie in [0, 1]")
        if self.tol <= 0 or self.max_sweeps < 1:
            raise ValueError("tol must be positive and max_sweeps at least 1")


@dataclass(frozen=True)
class EpResult:
    log_probability: float
    converged: bool
    sweeps: int
    skipped: int
    mean: np.ndarray
    cov: np.ndarray
    site_precision: np.ndarray
    site_shift: np.ndarray

    @property
    def probability(self) -> float:
        return math.exp(self.log_probability)


@njit(cache=True)
def _log_ndtr_and_ratio(a):
    # log Phi(a) and phi(a) / Phi(a)
    if a > -30.0:
        cdf = 0.5 * math.erfc(-a / _SQRT2)
        pdf = math.exp(-0.5 * a * a - _LOG_SQRT_2PI)
        return math.log(cdf), pdf / cdf
    x = -a
    x2 = x * x
    series = 1.0 - 1.0 / x2 + 3.0 / x2**2 - 15.0 / x2**3 + 105.0 / x2**4
    return -0.5 * a * a - math.log(x) - _LOG_SQRT_2PI + math.log(series), x / series


@njit(cache=True)
def _truncate_positive(mu, var):
    """Log mass, mean and variance of N(mu, var) restricted to [0, inf)."""
    sd = math.sqrt(var)
    a = mu / sd
    log_mass, ratio = _log_ndtr_and_ratio(a)
    new_mean = mu + sd * ratio
    shrink = 1.0 - ratio * (ratio + a)
    if shrink < 1e-300:
        shrink = 1e-300
    return log_mass, new_mean, var * shrink


@njit(cache=True)
def _functional_moments(mean, cov, plus, minus):
    """Mean and covariance of the differences ``u_k = f[plus_k] - f[minus_k]``."""
    K = plus.shape[0]
    c = np.empty(K)
    C = np.empty((K, K))
    for i in range(K):
        c[i] = mean[plus[i]] - mean[minus[i]]
        for j in range(K):
            C[i, j] = (
                cov[plus[i], plus[j]]
                - cov[plus[i], minus[j]]
                - cov[minus[i], plus[j]]
                + cov[minus[i], minus[j]]
            )
    return c, C


@njit(cache=True)
def _axis_sweeps(c, C, tau, nu, damping, tol, max_sweeps):
    # EP for u ~ N(c, C) restricted to u >= 0, one site per coordinate
    K = c.shape[0]
    Sigma = C.copy()
    mu = c.copy()
    col = np.empty(K)
    for k in range(K):
        if tau[k] != 0.0 or nu[k] != 0.0:
            _rank_one(Sigma, mu, col, k, tau[k], nu[k])
    skipped = 0
    sweeps = 0
    converged = K == 0
    while not converged and sweeps < max_sweeps:
        sweeps += 1
        biggest = 0.0
        for k in range(K):
            r = Sigma[k, k]
            if r <= 1e-300:
                skipped += 1
                continue
            tau_cav = 1.0 / r - tau[k]
            if tau_cav <= 0.0:
                skipped += 1
                continue
            nu_cav = mu[k] / r - nu[k]
            _, hat_mean, hat_var = _truncate_positive(nu_cav / tau_cav, 1.0 / tau_cav)
            tau_full = 1.0 / hat_var - tau_cav
            if tau_full < 0.0:
                tau_full = 0.0
            nu_full = hat_mean / hat_var - nu_cav
            new_tau = tau[k] + damping * (tau_full - tau[k])
            new_nu = nu[k] + damping * (nu_full - nu[k])
            dtau = new_tau - tau[k]
            dnu = new_nu - nu[k]
            # updates this small leave the posterior unchanged to rounding
            if abs(dtau) * r < 1e-15 and abs(dnu - dtau * mu[k]) * math.sqrt(r) < 1e-15:
                continue
            # relative, so near-deterministic sites with huge precision can converge
            change = max(abs(dtau) / (1.0 + abs(new_tau)), abs(dnu) / (1.0 + abs(new_nu)))
            if change > biggest:
                biggest = change
            _rank_one(Sigma, mu, col, k, dtau, dnu)
            tau[k] = new_tau
            nu[k] = new_nu
        converged = biggest < tol
    return Sigma, mu, sweeps, converged, skipped


@njit(cache=True, fastmath=True)
def _rank_one(Sigma, mu, col, k, dtau, dnu):
    K = mu.shape[0]
    for i in range(K):
        col[i] = Sigma[i, k]
    denom = 1.0 + dtau * col[k]
    c = dtau / denom
    coef = (dnu - dtau * mu[k]) / denom
    for i in range(K):
        mu[i] += coef * col[i]
    for i in range(K):
        ci = c * col[i]
        for j in range(K):
            Sigma[i, j] -= ci * col[j]


@njit(cache=True)
def _site_matrix(C, tau):
    """Lower Cholesky factor of ``I + T^1/2 C T^1/2``."""
    K = tau.shape[0]
    sq = np.sqrt(tau)
    L = np.zeros((K, K))
    for j in range(K):
        d = 1.0 + tau[j] * C[j, j]
        for q in range(j):
            d -= L[j, q] * L[j, q]
        # exact pivots are >= 1; the floor only absorbs rounding in C
        L[j, j] = math.sqrt(max(d, 1e-12))
        for i in range(j + 1, K):
            b = sq[i] * sq[j] * 0.5 * (C[i, j] + C[j, i])
            for q in range(j):
                b -= L[i, q] * L[j, q]
            L[i, j] = b / L[j, j]
    return L


@njit(cache=True)
def _axis_log_partition(c, C, tau, nu, Sigma, mu, L):
    K = c.shape[0]
    total = 0.0
    v = np.empty(K)
    for k in range(K):
        r = max(Sigma[k, k], 1e-300)
        tau_cav = 1.0 / r - tau[k]
        if tau_cav <= 0.0:
            return np.nan
        nu_cav = mu[k] / r - nu[k]
        log_mass, _, _ = _truncate_positive(nu_cav / tau_cav, 1.0 / tau_cav)
        total += (
            log_mass
            + 0.5 * math.log1p(tau[k] / tau_cav)
            + 0.5 * nu_cav * nu_cav / tau_cav
            - 0.5 * (nu_cav + nu[k]) ** 2 / (tau_cav + tau[k])
            + nu[k] * c[k]
            - 0.5 * tau[k] * c[k] * c[k]
        )
        v[k] = nu[k] - tau[k] * c[k]
    for i in range(K):
        total -= math.log(L[i, i])
    return total + 0.5 * (v @ (Sigma @ v))


@njit(cache=True)
def _retrying_sweeps(c, C, tau, nu, damping, retry_damping, tol, max_sweeps):
    tau0 = tau.copy()
    nu0 = nu.copy()
    Sigma, mu, sweeps, converged, skipped = _axis_sweeps(c, C, tau, nu, damping, tol, max_sweeps)
    if not converged and 0.0 < retry_damping < damping:
        tau[:] = tau0
        nu[:] = nu0
        Sigma, mu, more, converged, skipped2 = _axis_sweeps(
            c, C, tau, nu, retry_damping, tol, max_sweeps
        )
        sweeps += more
        skipped += skipped2
    return Sigma, mu, sweeps, converged, skipped


@njit(cache=True)
def ep_functional(c, C, tau, nu, damping, retry_damping, tol, max_sweeps):
    """EP estimate of P(u >= 0) for u ~ N(c, C), updating the sites in place.

    A run that fails to converge is restarted from the initial sites with
    ``retry_damping`` when that is positive and smaller than ``damping``.
    Returns (log Z clamped to [log 1e-300, 0], Cholesky factor of
    I + T^1/2 C T^1/2, sweeps, converged, skipped updates).
    """
    Sigma, mu, sweeps, converged, skipped = _retrying_sweeps(
        c, C, tau, nu, damping, retry_damping, tol, max_sweeps
    )
    K = c.shape[0]
    L = _site_matrix(C, tau)
    logz = 0.0
    if K > 0:
        logz = _axis_log_partition(c, C, tau, nu, Sigma, mu, L)
    if not np.isfinite(logz):
        converged = False
        logz = LOG_PROB_FLOOR
    logz = min(max(logz, LOG_PROB_FLOOR), 0.0)
    return logz, L, sweeps, converged, skipped


@njit(cache=True)
def _forward(L, x):
    y = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        acc = x[i]
        for j in range(i):
            acc -= L[i, j] * y[j]
        y[i] = acc / L[i, i]
    return y


@njit(cache=True)
def posterior_at(mean, cov, plus, minus, c, C, tau, nu, L, targets):
    """Moments of ``f[targets]`` under the prior times the Gaussian sites.

    Uses Woodbury with ``B = L L^T = I + T^1/2 C T^1/2``.
    """
    K = plus.shape[0]
    n = targets.shape[0]
    sq = np.sqrt(tau)
    # rows of W are L^-1 T^1/2 A S[:, t]
    W = np.empty((n, K))
    cross = np.empty((n, K))
    for t in range(n):
        for k in range(K):
            cross[t, k] = cov[targets[t], plus[k]] - cov[targets[t], minus[k]]
        W[t] = _forward(L, sq * cross[t])
    Sigma = np.empty((n, n))
    for a in range(n):
        for b in range(a, n):
            Sigma[a, b] = cov[targets[a], targets[b]] - W[a] @ W[b]
            Sigma[b, a] = Sigma[a, b]
    # beta = nu - T^1/2 B^-1 T^1/2 (c + C nu)
    z = _forward(L, sq * (c + C @ nu))
    back = np.empty(K)
    for i in range(K - 1, -1, -1):
        acc = z[i]
        for j in range(i + 1, K):
            acc -= L[j, i] * back[j]
        back[i] = acc / L[i, i]
    beta = nu - sq * back
    mu = np.empty(n)
    for t in range(n):
        mu[t] = mean[targets[t]] + cross[t] @ beta
    return mu, Sigma


@njit(cache=True)
def ep_run(mean, cov, plus, minus, tau, nu, damping, retry_damping, tol, max_sweeps):
    """Run EP in place on the site arrays ``tau``/``nu``.

    Returns (log Z clamped to [log 1e-300, 0], posterior mean, posterior
    covariance, sweeps, converged, skipped updates).
    """
    c, C = _functional_moments(mean, cov, plus, minus)
    logz, L, sweeps, converged, skipped = ep_functional(
        c, C, tau, nu, damping, retry_damping, tol, max_sweeps
    )
    mu, Sigma = posterior_at(mean, cov, plus, minus, c, C, tau, nu, L, np.arange(mean.shape[0]))
    return logz, mu, Sigma, sweeps, converged, skipped


def ep_pairs(
    mean: np.ndarray,
    cov: np.ndarray,
    plus: np.ndarray,
    minus: np.ndarray,
    settings: EpSettings = EpSettings(),
    site_precision: np.ndarray | None = None,
    site_shift: np.ndarray | None = None,
) -> EpResult:
    """Array form of :func:`ep_probability`; optional warm-start site parameters."""
    mean = np.ascontiguousarray(mean, dtype=float)
    cov = np.ascontiguousarray(cov, dtype=float)
    plus = np.ascontiguousarray(plus, dtype=np.int64)
    minus = np.ascontiguousarray(minus, dtype=np.int64)
    K = plus.shape[0]
    tau = np.zeros(K) if site_precision is None else np.array(site_precision, dtype=float)
    nu = np.zeros(K) if site_shift is None else np.array(site_shift, dtype=float)
    logz, mu, Sigma, sweeps, converged, skipped = ep_run(
        mean, cov, plus, minus, tau, nu,
        settings.damping, settings.retry_damping, settings.tol, settings.max_sweeps,
    )
    return EpResult(float(logz), bool(converged), int(sweeps), int(skipped), mu, Sigma, tau, nu)


def ep_probability(mean, cov, constraints, settings: EpSettings = EpSettings()) -> EpResult:
    """EP estimate of the probability that every constraint holds under N(mean, cov)."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (mean.shape[0], mean.shape[0]):
        raise ValueError("covariance shape does not match the mean")
    plus = np.array([c.plus_index for c in constraints], dtype=np.int64)
    minus = np.array([c.minus_index for c in constraints], dtype=np.int64)
    if plus.size and (max(plus.max(), minus.max()) >= mean.shape[0] or min(plus.min(), minus.min()) < 0):
        raise ValueError("constraint index outside the Gaussian's dimension")
    result = ep_pairs(mean, cov, plus, minus, settings)
    if not result.converged:
        log.debug("EP did not converge after %d sweeps", result.sweeps)
    if result.skipped:
        log.warning("EP skipped %d site updates with non-positive cavity precision", result.skipped)
    return result
