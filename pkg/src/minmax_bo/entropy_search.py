"""Entropy Search for min-max problems.

The distribution over which representative theta is the min-max
minimizer is estimated by conditioning on sampled argmax functions ``g``
(theta -> worst-case slice).  Given ``g`` the event "theta_i* is the
minimizer" is a product of pairwise Heaviside factors

* consistency: ``f(theta_i, g_i) >= f(theta_i, z)`` for every row i, z != g_i
* minimizer:   ``f(theta_i, g_i) >= f(theta_i*, g_i*)`` for every i != i*

whose Gaussian probability is approximated with EP.  The consistency
sites do not depend on i*, so they are fitted once per ``g``; the
minimizer sites only touch the worst-case values ``w_i = f(theta_i, g_i)``
and are then fitted on the w-marginal of that approximation.  With
``refine=True`` every i* run instead continues full EP over all sites,
warm-started from the consistency sites.

Candidates i* whose single-constraint upper bound falls more than
``prune_margin`` nats below the best EP value found so far get weight 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import gp as gpm
from .ep import (
    EpSettings,
    LinearConstraint,
    _functional_moments,
    _log_ndtr_and_ratio,
    ep_functional,
    ep_pairs,
    posterior_at,
)
from .minmax import argmax_from_sample

log = logging.getLogger(__name__)

DEFAULT_MAX_JOINT = 256
DEFAULT_PRUNE_MARGIN = 40.0


@dataclass(frozen=True)
class RepresentativeSet:
    thetas: np.ndarray
    slice_positions: np.ndarray

    def __post_init__(self):
        if len(np.unique(self.thetas)) != len(self.thetas):
            raise ValueError("representative thetas must be distinct")

    @property
    def size(self) -> int:
        return len(self.thetas)

    @property
    def n_slices(self) -> int:
        return len(self.slice_positions)

    @property
    def layout(self) -> np.ndarray:
        """Flat joint index of (representative i, slice j)."""
        return np.arange(self.size * self.n_slices).reshape(self.size, self.n_slices)

    @property
    def joint_locations(self) -> np.ndarray:
        th, z = np.meshgrid(self.thetas, self.slice_positions, indexing="ij")
        return np.column_stack([th.ravel(), z.ravel()])


def select_representative_points(
    count: int,
    slice_positions,
    rng: np.random.Generator | None = None,
    placement: str = "uniform",
    max_joint: int = DEFAULT_MAX_JOINT,
) -> RepresentativeSet:
    """Representative thetas crossed with every slice.

    ``placement="uniform"`` spaces thetas evenly over [0, 1] including both
    ends; ``"random"`` draws them uniformly with ``rng``.
    """
    if count < 2:
        raise ValueError("need at least two representative points")
    slice_positions = np.asarray(slice_positions, dtype=float)
    if count * len(slice_positions) > max_joint:
        raise ValueError(
            f"{count} representatives x {len(slice_positions)} slices exceeds the "
            f"EP dimension cap of {max_joint}"
        )
    if placement == "uniform":
        thetas = np.linspace(0.0, 1.0, count)
    elif placement == "random":
        if rng is None:
            raise ValueError("random placement needs an rng")
        thetas = np.sort(rng.uniform(size=count))
    else:
        raise ValueError(f"unknown placement {placement!r}")
    return RepresentativeSet(thetas, slice_positions)


def argmax_functions(samples: np.ndarray, repset: RepresentativeSet) -> np.ndarray:
    """Argmax function of each joint sample row (rows: samples, columns: representatives)."""
    return np.stack([argmax_from_sample(row, repset.size, repset.n_slices) for row in samples])


def sample_argmax_functions(gp, repset: RepresentativeSet, M: int, rng: np.random.Generator):
    if M < 1:
        raise ValueError("need at least one argmax sample")
    return argmax_functions(gpm.sample_joint(gp, repset.joint_locations, M, rng), repset)


@njit(cache=True)
def _consistency_pairs(g, n_slices):
    N = g.shape[0]
    plus = np.empty(N * (n_slices - 1), dtype=np.int64)
    minus = np.empty(N * (n_slices - 1), dtype=np.int64)
    k = 0
    for i in range(N):
        for j in range(n_slices):
            if j != g[i]:
                plus[k] = i * n_slices + g[i]
                minus[k] = i * n_slices + j
                k += 1
    return plus, minus


@njit(cache=True)
def _minimizer_pairs(worst, i_star):
    N = worst.shape[0]
    plus = np.empty(N - 1, dtype=np.int64)
    minus = np.full(N - 1, worst[i_star], dtype=np.int64)
    k = 0
    for i in range(N):
        if i != i_star:
            plus[k] = worst[i]
            k += 1
    return plus, minus


@njit(cache=True)
def _minimizer_bounds(w_mean, w_cov):
    """Upper bound on log P(w_i >= w_i* for all i), for every i*."""
    N = w_mean.shape[0]
    bounds = np.zeros(N)
    for s in range(N):
        lowest = 0.0
        for i in range(N):
            if i == s:
                continue
            var = w_cov[i, i] + w_cov[s, s] - 2.0 * w_cov[i, s]
            diff = w_mean[i] - w_mean[s]
            if var > 1e-300:
                lp, _ = _log_ndtr_and_ratio(diff / math.sqrt(var))
            elif diff >= 0.0:
                lp = 0.0
            else:
                lp = -np.inf
            if lp < lowest:
                lowest = lp
        bounds[s] = lowest
    return bounds


@njit(cache=True)
def _conditional_logz(
    mean, cov, g, n_slices, tau_c, nu_c, tau_w, nu_w,
    damping, retry_damping, tol, max_sweeps, prune, counters,
):
    # counters: runs, unconverged, skipped updates, consistency sweeps, minimizer sweeps
    N = g.shape[0]
    plus, minus = _consistency_pairs(g, n_slices)
    c, C = _functional_moments(mean, cov, plus, minus)
    _, L, sweeps, conv, skipped = ep_functional(
        c, C, tau_c, nu_c, damping, retry_damping, tol, max_sweeps
    )
    counters[0] += 1
    counters[1] += not conv
    counters[2] += skipped
    counters[3] += sweeps
    worst = np.empty(N, dtype=np.int64)
    for i in range(N):
        worst[i] = i * n_slices + g[i]
    w_mean, w_cov = posterior_at(mean, cov, plus, minus, c, C, tau_c, nu_c, L, worst)
    bounds = _minimizer_bounds(w_mean, w_cov)
    order = np.argsort(-bounds, kind="mergesort")
    local = np.arange(N)
    logz = np.full(N, -np.inf)
    best = -np.inf
    for s in order:
        if bounds[s] < best - prune:
            continue
        mplus, mminus = _minimizer_pairs(local, s)
        cw, Cw = _functional_moments(w_mean, w_cov, mplus, mminus)
        lz, _, sweeps, conv, skipped = ep_functional(
            cw, Cw, tau_w[s], nu_w[s], damping, retry_damping, tol, max_sweeps
        )
        counters[0] += 1
        counters[1] += not conv
        counters[2] += skipped
        counters[4] += sweeps
        logz[s] = lz
        if lz > best:
            best = lz
    return logz


def build_constraints(repset: RepresentativeSet, g, i_star: int) -> list[LinearConstraint]:
    g = np.asarray(g, dtype=np.int64)
    if not 0 <= i_star < repset.size:
        raise ValueError(f"i_star={i_star} out of range")
    plus, minus = _consistency_pairs(g, repset.n_slices)
    worst = repset.layout[np.arange(repset.size), g]
    mplus, mminus = _minimizer_pairs(worst, i_star)
    return [
        LinearConstraint(int(p), int(m))
        for p, m in zip(np.concatenate([plus, mplus]), np.concatenate([minus, mminus]))
    ]


def _normalize_log_weights(logz: np.ndarray) -> np.ndarray:
    finite = np.isfinite(logz)
    if not finite.any():
        log.warning("all conditional probabilities vanished; falling back to uniform")
        return np.full(len(logz), 1.0 / len(logz))
    w = np.where(finite, np.exp(logz - logz[finite].max()), 0.0)
    return w / w.sum()


@dataclass
class EpStats:
    """Counters for EP runs that hit the iteration cap or skipped site updates."""

    runs: int = 0
    unconverged: int = 0
    skipped_updates: int = 0
    consistency_sweeps: int = 0
    minimizer_sweeps: int = 0

    def add(self, counters):
        self.runs += int(counters[0])
        self.unconverged += int(counters[1])
        self.skipped_updates += int(counters[2])
        if len(counters) > 3:
            self.consistency_sweeps += int(counters[3])
            self.minimizer_sweeps += int(counters[4])


@dataclass(frozen=True)
class Sites:
    """EP site parameters for one argmax function (consistency and per-i* minimizer sites)."""

    tau_c: np.ndarray
    nu_c: np.ndarray
    tau_w: np.ndarray
    nu_w: np.ndarray

    @classmethod
    def empty(cls, N: int, n_slices: int) -> Sites:
        K = N * (n_slices - 1)
        return cls(np.zeros(K), np.zeros(K), np.zeros((N, N - 1)), np.zeros((N, N - 1)))


def conditional_popt_moments(
    mean: np.ndarray,
    cov: np.ndarray,
    repset: RepresentativeSet,
    g,
    settings: EpSettings = EpSettings(),
    refine: bool = False,
    stats: EpStats | None = None,
    prune_margin: float | None = DEFAULT_PRUNE_MARGIN,
    sites: Sites | None = None,
) -> np.ndarray:
    """Probability of each representative being the minimizer given argmax function ``g``.

    ``mean``/``cov`` are the latent predictive moments at ``repset.joint_locations``.
    ``sites`` warm-starts the staged EP runs and receives the converged values.
    """
    g = np.ascontiguousarray(g, dtype=np.int64)
    N = repset.size
    if g.shape != (N,) or g.min() < 0 or g.max() >= repset.n_slices:
        raise ValueError("argmax sample does not match the representative set")
    if N == 1:
        return np.ones(1)
    stats = stats if stats is not None else EpStats()
    prune = math.inf if prune_margin is None else float(prune_margin)
    mean = np.ascontiguousarray(mean, dtype=float)
    cov = np.ascontiguousarray(cov, dtype=float)
    if refine:
        return _refined_popt(mean, cov, repset, g, settings, stats, prune)
    sites = sites if sites is not None else Sites.empty(N, repset.n_slices)
    counters = np.zeros(5, dtype=np.int64)
    logz = _conditional_logz(
        mean, cov, g, repset.n_slices, sites.tau_c, sites.nu_c, sites.tau_w, sites.nu_w,
        settings.damping, settings.retry_damping, settings.tol, settings.max_sweeps,
        prune, counters,
    )
    stats.add(counters)
    return _normalize_log_weights(logz)


def _refined_popt(mean, cov, repset, g, settings, stats, prune):
    N = repset.size
    plus, minus = _consistency_pairs(g, repset.n_slices)
    base = ep_pairs(mean, cov, plus, minus, settings)
    stats.add((1, not base.converged, base.skipped))
    worst = repset.layout[np.arange(N), g]
    w_mean = np.ascontiguousarray(base.mean[worst])
    w_cov = np.ascontiguousarray(base.cov[np.ix_(worst, worst)])
    # full runs also carry the consistency mass
    bounds = _minimizer_bounds(w_mean, w_cov) + base.log_probability
    logz = np.full(N, -np.inf)
    best = -np.inf
    for s in np.argsort(-bounds, kind="stable"):
        if bounds[s] < best - prune:
            continue
        mplus, mminus = _minimizer_pairs(worst, s)
        res = ep_pairs(
            mean,
            cov,
            np.concatenate([plus, mplus]),
            np.concatenate([minus, mminus]),
            settings,
            site_precision=np.concatenate([base.site_precision, np.zeros(N - 1)]),
            site_shift=np.concatenate([base.site_shift, np.zeros(N - 1)]),
        )
        stats.add((1, not res.converged, res.skipped))
        logz[s] = res.log_probability
        best = max(best, res.log_probability)
    return _normalize_log_weights(logz)


def popt_moments(
    mean,
    cov,
    repset,
    argmax_samples,
    settings=EpSettings(),
    refine=False,
    stats=None,
    prune_margin=DEFAULT_PRUNE_MARGIN,
):
    """Mean of the conditional distributions over the sampled argmax functions.

    Identical argmax functions are evaluated once and weighted by multiplicity.
    """
    argmax_samples = np.atleast_2d(np.asarray(argmax_samples, dtype=np.int64))
    if argmax_samples.shape[0] < 1:
        raise ValueError("need at least one argmax sample")
    unique, counts = np.unique(argmax_samples, axis=0, return_counts=True)
    total = np.zeros(repset.size)
    for g, c in zip(unique, counts):
        total += c * conditional_popt_moments(
            mean, cov, repset, g, settings, refine, stats, prune_margin
        )
    return total / counts.sum()


def conditional_popt(gp, repset, g, settings=EpSettings(), refine=False) -> np.ndarray:
    mean, cov = gpm.predict(gp, repset.joint_locations)
    return conditional_popt_moments(mean, cov, repset, g, settings, refine)


def p_opt(gp, repset, argmax_samples, settings=EpSettings(), refine=False) -> np.ndarray:
    mean, cov = gpm.predict(gp, repset.joint_locations)
    return popt_moments(mean, cov, repset, argmax_samples, settings, refine)


def entropy(p) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(max(-(nz * np.log(nz)).sum(), 0.0))


@dataclass(frozen=True)
class EsConfig:
    representative_count: int = 20
    argmax_samples: int = 10
    quadrature_nodes: int = 9
    ep: EpSettings = field(default_factory=EpSettings)
    refine: bool = False
    prune_margin: float | None = DEFAULT_PRUNE_MARGIN

    def __post_init__(self):
        if self.representative_count < 2:
            raise ValueError("representative_count must be at least 2")
        if self.argmax_samples < 1 or self.quadrature_nodes < 1:
            raise ValueError("argmax_samples and quadrature_nodes must be at least 1")
        if self.prune_margin is not None and self.prune_margin < 0:
            raise ValueError("prune_margin must be non-negative")


@dataclass
class PoptLog:
    """Optimum distributions computed while scoring, kept for auditing."""

    distributions: list = field(default_factory=list)
    ep: EpStats = field(default_factory=EpStats)
    keep_distributions: bool = True


def _quadrature(nodes: int):
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    return x, w / w.sum()


class _Scorer:
    def __init__(self, gp, repset, normals, config, audit):
        self.repset = repset
        self.normals = normals
        self.config = config
        self.audit = audit
        self.scale = gp.params.signal_std**2

    def entropy_under(self, mean, cov) -> float:
        samples = gpm.gaussian_draws(mean, cov, self.normals, self.scale)
        gs = argmax_functions(samples, self.repset)
        c = self.config
        p = popt_moments(
            mean, cov, self.repset, gs, c.ep, c.refine, self.audit.ep, c.prune_margin
        )
        if self.audit.keep_distributions:
            self.audit.distributions.append(p)
        return entropy(p)


def es_scores(
    gp,
    candidates,
    repset: RepresentativeSet,
    normals: np.ndarray,
    config: EsConfig = EsConfig(),
    audit: PoptLog | None = None,
) -> np.ndarray:
    """Expected entropy reduction of the optimum distribution for each candidate location.

    ``normals`` (argmax samples x joint locations) are the shared standard
    normal draws turned into argmax functions under the current posterior and
    under every fantasized posterior.
    """
    audit = audit if audit is not None else PoptLog()
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    joint = repset.joint_locations
    scorer = _Scorer(gp, repset, normals, config, audit)
    mean, cov = gpm.predict(gp, joint)
    h_now = scorer.entropy_under(mean, cov)
    nodes, weights = _quadrature(config.quadrature_nodes)
    scores = np.empty(len(candidates))
    for c, cand in enumerate(candidates):
        basis = gpm.fantasy_basis(gp, cand, joint)
        f_cov = basis.fantasy_cov
        ys = basis.cand_mean + np.sqrt(basis.obs_var) * nodes
        h_next = 0.0
        for w, f_mean in zip(weights, basis.fantasy_mean(ys)):
            h_next += w * scorer.entropy_under(f_mean, f_cov)
        scores[c] = h_now - h_next
    return scores


def es_acquisition(gp, candidate, repset, normals, config: EsConfig = EsConfig()) -> float:
    """ES score at ``candidate = (theta_scaled, slice_index)``."""
    theta, idx = candidate
    location = [float(theta), float(repset.slice_positions[int(idx)])]
    return float(es_scores(gp, [location], repset, normals, config)[0])
