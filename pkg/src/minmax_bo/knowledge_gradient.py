"""Knowledge Gradient for min-max problems.

The score of a candidate is the expected drop of the posterior-mean min-max
value on a theta grid x slices after one fantasized evaluation there,
estimated with Monte Carlo fantasies.  Because only the mean moves after a
single observation, and it moves along the fixed direction
``cov(targets, candidate) / sqrt(obs_var)``, every fantasy table is
``mean + z * direction`` and all candidates are scored with one batched pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gp as gpm
from .minmax import batched_minmax_value, grid_locations, grid_minmax


@dataclass(frozen=True)
class KgConfig:
    fantasy_count: int = 32
    grid_resolution: int = 100

    def __post_init__(self):
        if self.fantasy_count < 1:
            raise ValueError("fantasy_count must be at least 1")
        if self.grid_resolution < 2:
            raise ValueError("grid_resolution must be at least 2")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_resolution)


def posterior_mean_minmax(gp, grid, slice_positions) -> tuple[int, int, float]:
    """(theta index, slice index, value) of the min-max of the posterior mean table."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    mean, _ = gpm.predict(gp, grid_locations(grid, slice_positions), full_cov=False)
    return grid_minmax(mean.reshape(len(grid), -1))


def kg_scores(gp, candidates, grid, slice_positions, normals, chunk: int = 64) -> np.ndarray:
    """KG score of every candidate location with shared standard normals ``normals`` (J,).

    ``candidates`` are GP input rows ``(theta, slice position)``.  Scores are
    raw differences and may be negative.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    normals = np.asarray(normals, dtype=float).reshape(-1)
    if normals.size == 0:
        raise ValueError("need at least one fantasy")
    grid = np.asarray(grid, dtype=float)
    targets = grid_locations(grid, slice_positions)
    G, Z = len(grid), len(slice_positions)
    mean, _ = gpm.predict(gp, targets, full_cov=False)
    mu_now = float(batched_minmax_value(mean.reshape(G, Z)))
    noise = gp.observation_variance
    scores = np.empty(len(candidates))
    for lo in range(0, len(candidates), chunk):
        block = candidates[lo : lo + chunk]
        _, joint = gpm.predict(gp, np.vstack([targets, block]))
        n = len(targets)
        cross = joint[:n, n:]
        obs_var = np.diag(joint)[n:] + noise
        direction = (cross / np.sqrt(obs_var)).T  # (block, targets)
        tables = mean[None, None, :] + normals[None, :, None] * direction[:, None, :]
        after = batched_minmax_value(tables.reshape(len(block), len(normals), G, Z))
        scores[lo : lo + chunk] = mu_now - after.mean(axis=1)
    return scores


def kg_acquisition(gp, candidate, slice_positions, config: KgConfig, rng: np.random.Generator) -> float:
    """KG score at ``candidate = (theta_scaled, slice_index)`` with fresh fantasies from ``rng``."""
    theta, idx = candidate
    location = [float(theta), float(np.asarray(slice_positions)[int(idx)])]
    normals = rng.standard_normal(config.fantasy_count)
    return float(kg_scores(gp, [location], config.grid, slice_positions, normals)[0])
