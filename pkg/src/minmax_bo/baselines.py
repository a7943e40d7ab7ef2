"""Benchmarks: Thompson sampling on the grid and a nested GP-UCB scheme.

The nested scheme keeps one GP for all data.  Each iteration refreshes the
outer theta candidate by minimizing a lower confidence bound on the
estimated worst case and then evaluates the slice with the highest upper
confidence bound at that theta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gp as gpm
from .minmax import grid_locations, grid_minmax, worst_case_profile


def thompson_step(gp, grid, slice_positions, rng: np.random.Generator) -> tuple[float, int]:
    """Min-max location of one joint posterior sample on grid x slices."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    sample = gpm.sample_joint(gp, grid_locations(grid, slice_positions), 1, rng)[0]
    i, j, _ = grid_minmax(sample.reshape(len(grid), -1))
    return float(grid[i]), j


@dataclass(frozen=True)
class BetaSchedule:
    """beta_t = beta_0 * (1 - t / T)^2 + beta_min."""

    beta_0: float = 4.0
    beta_min: float = 0.04

    def __post_init__(self):
        if self.beta_0 < 0 or self.beta_min < 0:
            raise ValueError("beta parameters must be non-negative")

    def __call__(self, t: int, budget: int) -> float:
        if budget < 1 or not 0 <= t <= budget:
            raise ValueError(f"iteration {t} outside budget {budget}")
        return self.beta_0 * (1.0 - t / budget) ** 2 + self.beta_min


@dataclass(frozen=True)
class WabersichState:
    iteration: int
    budget: int
    theta_candidate: float | None = None


def outer_candidate(mean: np.ndarray, std: np.ndarray, beta: float) -> tuple[int, np.ndarray]:
    """Grid index minimizing max_z mean - sqrt(beta) * std at the estimated worst slice."""
    worst, arg = worst_case_profile(mean)
    lcb = worst - np.sqrt(beta) * std[np.arange(len(arg)), arg]
    return int(lcb.argmin()), lcb


def inner_slice(mean_row: np.ndarray, std_row: np.ndarray, beta: float) -> int:
    """Slice maximizing the upper confidence bound at a fixed theta."""
    return int((mean_row + np.sqrt(beta) * std_row).argmax())


def wabersich_step(
    gp, grid, slice_positions, state: WabersichState, schedule: BetaSchedule = BetaSchedule()
) -> tuple[tuple[float, int], WabersichState]:
    """One evaluation of the nested scheme; returns the location and the next state."""
    grid = np.asarray(grid, dtype=float)
    beta = schedule(state.iteration, state.budget)
    mean, var = gpm.predict(gp, grid_locations(grid, slice_positions), full_cov=False)
    mean = mean.reshape(len(grid), -1)
    std = np.sqrt(var).reshape(len(grid), -1)
    i, _ = outer_candidate(mean, std, beta)
    j = inner_slice(mean[i], std[i], beta)
    theta = float(grid[i])
    nxt = WabersichState(min(state.iteration + 1, state.budget), state.budget, theta)
    return (theta, j), nxt
