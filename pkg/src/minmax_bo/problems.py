"""Sliced synthetic min-max test problems.

Each problem is a classic 2-D test function where the first coordinate is
the controllable parameter (continuous interval) and the second is the
uncontrollable one, restricted to a handful of fixed slices.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .gp import KernelParams
from .minmax import grid_minmax

DEFAULT_SCALING_RESOLUTION = 1001


def branin(x, y):
    a, b, c = 1.0, 5.1 / (4 * np.pi**2), 5.0 / np.pi
    r, s, t = 6.0, 10.0, 1.0 / (8 * np.pi)
    return a * (y - b * x**2 + c * x - r) ** 2 + s * (1 - t) * np.cos(x) + s


def six_hump_camel(x, y):
    return (4 - 2.1 * x**2 + x**4 / 3) * x**2 + x * y + (-4 + 4 * y**2) * y**2


def eggholder(x, y):
    return -(y + 47) * np.sin(np.sqrt(np.abs(x / 2 + y + 47))) - x * np.sin(
        np.sqrt(np.abs(x - (y + 47)))
    )


def _negated_branin(x, y):
    return -branin(x, y)


def _log_camel(x, y):
    return np.log(six_hump_camel(x, y) + 2.0)


@dataclass(frozen=True)
class MinMaxProblem:
    name: str
    theta_bounds: tuple[float, float]
    slices: tuple[float, ...]
    raw_eval: Callable
    true_minmax_location: tuple[tuple[float, float], ...]
    true_minmax_value: float
    gp_params: KernelParams
    output_shift: float = 0.0
    output_scale: float = 1.0

    def __post_init__(self):
        if self.output_scale <= 0:
            raise ValueError("output_scale must be positive")
        for _, zeta in self.true_minmax_location:
            if zeta not in self.slices:
                raise ValueError(f"true location slice {zeta} is not one of {self.slices}")

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    @property
    def slice_positions(self) -> np.ndarray:
        """Scaled slice coordinates fed to the GP."""
        return np.linspace(0.0, 1.0, self.n_slices)

    def theta_to_raw(self, theta_scaled):
        lo, hi = self.theta_bounds
        return lo + (hi - lo) * np.asarray(theta_scaled, dtype=float)

    def theta_to_scaled(self, theta_raw):
        lo, hi = self.theta_bounds
        return (np.asarray(theta_raw, dtype=float) - lo) / (hi - lo)

    def true_locations_scaled(self) -> list[tuple[float, int]]:
        return [
            (float(self.theta_to_scaled(theta)), self.slices.index(zeta))
            for theta, zeta in self.true_minmax_location
        ]

    @property
    def true_value_scaled(self) -> float:
        theta, idx = self.true_locations_scaled()[0]
        return evaluate_scaled(self, theta, idx)


_TABLE = {
    "branin_star": dict(
        theta_bounds=(-5.0, 10.0),
        slices=(0.0, 4.0, 8.0, 12.0),
        raw_eval=_negated_branin,
        true_minmax_location=((-5.0, 12.0),),
        gp_params=KernelParams(1.0, (0.2, 0.4), 0.001),
    ),
    "camel_star": dict(
        theta_bounds=(-3.0, 3.0),
        slices=(-0.9, 0.0, 1.0),
        raw_eval=_log_camel,
        true_minmax_location=((0.0, 0.0), (0.0, 1.0)),
        gp_params=KernelParams(0.5, (0.2, 0.2), 0.001),
    ),
    "eggholder_star": dict(
        theta_bounds=(-512.0, 512.0),
        slices=(-512.0, 0.0, 185.0),
        raw_eval=eggholder,
        true_minmax_location=((234.647671, 185.0),),
        gp_params=KernelParams(1.0, (0.09, 0.09), 0.001),
    ),
}

PROBLEM_NAMES = tuple(_TABLE)


def make_problem(name: str, scaling_resolution: int = DEFAULT_SCALING_RESOLUTION) -> MinMaxProblem:
    """Build one of ``branin_star``, ``camel_star`` or ``eggholder_star``."""
    try:
        spec = _TABLE[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {', '.join(PROBLEM_NAMES)}") from None
    theta, zeta = spec["true_minmax_location"][0]
    problem = MinMaxProblem(
        name=name, true_minmax_value=float(spec["raw_eval"](theta, zeta)), **spec
    )
    shift, scale = compute_scaling(problem, scaling_resolution)
    return replace(problem, output_shift=shift, output_scale=scale)


def raw_table(problem: MinMaxProblem, theta_scaled) -> np.ndarray:
    """Raw values on ``theta_scaled`` x slices (rows: theta, columns: slices)."""
    theta_raw = problem.theta_to_raw(theta_scaled)
    return np.stack([problem.raw_eval(theta_raw, z) for z in problem.slices], axis=1)


def compute_scaling(problem: MinMaxProblem, grid_resolution: int) -> tuple[float, float]:
    """Mean and standard deviation of the raw values over a uniform theta grid x slices."""
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be at least 2")
    values = raw_table(problem, np.linspace(0.0, 1.0, grid_resolution))
    shift = float(values.mean())
    scale = float(values.std())
    if not scale > 1e-12 * max(1.0, abs(shift)):
        raise ValueError(f"{problem.name}: raw values are constant over the scaling grid")
    return shift, scale


def scaled_table(problem: MinMaxProblem, theta_scaled) -> np.ndarray:
    return (raw_table(problem, theta_scaled) - problem.output_shift) / problem.output_scale


def evaluate_scaled(problem: MinMaxProblem, theta_scaled: float, slice_index: int) -> float:
    """Normalized objective at scaled theta on the given slice."""
    if not 0.0 <= theta_scaled <= 1.0:
        raise ValueError(f"theta_scaled={theta_scaled} outside [0, 1]")
    if not 0 <= slice_index < problem.n_slices or int(slice_index) != slice_index:
        raise ValueError(f"slice_index={slice_index} invalid for {problem.n_slices} slices")
    raw = problem.raw_eval(float(problem.theta_to_raw(theta_scaled)), problem.slices[int(slice_index)])
    return float((raw - problem.output_shift) / problem.output_scale)


def gp_location(problem: MinMaxProblem, theta_scaled: float, slice_index: int) -> np.ndarray:
    return np.array([theta_scaled, problem.slice_positions[slice_index]])


def residual(problem: MinMaxProblem, estimated_location) -> float:
    """Absolute gap between the value at the estimated pair and the true min-max value."""
    theta, idx = estimated_location
    return abs(evaluate_scaled(problem, theta, idx) - problem.true_value_scaled)


def grid_truth(problem: MinMaxProblem, resolution: int = 2001):
    """Brute-force min-max of the scaled problem on a uniform theta grid."""
    grid = np.linspace(0.0, 1.0, resolution)
    i, j, value = grid_minmax(scaled_table(problem, grid))
    return grid[i], j, value
