"""Exact discrete min-max on value tables (rows: theta grid, columns: slices).

Ties always go to the smallest index, for both the worst-case slice and
the minimizing theta.
"""

from __future__ import annotations

import numpy as np


def _as_table(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.size == 0:
        raise ValueError(f"expected a non-empty 2-D table, got shape {values.shape}")
    return values


def worst_case_profile(values) -> tuple[np.ndarray, np.ndarray]:
    """Per-row maximum and the slice index attaining it."""
    values = _as_table(values)
    arg = values.argmax(axis=1)
    return values[np.arange(values.shape[0]), arg], arg


def grid_minmax(values) -> tuple[int, int, float]:
    """(theta index, slice index, value) of min over rows of the row maximum."""
    worst, arg = worst_case_profile(values)
    i = int(worst.argmin())
    return i, int(arg[i]), float(worst[i])


def batched_minmax_value(values: np.ndarray) -> np.ndarray:
    """Min-max value of each table in a stack of shape (..., rows, slices)."""
    return values.max(axis=-1).min(axis=-1)


def argmax_from_sample(sample_row, n_representatives: int, n_slices: int) -> np.ndarray:
    """Argmax function of a joint sample laid out as flat index ``i * n_slices + slice``.

    Returns one slice index per representative theta.
    """
    sample_row = np.asarray(sample_row, dtype=float)
    if sample_row.shape != (n_representatives * n_slices,):
        raise ValueError(
            f"sample of shape {sample_row.shape} does not match "
            f"{n_representatives} representatives x {n_slices} slices"
        )
    return sample_row.reshape(n_representatives, n_slices).argmax(axis=1)


def grid_locations(grid, slice_positions) -> np.ndarray:
    """GP inputs ``(theta, slice position)`` for a value table, theta-major."""
    th, z = np.meshgrid(np.asarray(grid, float), np.asarray(slice_positions, float), indexing="ij")
    return np.column_stack([th.ravel(), z.ravel()])
