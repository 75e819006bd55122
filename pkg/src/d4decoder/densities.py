"""Discretized probability densities over fixed state grids.

Every density the decoder works with (filter, one-step prediction, history
marginal, smoother and prediction-process densities) is represented as a
`GridDensity`: non-negative values at the cell centers of a `StateGrid`, in
density units (1 / state volume), normalized with midpoint quadrature.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Any
import numpy as np
from scipy import stats
from d4decoder.validation import DegenerateDensityError
from d4decoder.validation import TruncationError
from d4decoder.validation import check_dimension
from d4decoder.validation import check_same_grid


DENSITY_FLOOR = 1e-300
MIN_CELLS = 8
TRUNCATION_TOLERANCE = 0.01  # max fraction of continuous mass allowed off-grid

DEFAULT_1D_BOUNDS = (-8.0, 8.0)
DEFAULT_1D_CELLS = 400
DEFAULT_2D_CELLS = 80
DEFAULT_2D_PADDING = 0.1


def _as_tuple(value: Any, dtype: type) -> tuple:
    return tuple(dtype(v) for v in np.atleast_1d(value))


@dataclass(frozen=True)
class StateGrid:
    """Regular grid of cells covering a 1-D or 2-D state space.

    Grid points are cell centers, `lower + (i + 0.5) * width` along each axis.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self) -> None:
        """Validate the initialized StateGrid class."""
        object.__setattr__(self, "lower", _as_tuple(self.lower, float))
        object.__setattr__(self, "upper", _as_tuple(self.upper, float))
        object.__setattr__(self, "cells", _as_tuple(self.cells, int))

        if not len(self.lower) == len(self.upper) == len(self.cells):
            raise ValueError(
                "Grid bounds and cell counts must have the same number of dimensions."
            )
        if self.ndim not in (1, 2):
            raise ValueError(f"Only 1-D and 2-D grids are supported, got {self.ndim}.")
        for lower, upper, cells in zip(
            self.lower, self.upper, self.cells, strict=True
        ):
            if not upper > lower:
                raise ValueError(
                    f"Upper grid bound ({upper}) should be greater than the lower "
                    f"bound ({lower})."
                )
            if cells < MIN_CELLS:
                raise ValueError(
                    f"A grid needs at least {MIN_CELLS} cells per dimension, "
                    f"got {cells}."
                )

    @classmethod
    def default_1d(cls) -> "StateGrid":
        """Return the default grid for 1-D states: [-8, 8] with 400 cells."""
        return cls(DEFAULT_1D_BOUNDS[0], DEFAULT_1D_BOUNDS[1], DEFAULT_1D_CELLS)

    @classmethod
    def from_states(
        cls,
        states: np.ndarray,
        padding: float = DEFAULT_2D_PADDING,
        cells: int = DEFAULT_2D_CELLS,
    ) -> "StateGrid":
        """Make a grid from the bounding box of states, padded on every side.

        Args:
            states: State trajectory, shape (K, ndim).
            padding: Fraction of the box extent added on both sides.
            cells: Number of cells per dimension.
        """
        states = np.asarray(states, dtype=float).reshape(len(states), -1)
        low = states.min(axis=0)
        high = states.max(axis=0)
        extent = np.where(high > low, high - low, 1.0)
        return cls(
            tuple(low - padding * extent),
            tuple(high + padding * extent),
            (cells,) * states.shape[1],
        )

    @property
    def ndim(self) -> int:
        """Number of state dimensions."""
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of the value array of densities on this grid."""
        return self.cells

    @property
    def size(self) -> int:
        """Total number of cells."""
        return int(np.prod(self.cells))

    @property
    def widths(self) -> tuple[float, ...]:
        """Cell width per dimension."""
        return tuple(
            (upper - lower) / cells
            for lower, upper, cells in zip(
                self.lower, self.upper, self.cells, strict=True
            )
        )

    @property
    def cell_volume(self) -> float:
        """Length (1-D) or area (2-D) of one cell."""
        return float(np.prod(self.widths))

    @cached_property
    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell centers along each axis."""
        return tuple(
            lower + (np.arange(cells) + 0.5) * width
            for lower, cells, width in zip(
                self.lower, self.cells, self.widths, strict=True
            )
        )

    @cached_property
    def points(self) -> np.ndarray:
        """All cell centers as an array of shape (size, ndim), C-order."""
        mesh = np.meshgrid(*self.centers, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def nearest_index(self, points: np.ndarray) -> np.ndarray:
        """Flat index of the cell nearest to each point.

        Args:
            points: Array of shape (n, ndim) or (ndim,).

        Returns:
            Integer array of shape (n,). Points off the grid map to edge cells.
        """
        points = np.asarray(points, dtype=float).reshape(-1, self.ndim)
        indices = []
        for axis in range(self.ndim):
            idx = np.floor((points[:, axis] - self.lower[axis]) / self.widths[axis])
            indices.append(np.clip(idx, 0, self.cells[axis] - 1).astype(int))
        return np.ravel_multi_index(tuple(indices), self.cells)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Return a boolean mask of points lying inside the grid bounds."""
        points = np.asarray(points, dtype=float).reshape(-1, self.ndim)
        inside = np.ones(len(points), dtype=bool)
        for axis in range(self.ndim):
            inside &= (points[:, axis] >= self.lower[axis]) & (
                points[:, axis] <= self.upper[axis]
            )
        return inside

    def to_dict(self) -> dict:
        """Serialize the grid."""
        return {
            "lower": list(self.lower),
            "upper": list(self.upper),
            "cells": list(self.cells),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StateGrid":
        """Load a grid serialized with `to_dict`."""
        return cls(tuple(data["lower"]), tuple(data["upper"]), tuple(data["cells"]))


@dataclass(frozen=True)
class GaussianParams:
    """Mean and (diagonal) standard deviation of a Gaussian over the state."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        """Validate the initialized GaussianParams class."""
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        std = np.atleast_1d(np.asarray(self.std, dtype=float)).copy()
        if mean.shape != std.shape:
            raise ValueError("Mean and std of a Gaussian must have the same shape.")
        if not np.all(std > 0):
            raise ValueError(f"Standard deviations must be positive, got {std}.")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def ndim(self) -> int:
        """Number of state dimensions."""
        return len(self.mean)


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Normalized discretized probability density on a state grid."""

    grid: StateGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        """Validate the initialized GridDensity class."""
        values = np.array(self.values, dtype=float)
        if values.size != self.grid.size:
            raise ValueError(
                f"Got {values.size} values for a grid with {self.grid.size} cells."
            )
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("Density values must be finite and non-negative.")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_unnormalized(
        cls, grid: StateGrid, values: np.ndarray, min_mass: float = 0.0
    ) -> "GridDensity":
        """Normalize non-negative values into a density.

        Args:
            grid: The state grid.
            values: Unnormalized non-negative values, one per cell.
            min_mass: Smallest acceptable total mass before normalizing.

        Raises:
            DegenerateDensityError: If the total mass is not above `min_mass`.
        """
        values = np.asarray(values, dtype=float)
        mass = float(values.sum() * grid.cell_volume)
        if not np.isfinite(mass) or mass <= min_mass:
            raise DegenerateDensityError(
                f"Unnormalized density has total mass {mass:.3e}, which is not above "
                f"{min_mass:.1e}.\nThe model and the state grid are likely mismatched."
            )
        return cls(grid, values / mass)

    @classmethod
    def uniform(cls, grid: StateGrid) -> "GridDensity":
        """Return the uniform density over the whole grid."""
        return cls.from_unnormalized(grid, np.ones(grid.shape))

    @classmethod
    def delta(cls, grid: StateGrid, point: np.ndarray) -> "GridDensity":
        """Return a density with all of its mass in the cell nearest to `point`."""
        values = np.zeros(grid.size)
        values[grid.nearest_index(point)] = 1.0
        return cls.from_unnormalized(grid, values.reshape(grid.shape))

    @property
    def mass(self) -> float:
        """Total probability mass (1 for a normalized density)."""
        return float(self.values.sum() * self.grid.cell_volume)

    @property
    def probabilities(self) -> np.ndarray:
        """Probability mass per cell, flattened."""
        return self.values.ravel() * self.grid.cell_volume

    def mean(self) -> np.ndarray:
        """Mean state per dimension."""
        return self.probabilities @ self.grid.points

    def variance(self) -> np.ndarray:
        """Variance per dimension."""
        deviation = self.grid.points - self.mean()
        return self.probabilities @ deviation**2

    def std(self) -> np.ndarray:
        """Standard deviation per dimension."""
        return np.sqrt(self.variance())

    def marginal(self, axis: int) -> "GridDensity":
        """Return the marginal density along one axis."""
        if self.grid.ndim == 1:
            return self
        other = 1 - axis
        sub_grid = StateGrid(
            self.grid.lower[axis], self.grid.upper[axis], self.grid.cells[axis]
        )
        values = self.values.sum(axis=other) * self.grid.widths[other]
        return GridDensity.from_unnormalized(sub_grid, values)

    def floored(self) -> np.ndarray:
        """Values floored at DENSITY_FLOOR, safe for logs and divisions."""
        return np.maximum(self.values, DENSITY_FLOOR)


def normalize_rows(values: np.ndarray, cell_volume: float) -> np.ndarray:
    """Normalize a stack of unnormalized densities along all but the first axis."""
    axes = tuple(range(1, values.ndim))
    mass = values.sum(axis=axes, keepdims=True) * cell_volume
    return values / mass


def axis_densities(
    centers: np.ndarray, width: float, mean: np.ndarray, std: np.ndarray
) -> np.ndarray:
    """Discretize a batch of 1-D Gaussians on one grid axis.

    Evaluated in the log domain, so Gaussians whose mass lies off the axis
    still yield a valid density concentrated on the nearest cells.

    Args:
        centers: Cell centers of the axis, shape (n,).
        width: Cell width of the axis.
        mean: Means, shape (B,).
        std: Standard deviations, shape (B,).

    Returns:
        Normalized densities, shape (B, n).
    """
    mean = np.asarray(mean, dtype=float)[:, None]
    std = np.asarray(std, dtype=float)[:, None]
    log_values = -0.5 * ((centers[None, :] - mean) / std) ** 2
    log_values -= log_values.max(axis=1, keepdims=True)
    values = np.exp(log_values)
    return values / (values.sum(axis=1, keepdims=True) * width)


def discretize_batch(
    grid: StateGrid, means: np.ndarray, stds: np.ndarray
) -> np.ndarray:
    """Discretize a batch of diagonal Gaussians on the grid.

    Args:
        grid: The state grid.
        means: Means, shape (B, ndim).
        stds: Standard deviations, shape (B, ndim).

    Returns:
        Normalized density values, shape (B, *grid.shape).
    """
    means = np.asarray(means, dtype=float).reshape(-1, grid.ndim)
    stds = np.asarray(stds, dtype=float).reshape(-1, grid.ndim)
    per_axis = [
        axis_densities(
            grid.centers[axis], grid.widths[axis], means[:, axis], stds[:, axis]
        )
        for axis in range(grid.ndim)
    ]
    if grid.ndim == 1:
        return per_axis[0]
    return per_axis[0][:, :, None] * per_axis[1][:, None, :]


def off_grid_mass(params: GaussianParams, grid: StateGrid) -> float:
    """Fraction of the continuous Gaussian mass lying outside the grid."""
    on_grid = 1.0
    for axis in range(grid.ndim):
        dist = stats.norm(params.mean[axis], params.std[axis])
        on_grid *= dist.cdf(grid.upper[axis]) - dist.cdf(grid.lower[axis])
    return float(1.0 - on_grid)


def discretize(
    params: GaussianParams, grid: StateGrid, check: bool = True
) -> GridDensity:
    """Evaluate a Gaussian at the cell centers and renormalize it on the grid.

    Args:
        params: Mean and std of the Gaussian.
        grid: The state grid.
        check: Raise if more than 1% of the continuous mass is off-grid.

    Raises:
        TruncationError: If `check` is set and the grid truncates the Gaussian.
    """
    check_dimension(grid.ndim, params.ndim, "Gaussian parameters")
    if check:
        lost = off_grid_mass(params, grid)
        if lost > TRUNCATION_TOLERANCE:
            raise TruncationError(
                f"{lost:.1%} of the mass of N({params.mean}, {params.std}**2) lies "
                f"outside the grid [{grid.lower}, {grid.upper}]."
            )
    values = discretize_batch(grid, params.mean[None, :], params.std[None, :])[0]
    return GridDensity(grid, values)


def kl_divergence(p: GridDensity, q: GridDensity) -> float:
    """KL divergence KL(p || q) in nats, with q floored before the log.

    Raises:
        GridMismatchError: If p and q live on different grids.
    """
    check_same_grid(p, q)
    divergence = kl_divergence_batch(p.values[None], q.values[None], p.grid.cell_volume)
    return float(divergence[0])


def entropy(p: GridDensity) -> float:
    """Differential entropy of p in nats (may be negative)."""
    return float(entropy_batch(p.values[None], p.grid.cell_volume)[0])


def kl_divergence_batch(
    p_values: np.ndarray, q_values: np.ndarray, cell_volume: float
) -> np.ndarray:
    """Row-wise KL(p_k || q_k) for stacks of densities of shape (K, ...)."""
    p = p_values.reshape(len(p_values), -1)
    q = np.maximum(q_values.reshape(len(q_values), -1), DENSITY_FLOOR)
    positive = p > 0
    log_ratio = np.log(np.where(positive, p, 1.0)) - np.log(q)
    terms = np.where(positive, p * log_ratio, 0.0)
    return np.maximum(terms.sum(axis=1) * cell_volume, 0.0)


def entropy_batch(p_values: np.ndarray, cell_volume: float) -> np.ndarray:
    """Row-wise differential entropy for a stack of densities of shape (K, ...)."""
    p = p_values.reshape(len(p_values), -1)
    positive = p > 0
    terms = np.where(positive, p * np.log(np.where(positive, p, 1.0)), 0.0)
    return -terms.sum(axis=1) * cell_volume
