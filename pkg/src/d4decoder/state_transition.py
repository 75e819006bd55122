"""Linear-Gaussian state dynamics and the Chapman-Kolmogorov step."""

import warnings
from dataclasses import dataclass
from dataclasses import replace
from functools import lru_cache
from typing import Any
import numpy as np
from scipy import stats
from d4decoder.densities import GaussianParams
from d4decoder.densities import GridDensity
from d4decoder.densities import StateGrid
from d4decoder.densities import axis_densities
from d4decoder.densities import discretize
from d4decoder.validation import DegenerateInputError
from d4decoder.validation import DegenerateInputWarning
from d4decoder.validation import check_dimension


SIGMA_FLOOR = 1e-4
MIN_STATES = 3
MAX_ABS_A = 1.5


def _per_dim(value: Any) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(value))


@lru_cache(maxsize=64)
def _kernel_matrix(
    lower: float, upper: float, cells: int, a: float, b: float, sigma: float
) -> np.ndarray:
    """Transition matrix of one axis, scaled by the cell width.

    Entry [i, j] is the probability of moving from cell j to cell i, so every
    column sums to one.
    """
    width = (upper - lower) / cells
    centers = lower + (np.arange(cells) + 0.5) * width
    columns = axis_densities(centers, width, a * centers + b, np.full(cells, sigma))
    matrix = np.ascontiguousarray(columns.T * width)
    matrix.setflags(write=False)
    return matrix


@dataclass(frozen=True)
class LinearGaussianTransition:
    """State process x_k = a * x_{k-1} + b + w_k, with w_k ~ N(0, sigma**2).

    All parameters are per dimension. The initial-state density is Gaussian
    with `init_mean` and `init_std` when both are given, otherwise the
    stationary density of the process (uniform along axes with |a| >= 1).
    """

    a: tuple[float, ...]
    b: tuple[float, ...]
    sigma: tuple[float, ...]
    init_mean: tuple[float, ...] | None = None
    init_std: tuple[float, ...] | None = None
    max_abs_a: float = MAX_ABS_A

    def __post_init__(self) -> None:
        """Validate the initialized LinearGaussianTransition class."""
        object.__setattr__(self, "a", _per_dim(self.a))
        object.__setattr__(self, "b", _per_dim(self.b))
        object.__setattr__(self, "sigma", _per_dim(self.sigma))
        if not len(self.a) == len(self.b) == len(self.sigma):
            raise ValueError("Parameters a, b and sigma must have the same dimension.")
        if any(s <= 0 for s in self.sigma):
            raise ValueError(
                f"Transition noise sigma must be positive, got {self.sigma}."
            )
        if any(abs(a) > self.max_abs_a for a in self.a):
            raise ValueError(
                f"Transition coefficient a={self.a} exceeds the sanity bound "
                f"|a| <= {self.max_abs_a}."
            )
        if (self.init_mean is None) != (self.init_std is None):
            raise ValueError("Give both init_mean and init_std, or neither.")
        if self.init_mean is not None and self.init_std is not None:
            object.__setattr__(self, "init_mean", _per_dim(self.init_mean))
            object.__setattr__(self, "init_std", _per_dim(self.init_std))
            if any(s <= 0 for s in self.init_std):
                raise ValueError("Initial-state std must be positive.")

    @classmethod
    def random_walk(
        cls, sigma: float | tuple[float, ...], ndim: int = 1
    ) -> "LinearGaussianTransition":
        """Return an independent per-axis random walk (a = 1, b = 0)."""
        sigmas = _per_dim(sigma)
        if len(sigmas) == 1:
            sigmas = sigmas * ndim
        return cls((1.0,) * len(sigmas), (0.0,) * len(sigmas), sigmas)

    @property
    def ndim(self) -> int:
        """Number of state dimensions."""
        return len(self.a)

    def stationary_std(self) -> np.ndarray:
        """Stationary std per dimension (inf where the process is not stationary)."""
        a = np.asarray(self.a)
        with np.errstate(divide="ignore", invalid="ignore"):
            std = np.asarray(self.sigma) / np.sqrt(1.0 - a**2)
        return np.where(np.abs(a) < 1.0, std, np.inf)

    def stationary_mean(self) -> np.ndarray:
        """Stationary mean per dimension (0 where the process is not stationary)."""
        a = np.asarray(self.a)
        stationary = np.abs(a) < 1.0
        denominator = np.where(stationary, 1.0 - a, 1.0)
        return np.where(stationary, np.asarray(self.b) / denominator, 0.0)

    def with_initial(
        self, mean: np.ndarray, std: np.ndarray
    ) -> "LinearGaussianTransition":
        """Return a copy with a Gaussian initial-state density."""
        return replace(self, init_mean=_per_dim(mean), init_std=_per_dim(std))

    def kernel_column(self, x_prev: np.ndarray, grid: StateGrid) -> GridDensity:
        """Discretized p(x_k | x_{k-1} = x_prev).

        Raises:
            TruncationError: If the transition density leaves the grid.
        """
        x_prev = np.atleast_1d(np.asarray(x_prev, dtype=float))
        check_dimension(self.ndim, len(x_prev), "the previous state")
        mean = np.asarray(self.a) * x_prev + np.asarray(self.b)
        return discretize(GaussianParams(mean, np.asarray(self.sigma)), grid)

    def kernel_matrices(self, grid: StateGrid) -> tuple[np.ndarray, ...]:
        """Per-axis transition matrices, cell width included, with unit column sums."""
        check_dimension(self.ndim, grid.ndim, "the state grid")
        return tuple(
            _kernel_matrix(
                grid.lower[d],
                grid.upper[d],
                grid.cells[d],
                self.a[d],
                self.b[d],
                self.sigma[d],
            )
            for d in range(grid.ndim)
        )

    def propagate(self, values: np.ndarray, grid: StateGrid) -> np.ndarray:
        """Apply the transition to density values of shape (..., *grid.shape)."""
        matrices = self.kernel_matrices(grid)
        if grid.ndim == 1:
            return values @ matrices[0].T
        return matrices[0] @ values @ matrices[1].T

    def backward_integral(self, values: np.ndarray, grid: StateGrid) -> np.ndarray:
        """Integrate p(x_{k+1} | x_k) * values(x_{k+1}) over x_{k+1}, for every x_k."""
        matrices = self.kernel_matrices(grid)
        if grid.ndim == 1:
            return values @ matrices[0]
        return matrices[0].T @ values @ matrices[1]

    def chapman_kolmogorov(self, prior: GridDensity) -> GridDensity:
        """One-step-ahead density of the state given the prior at the previous step."""
        return GridDensity.from_unnormalized(
            prior.grid, self.propagate(prior.values, prior.grid)
        )

    def initial_density(self, grid: StateGrid) -> GridDensity:
        """Discretized initial-state density p(x_0)."""
        check_dimension(self.ndim, grid.ndim, "the state grid")
        if self.init_mean is not None and self.init_std is not None:
            mean = np.asarray(self.init_mean)
            std = np.asarray(self.init_std)
        else:
            mean = self.stationary_mean()
            std = self.stationary_std()
        per_axis = []
        for d in range(grid.ndim):
            if np.isfinite(std[d]):
                column = axis_densities(
                    grid.centers[d], grid.widths[d], mean[d : d + 1], std[d : d + 1]
                )
                per_axis.append(column[0])
            else:
                per_axis.append(np.ones(grid.cells[d]))
        values = per_axis[0] if grid.ndim == 1 else np.outer(per_axis[0], per_axis[1])
        return GridDensity.from_unnormalized(grid, values)

    def log_density(self, x_next: np.ndarray, x_prev: np.ndarray) -> np.ndarray:
        """log p(x_next | x_prev), summed over dimensions.

        Args:
            x_next: States of shape (..., ndim).
            x_prev: States of shape (..., ndim), broadcastable against x_next.
        """
        mean = np.asarray(self.a) * np.asarray(x_prev) + np.asarray(self.b)
        return stats.norm.logpdf(x_next, mean, np.asarray(self.sigma)).sum(axis=-1)

    def to_dict(self) -> dict:
        """Serialize the transition parameters."""
        return {
            "a": list(self.a),
            "b": list(self.b),
            "sigma": list(self.sigma),
            "init_mean": None if self.init_mean is None else list(self.init_mean),
            "init_std": None if self.init_std is None else list(self.init_std),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearGaussianTransition":
        """Load parameters serialized with `to_dict`."""
        return cls(
            tuple(data["a"]),
            tuple(data["b"]),
            tuple(data["sigma"]),
            None if data.get("init_mean") is None else tuple(data["init_mean"]),
            None if data.get("init_std") is None else tuple(data["init_std"]),
        )


def as_trajectories(states: np.ndarray) -> np.ndarray:
    """Reshape states given as (K,), (K, ndim) or (M, K, ndim) to (M, K, ndim)."""
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        return states[None, :, None]
    if states.ndim == 2:
        return states[None]
    if states.ndim == 3:
        return states
    raise ValueError(f"States must have 1 to 3 dimensions, got shape {states.shape}.")


def fit_transition_mle(
    states: np.ndarray,
    random_walk: bool = False,
    empirical_initial: bool = True,
) -> LinearGaussianTransition:
    """Estimate a, b and sigma per dimension from known state trajectories.

    Args:
        states: Trajectories of shape (K,), (K, ndim) or (M, K, ndim).
        random_walk: Fix a = 1 and b = 0 and only estimate sigma.
        empirical_initial: Use the mean/std of the states as the initial-state
            density. Otherwise the stationary density is used.

    A fitted |a| above the sanity bound of the transition is clipped to it,
    with a warning, and b is refitted for the clipped a.

    Raises:
        DegenerateInputError: For fewer than 3 points or a constant sequence.
    """
    trajectories = as_trajectories(states)
    if trajectories.shape[1] < MIN_STATES:
        raise DegenerateInputError(
            f"At least {MIN_STATES} states are needed to fit the state process, "
            f"got {trajectories.shape[1]}."
        )

    a_hat, b_hat, sigma_hat = [], [], []
    for d in range(trajectories.shape[2]):
        if np.ptp(trajectories[:, :, d]) == 0:
            raise DegenerateInputError(
                f"State dimension {d} is constant; the state process can not be fitted."
            )
        prev = trajectories[:, :-1, d].ravel()
        nxt = trajectories[:, 1:, d].ravel()
        if random_walk:
            a, b = 1.0, 0.0
        else:
            design = np.column_stack([prev, np.ones_like(prev)])
            (a, b), *_ = np.linalg.lstsq(design, nxt, rcond=None)
            if abs(a) > MAX_ABS_A:
                warnings.warn(
                    f"Fitted coefficient a={a:.3g} of state dimension {d} is "
                    f"clipped to the sanity bound |a| <= {MAX_ABS_A}.",
                    DegenerateInputWarning,
                    stacklevel=2,
                )
                a = float(np.clip(a, -MAX_ABS_A, MAX_ABS_A))
                b = float(np.mean(nxt - a * prev))
        sigma = float(np.sqrt(np.mean((nxt - a * prev - b) ** 2)))
        if sigma < SIGMA_FLOOR:
            warnings.warn(
                f"Residual std of state dimension {d} ({sigma:.2e}) is below "
                f"{SIGMA_FLOOR}; it is floored to keep the transition nondegenerate.",
                DegenerateInputWarning,
                stacklevel=2,
            )
            sigma = SIGMA_FLOOR
        a_hat.append(float(a))
        b_hat.append(float(b))
        sigma_hat.append(sigma)

    transition = LinearGaussianTransition(tuple(a_hat), tuple(b_hat), tuple(sigma_hat))
    if empirical_initial:
        flat = trajectories.reshape(-1, trajectories.shape[2])
        std = np.maximum(flat.std(axis=0), np.asarray(sigma_hat))
        transition = transition.with_initial(flat.mean(axis=0), std)
    return transition
