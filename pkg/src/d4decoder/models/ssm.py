"""Generative state-space baselines: observation likelihoods p(s_k | x_k).

These models are filtered with the classical Bayes update (likelihood times
one-step prediction) and share the smoother and sampler of the decoder.
"""

from typing import Protocol
import numpy as np
from scipy import linalg
from scipy import ndimage
from scipy import special
from d4decoder.densities import StateGrid
from d4decoder.validation import IncompatibleCheckpointError
from d4decoder.validation import check_dimension
from d4decoder.validation import check_lengths


RIDGE = 1e-6
RATE_FLOOR_HZ = 1e-3


class GenerativeModel(Protocol):
    """Observation model of a state-space baseline.

    Methods:
        log_likelihood_grid: log p(s_k | x) at every grid cell for every step.
    """

    kind: str
    likelihood: str
    lag: int
    n_channels: int
    state_dim: int

    def log_likelihood_grid(
        self, observations: np.ndarray, grid: StateGrid
    ) -> np.ndarray: ...

    def to_dict(self) -> dict: ...


class GaussianObservationSSM:
    """s_k | x_k ~ N(C x_k + d, R) with a full observation covariance R."""

    kind = "ssm"
    likelihood = "gaussian"
    lag = 0

    def __init__(
        self, loading: np.ndarray, offset: np.ndarray, covariance: np.ndarray
    ) -> None:
        """Store the observation model parameters.

        Args:
            loading: Matrix C of shape (N, state_dim).
            offset: Vector d of shape (N,).
            covariance: Symmetric positive-definite R of shape (N, N).
        """
        self.loading = np.asarray(loading, dtype=float)
        self.offset = np.asarray(offset, dtype=float)
        self.covariance = np.asarray(covariance, dtype=float)
        self.n_channels, self.state_dim = self.loading.shape
        check_dimension(self.n_channels, len(self.offset), "the observation offset")
        check_dimension(self.n_channels, len(self.covariance), "the covariance")
        self._cholesky = linalg.cholesky(self.covariance, lower=True)

    @classmethod
    def fit(
        cls, states: np.ndarray, observations: np.ndarray
    ) -> "GaussianObservationSSM":
        """Least-squares fit on observed states; R is the residual covariance."""
        states = np.asarray(states, dtype=float).reshape(len(states), -1)
        observations = np.asarray(observations, dtype=float)
        check_lengths(states, observations, "states and observations")
        design = np.column_stack([states, np.ones(len(states))])
        coefficients, *_ = np.linalg.lstsq(design, observations, rcond=None)
        residuals = observations - design @ coefficients
        covariance = np.atleast_2d(np.cov(residuals, rowvar=False, bias=True))
        covariance += RIDGE * np.eye(observations.shape[1])
        return cls(coefficients[:-1].T, coefficients[-1], covariance)

    def log_likelihood_grid(
        self, observations: np.ndarray, grid: StateGrid
    ) -> np.ndarray:
        """log N(s_k; C x + d, R) for every step and cell, shape (K, *grid.shape)."""
        check_dimension(self.state_dim, grid.ndim, "the state grid")
        observations = np.asarray(observations, dtype=float)
        check_dimension(self.n_channels, observations.shape[1], "observation channels")
        white_obs = linalg.solve_triangular(
            self._cholesky, observations.T, lower=True
        ).T
        expected = grid.points @ self.loading.T + self.offset
        white_exp = linalg.solve_triangular(self._cholesky, expected.T, lower=True).T
        squared = (
            (white_obs**2).sum(axis=1)[:, None]
            - 2.0 * white_obs @ white_exp.T
            + (white_exp**2).sum(axis=1)[None, :]
        )
        log_det = 2.0 * np.log(np.diag(self._cholesky)).sum()
        constant = -0.5 * (self.n_channels * np.log(2.0 * np.pi) + log_det)
        return (constant - 0.5 * squared).reshape(len(observations), *grid.shape)

    def to_dict(self) -> dict:
        """Serialize the observation model."""
        return {
            "kind": self.kind,
            "likelihood": self.likelihood,
            "loading": self.loading.tolist(),
            "offset": self.offset.tolist(),
            "covariance": self.covariance.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianObservationSSM":
        """Load a model serialized with `to_dict`."""
        return cls(data["loading"], data["offset"], data["covariance"])


class PoissonPlaceFieldSSM:
    """Spike counts s_{k,n} | x_k ~ Poisson(rate_n(x_k) * bin_width).

    Rate maps live on the state grid: occupancy-normalized spike histograms,
    smoothed with a Gaussian kernel and floored at 1e-3 Hz.
    """

    kind = "ssm"
    likelihood = "poisson"
    lag = 0

    def __init__(
        self, grid: StateGrid, rate_maps: np.ndarray, bin_width: float
    ) -> None:
        """Store rate maps (Hz) of shape (N, *grid.shape) and the bin width (s)."""
        self.grid = grid
        self.rate_maps = np.asarray(rate_maps, dtype=float).reshape(-1, *grid.shape)
        self.bin_width = float(bin_width)
        self.n_channels = len(self.rate_maps)
        self.state_dim = grid.ndim

    @classmethod
    def fit(
        cls,
        states: np.ndarray,
        counts: np.ndarray,
        grid: StateGrid,
        bin_width: float,
        smoothing_cells: float = 1.5,
    ) -> "PoissonPlaceFieldSSM":
        """Estimate per-cell rate maps from positions and binned spike counts."""
        states = np.asarray(states, dtype=float).reshape(len(states), -1)
        counts = np.asarray(counts, dtype=float)
        check_lengths(states, counts, "states and spike counts")
        cell = grid.nearest_index(states)
        occupancy = np.bincount(cell, minlength=grid.size).reshape(grid.shape)
        occupancy = ndimage.gaussian_filter(occupancy * bin_width, smoothing_cells)
        rate_maps = np.empty((counts.shape[1], *grid.shape))
        for n in range(counts.shape[1]):
            spikes = np.bincount(cell, weights=counts[:, n], minlength=grid.size)
            spikes = ndimage.gaussian_filter(
                spikes.reshape(grid.shape), smoothing_cells
            )
            with np.errstate(divide="ignore", invalid="ignore"):
                rate = np.where(occupancy > 0, spikes / occupancy, 0.0)
            rate_maps[n] = np.maximum(rate, RATE_FLOOR_HZ)
        return cls(grid, rate_maps, bin_width)

    def log_likelihood_grid(
        self, observations: np.ndarray, grid: StateGrid
    ) -> np.ndarray:
        """Poisson log-likelihood of the counts per cell, shape (K, *grid.shape)."""
        if grid != self.grid:
            raise IncompatibleCheckpointError(
                "The rate maps were fitted on another state grid than the one "
                "used for decoding."
            )
        counts = np.asarray(observations, dtype=float)
        check_dimension(self.n_channels, counts.shape[1], "spike-count channels")
        expected = self.rate_maps.reshape(self.n_channels, -1) * self.bin_width
        log_lik = counts @ np.log(expected) - expected.sum(axis=0)[None, :]
        log_lik -= special.gammaln(counts + 1.0).sum(axis=1)[:, None]
        return log_lik.reshape(len(counts), *grid.shape)

    def to_dict(self) -> dict:
        """Serialize the rate maps and their grid."""
        return {
            "kind": self.kind,
            "likelihood": self.likelihood,
            "grid": self.grid.to_dict(),
            "rate_maps": self.rate_maps.tolist(),
            "bin_width": self.bin_width,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PoissonPlaceFieldSSM":
        """Load a model serialized with `to_dict`."""
        grid = StateGrid.from_dict(data["grid"])
        return cls(grid, data["rate_maps"], data["bin_width"])


def fit_ssm(
    states: np.ndarray,
    observations: np.ndarray,
    grid: StateGrid,
    bin_width: float | None = None,
) -> GaussianObservationSSM | PoissonPlaceFieldSSM:
    """Fit the baseline matching the observations.

    Non-negative integer observations with a known bin width are treated as
    spike counts (Poisson rate maps); anything else gets the Gaussian model.
    """
    observations = np.asarray(observations, dtype=float)
    is_counts = bool(
        np.all(observations >= 0) and np.all(observations == np.round(observations))
    )
    if is_counts and bin_width is not None:
        return PoissonPlaceFieldSSM.fit(states, observations, grid, bin_width)
    return GaussianObservationSSM.fit(states, observations)
