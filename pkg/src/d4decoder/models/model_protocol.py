"""Outline of the prediction-process protocol and its shared Gaussian machinery."""

import copy
from dataclasses import dataclass
from typing import Any
from typing import Protocol
import numpy as np
from d4decoder.densities import GaussianParams
from d4decoder.densities import GridDensity
from d4decoder.densities import StateGrid
from d4decoder.densities import discretize
from d4decoder.densities import discretize_batch
from d4decoder.state_transition import LinearGaussianTransition
from d4decoder.validation import DimensionMismatchError
from d4decoder.validation import check_dimension


LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class HistoryWindow:
    """Lagged observations h_k = [s_{k-1}, ..., s_{k-l}].

    Lags reaching before the start of the sequence are zero-padded, and the
    mask marks which lags hold real observations.
    """

    lag: int
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        """Validate the initialized HistoryWindow class."""
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if len(values) != self.lag:
            values = values.reshape(self.lag, -1)
        mask = np.asarray(self.mask, dtype=bool).reshape(self.lag)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def at(cls, observations: np.ndarray, k: int, lag: int) -> "HistoryWindow":
        """Build the window of time index k (0-based) of an observation matrix."""
        observations = np.asarray(observations, dtype=float)
        values = np.zeros((lag, observations.shape[1]))
        mask = np.zeros(lag, dtype=bool)
        for j in range(1, lag + 1):
            if k - j >= 0:
                values[j - 1] = observations[k - j]
                mask[j - 1] = True
        return cls(lag, values, mask)

    @property
    def n_channels(self) -> int:
        """Number of observation channels per lag."""
        return self.values.shape[1]


def lagged_features(observations: np.ndarray, lag: int) -> np.ndarray:
    """Stack [s_k, s_{k-1}, ..., s_{k-lag}] per time step, zero-padded at the start.

    Args:
        observations: Observation matrix of shape (K, N).
        lag: Number of history lags.

    Returns:
        Feature matrix of shape (K, (lag + 1) * N).
    """
    n_steps, n_channels = observations.shape
    features = np.zeros((n_steps, (lag + 1) * n_channels))
    for j in range(lag + 1):
        features[j:, j * n_channels : (j + 1) * n_channels] = observations[
            : n_steps - j
        ]
    return features


class PredictionModel(Protocol):
    """Prediction process p(x_k | s_k, h_k; params) of a decoder.

    Methods:
        predict: Gaussian parameters for one time step.
        prediction_params: Gaussian parameters for a whole sequence.
        prediction_backward: Chain gradients of mu and sigma to the parameters.
        expected_log_prediction: Mean log density of state trajectories, and its
            gradient.
    """

    kind: str
    lag: int
    n_channels: int
    state_dim: int

    def predict(
        self, s_k: np.ndarray, history: HistoryWindow
    ) -> GaussianParams: ...

    def prediction_params(
        self, observations: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, Any]: ...

    def prediction_backward(
        self, cache: Any, dmu: np.ndarray, dsigma: np.ndarray
    ) -> np.ndarray: ...

    def expected_log_prediction(
        self, observations: np.ndarray, samples: np.ndarray
    ) -> tuple[float, np.ndarray]: ...

    def get_params(self) -> np.ndarray: ...

    def set_params(self, params: np.ndarray) -> None: ...

    def fit_standardization(self, observations: np.ndarray) -> None: ...

    def to_dict(self) -> dict: ...


def gaussian_log_density(
    x: np.ndarray, mu: np.ndarray, sigma: np.ndarray
) -> np.ndarray:
    """Elementwise log N(x; mu, sigma**2)."""
    return -0.5 * LOG_2PI - np.log(sigma) - 0.5 * ((x - mu) / sigma) ** 2


def gaussian_score(
    x: np.ndarray, mu: np.ndarray, sigma: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of log N(x; mu, sigma**2) with respect to mu and sigma."""
    residual = x - mu
    return residual / sigma**2, residual**2 / sigma**3 - 1.0 / sigma


class GaussianPredictor:
    """Shared plumbing of predictors with a diagonal Gaussian output.

    Subclasses implement `forward` and `backward_with_inputs` on feature
    matrices, and keep their parameters in `self.params` (a dict of
    arrays). Features are built from standardized observations as
    `[s_k, s_{k-1}, ..., s_{k-l}]`, optionally followed by extra inputs (see
    the factorized 2-D predictor).
    """

    kind = "gaussian"

    def __init__(
        self,
        n_channels: int,
        lag: int,
        state_dim: int = 1,
        n_extra: int = 0,
    ) -> None:
        """Set up the input layout of the predictor."""
        if lag < 0:
            raise ValueError(f"The history lag can not be negative, got {lag}.")
        if n_channels < 1:
            raise ValueError("A predictor needs at least one observation channel.")
        self.n_channels = n_channels
        self.lag = lag
        self.state_dim = state_dim
        self.n_extra = n_extra
        self.input_offset = np.zeros(n_channels)
        self.input_scale = np.ones(n_channels)
        self.params: dict[str, np.ndarray] = {}

    @property
    def n_features(self) -> int:
        """Number of inputs of the network: current, lagged and extra inputs."""
        return (self.lag + 1) * self.n_channels + self.n_extra

    @property
    def n_params(self) -> int:
        """Total number of trainable parameters."""
        return sum(p.size for p in self.params.values())

    def get_params(self) -> np.ndarray:
        """All parameters as one flat vector."""
        return np.concatenate([p.ravel() for p in self.params.values()])

    def set_params(self, params: np.ndarray) -> None:
        """Load parameters from a flat vector laid out as `get_params`."""
        params = np.asarray(params, dtype=float)
        if params.size != self.n_params:
            raise DimensionMismatchError(
                f"Expected {self.n_params} parameters, got {params.size}."
            )
        start = 0
        for name, value in self.params.items():
            self.params[name] = params[start : start + value.size].reshape(value.shape)
            start += value.size

    def clone(self) -> "GaussianPredictor":
        """Deep copy of the predictor."""
        return copy.deepcopy(self)

    def fit_standardization(self, observations: np.ndarray) -> None:
        """Fit the per-channel input offset and scale on training observations."""
        observations = np.asarray(observations, dtype=float)
        check_dimension(self.n_channels, observations.shape[1], "observation channels")
        scale = observations.std(axis=0)
        self.input_offset = observations.mean(axis=0)
        self.input_scale = np.where(scale > 0, scale, 1.0)

    def standardize(self, observations: np.ndarray) -> np.ndarray:
        """Apply the input offset and scale."""
        return (np.asarray(observations, dtype=float) - self.input_offset) / (
            self.input_scale
        )

    def features(
        self, observations: np.ndarray, extra: np.ndarray | None = None
    ) -> np.ndarray:
        """Feature matrix of shape (K, n_features) for an observation sequence."""
        observations = np.atleast_2d(np.asarray(observations, dtype=float))
        check_dimension(self.n_channels, observations.shape[1], "observation channels")
        features = lagged_features(self.standardize(observations), self.lag)
        if self.n_extra:
            if extra is None:
                raise DimensionMismatchError(
                    f"This predictor needs {self.n_extra} extra input(s) per step."
                )
            extra = np.asarray(extra, dtype=float).reshape(len(features), self.n_extra)
            features = np.hstack([features, extra])
        return features

    def window_features(
        self,
        s_k: np.ndarray,
        history: HistoryWindow,
        extra: np.ndarray | None = None,
    ) -> np.ndarray:
        """Feature row of shape (1, n_features) for a single time step."""
        s_k = np.atleast_1d(np.asarray(s_k, dtype=float))
        check_dimension(self.n_channels, len(s_k), "observation channels")
        check_dimension(self.lag, history.lag, "history lags")
        if history.lag:
            check_dimension(self.n_channels, history.n_channels, "history channels")
        lagged = self.standardize(history.values) * history.mask[:, None]
        row = np.concatenate([self.standardize(s_k), lagged.ravel()])
        if self.n_extra:
            if extra is None:
                raise DimensionMismatchError(
                    f"This predictor needs {self.n_extra} extra input(s) per step."
                )
            row = np.concatenate([row, np.atleast_1d(extra)])
        return row[None, :]

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray, Any]:
        """Mean and std, each of shape (K, state_dim), plus a cache for backward."""
        raise NotImplementedError

    def backward_with_inputs(
        self, cache: Any, dmu: np.ndarray, dsigma: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Parameter gradient and feature gradient given mean and std gradients."""
        raise NotImplementedError

    def backward(self, cache: Any, dmu: np.ndarray, dsigma: np.ndarray) -> np.ndarray:
        """Flat parameter gradient given upstream gradients on mean and std."""
        return self.backward_with_inputs(cache, dmu, dsigma)[0]

    def predict(
        self,
        s_k: np.ndarray,
        history: HistoryWindow,
        extra: np.ndarray | None = None,
    ) -> GaussianParams:
        """Gaussian parameters of p(x_k | s_k, h_k).

        Raises:
            DimensionMismatchError: If s_k or the history window do not match the
                configured channels and lag.
        """
        mu, sigma, _ = self.forward(self.window_features(s_k, history, extra))
        return GaussianParams(mu[0], sigma[0])

    def prediction_params(
        self, observations: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, Any]:
        """Means and stds of the prediction process for every time step."""
        return self.forward(self.features(observations))

    def prediction_backward(
        self, cache: Any, dmu: np.ndarray, dsigma: np.ndarray
    ) -> np.ndarray:
        """Gradient of a function of `prediction_params` outputs."""
        return self.backward(cache, dmu, dsigma)

    def log_density_grad(
        self,
        s_k: np.ndarray,
        history: HistoryWindow,
        x: np.ndarray,
        extra: np.ndarray | None = None,
    ) -> tuple[float, np.ndarray]:
        """log p(x | s_k, h_k) and its gradient with respect to every parameter."""
        mu, sigma, cache = self.forward(self.window_features(s_k, history, extra))
        x = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
        dmu, dsigma = gaussian_score(x, mu, sigma)
        value = float(gaussian_log_density(x, mu, sigma).sum())
        return value, self.backward(cache, dmu, dsigma)

    def expected_log_prediction(
        self, observations: np.ndarray, samples: np.ndarray
    ) -> tuple[float, np.ndarray]:
        """Sum over k of the sample mean of log p(x_k^m | s_k, h_k), with gradient.

        Args:
            observations: Observation matrix of shape (K, N).
            samples: State trajectories of shape (M, K, state_dim).
        """
        return self._expected_log_prediction(self.features(observations), samples)

    def _expected_log_prediction(
        self, features: np.ndarray, samples: np.ndarray
    ) -> tuple[float, np.ndarray]:
        mu, sigma, cache = self.forward(features)
        samples = np.asarray(samples, dtype=float).reshape(-1, len(mu), self.state_dim)
        dmu, dsigma = gaussian_score(samples, mu[None], sigma[None])
        value = gaussian_log_density(samples, mu[None], sigma[None]).sum(axis=(1, 2))
        grad = self.backward(cache, dmu.mean(axis=0), dsigma.mean(axis=0))
        return float(value.mean()), grad

    def to_dict(self) -> dict:
        """Serialize the predictor, parameters as lists of float64."""
        return {
            "kind": self.kind,
            "n_channels": self.n_channels,
            "lag": self.lag,
            "state_dim": self.state_dim,
            "n_extra": self.n_extra,
            "input_offset": self.input_offset.tolist(),
            "input_scale": self.input_scale.tolist(),
            "params": {name: value.tolist() for name, value in self.params.items()},
        }

    def _load_dict(self, data: dict) -> None:
        self.input_offset = np.asarray(data["input_offset"], dtype=float)
        self.input_scale = np.asarray(data["input_scale"], dtype=float)
        for name, value in data["params"].items():
            if name not in self.params:
                raise DimensionMismatchError(f"Unknown parameter '{name}'.")
            self.params[name] = np.asarray(value, dtype=float).reshape(
                self.params[name].shape
            )


def prediction_densities(
    model: PredictionModel, observations: np.ndarray, grid: StateGrid
) -> np.ndarray:
    """Discretized p(x_k | s_k, h_k) for every time step, shape (K, *grid.shape)."""
    mu, sigma, _ = model.prediction_params(observations)
    return discretize_batch(grid, mu, sigma)


def history_marginal_sequence(
    prediction_values: np.ndarray,
    trans: LinearGaussianTransition,
    grid: StateGrid,
) -> np.ndarray:
    """History marginals p(x_k | h_k) for every time step.

    Step 0 propagates the initial-state density; step k propagates the
    prediction-process density of step k - 1.
    """
    previous = np.concatenate(
        [trans.initial_density(grid).values[None], prediction_values[:-1]]
    )
    marginals = trans.propagate(previous, grid)
    return marginals / (
        marginals.sum(axis=tuple(range(1, marginals.ndim)), keepdims=True)
        * grid.cell_volume
    )


def history_marginal(
    model: PredictionModel,
    s_prev: np.ndarray | None,
    history_prev: HistoryWindow | None,
    trans: LinearGaussianTransition,
    grid: StateGrid,
) -> GridDensity:
    """History marginal p(x_k | h_k) of a single time step.

    The prediction-process density of the previous step is propagated through
    the state transition. Without a previous step (k = 1) the initial-state
    density is propagated instead.
    """
    if s_prev is None or history_prev is None:
        return trans.chapman_kolmogorov(trans.initial_density(grid))
    previous = discretize(model.predict(s_prev, history_prev), grid, check=False)
    return trans.chapman_kolmogorov(previous)
