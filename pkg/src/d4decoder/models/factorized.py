"""Two-dimensional prediction process factorized as p(x | s, h, y) p(y | s, h)."""

from typing import Any
import numpy as np
from d4decoder.densities import GaussianParams
from d4decoder.models.model_protocol import GaussianPredictor
from d4decoder.models.model_protocol import HistoryWindow
from d4decoder.validation import DimensionMismatchError


class FactorizedPredictor:
    """Joint diagonal Gaussian over (x, y) built from two 1-D predictors.

    The x-predictor takes y as one extra input. When fitting, it receives the
    observed or sampled y; when predicting, it receives the mean of the
    y-predictor, and gradients of the joint prediction flow back into the
    y-predictor through that input.
    """

    state_dim = 2

    def __init__(self, x_model: GaussianPredictor, y_model: GaussianPredictor) -> None:
        """Combine an x-predictor (with one extra input) and a y-predictor."""
        if x_model.n_extra != 1 or y_model.n_extra != 0:
            raise DimensionMismatchError(
                "The x-predictor needs exactly one extra input (y) and the "
                "y-predictor none."
            )
        if x_model.state_dim != 1 or y_model.state_dim != 1:
            raise DimensionMismatchError("Both factors must predict a 1-D state.")
        if (x_model.lag, x_model.n_channels) != (y_model.lag, y_model.n_channels):
            raise DimensionMismatchError(
                "Both factors must use the same lag and observation channels."
            )
        self.x_model = x_model
        self.y_model = y_model

    @property
    def kind(self) -> str:
        """Model kind of the factors (d4 or ddd)."""
        return self.x_model.kind

    @property
    def lag(self) -> int:
        """Number of history lags."""
        return self.x_model.lag

    @property
    def n_channels(self) -> int:
        """Number of observation channels."""
        return self.x_model.n_channels

    @property
    def n_params(self) -> int:
        """Total number of trainable parameters."""
        return self.x_model.n_params + self.y_model.n_params

    def get_params(self) -> np.ndarray:
        """Parameters of the x-predictor followed by those of the y-predictor."""
        return np.concatenate([self.x_model.get_params(), self.y_model.get_params()])

    def set_params(self, params: np.ndarray) -> None:
        """Load parameters laid out as `get_params`."""
        split = self.x_model.n_params
        self.x_model.set_params(params[:split])
        self.y_model.set_params(params[split:])

    def fit_standardization(self, observations: np.ndarray) -> None:
        """Fit the input standardization of both factors."""
        self.x_model.fit_standardization(observations)
        self.y_model.fit_standardization(observations)

    def predict(self, s_k: np.ndarray, history: HistoryWindow) -> GaussianParams:
        """Joint Gaussian parameters with y plugged in at the y-predictor mean."""
        y_params = self.y_model.predict(s_k, history)
        x_params = self.x_model.predict(s_k, history, extra=y_params.mean)
        return GaussianParams(
            np.concatenate([x_params.mean, y_params.mean]),
            np.concatenate([x_params.std, y_params.std]),
        )

    def prediction_params(
        self, observations: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, Any]:
        """Means and stds of shape (K, 2) for every time step."""
        features_y = self.y_model.features(observations)
        mu_y, sigma_y, cache_y = self.y_model.forward(features_y)
        features_x = self.x_model.features(observations, extra=mu_y)
        mu_x, sigma_x, cache_x = self.x_model.forward(features_x)
        return (
            np.hstack([mu_x, mu_y]),
            np.hstack([sigma_x, sigma_y]),
            (cache_x, cache_y),
        )

    def prediction_backward(
        self, cache: Any, dmu: np.ndarray, dsigma: np.ndarray
    ) -> np.ndarray:
        """Gradient of a function of `prediction_params` outputs.

        The x-mean depends on the y-mean through the extra input, so the
        gradient on that input is added to the y-mean gradient.
        """
        cache_x, cache_y = cache
        grad_x, inputs_x = self.x_model.backward_with_inputs(
            cache_x, dmu[:, :1], dsigma[:, :1]
        )
        dmu_y = dmu[:, 1:] + inputs_x[:, -1:]
        grad_y = self.y_model.backward(cache_y, dmu_y, dsigma[:, 1:])
        return np.concatenate([grad_x, grad_y])

    def log_density_grad(
        self, s_k: np.ndarray, history: HistoryWindow, x: np.ndarray
    ) -> tuple[float, np.ndarray]:
        """log p(x | s, h, y) + log p(y | s, h) at the state (x, y), with gradient."""
        x = np.asarray(x, dtype=float)
        value_x, grad_x = self.x_model.log_density_grad(
            s_k, history, x[:1], extra=x[1:]
        )
        value_y, grad_y = self.y_model.log_density_grad(s_k, history, x[1:])
        return value_x + value_y, np.concatenate([grad_x, grad_y])

    def expected_log_prediction(
        self, observations: np.ndarray, samples: np.ndarray
    ) -> tuple[float, np.ndarray]:
        """Sample-mean log density of trajectories of shape (M, K, 2), with gradient."""
        samples = np.asarray(samples, dtype=float)
        value_y, grad_y = self.y_model.expected_log_prediction(
            observations, samples[..., 1:]
        )
        features = self.x_model.features(
            observations, extra=np.zeros(len(observations))
        )
        value_x = 0.0
        grad_x = np.zeros(self.x_model.n_params)
        for trajectory in samples:
            features[:, -1] = trajectory[:, 1]
            value, grad = self.x_model._expected_log_prediction(
                features, trajectory[None, :, :1]
            )
            value_x += value / len(samples)
            grad_x += grad / len(samples)
        return value_x + value_y, np.concatenate([grad_x, grad_y])

    def to_dict(self) -> dict:
        """Serialize both factors."""
        return {
            "kind": "factorized",
            "x": self.x_model.to_dict(),
            "y": self.y_model.to_dict(),
        }
