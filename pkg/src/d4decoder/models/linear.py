"""Linear-Gaussian prediction process (DDD)."""

from typing import Any
import numpy as np
from d4decoder.models.model_protocol import GaussianPredictor


class LinearPredictor(GaussianPredictor):
    """p(x_k | s_k, h_k) = N(W^T [s_k, h_k] + bias, sigma_s**2).

    The noise std is constant over time and learned as `log_sigma`.
    """

    kind = "ddd"

    def __init__(
        self,
        n_channels: int,
        lag: int,
        state_dim: int = 1,
        n_extra: int = 0,
        sigma: float = 1.0,
    ) -> None:
        """Create a linear predictor with zero weights and noise std `sigma`."""
        super().__init__(n_channels, lag, state_dim, n_extra)
        if sigma <= 0:
            raise ValueError(f"Noise std sigma_s must be positive, got {sigma}.")
        self.params = {
            "weights": np.zeros((self.n_features, state_dim)),
            "bias": np.zeros(state_dim),
            "log_sigma": np.full(state_dim, np.log(sigma)),
        }

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray, Any]:
        """Mean and std for every feature row."""
        mu = features @ self.params["weights"] + self.params["bias"]
        sigma = np.broadcast_to(np.exp(self.params["log_sigma"]), mu.shape)
        return mu, sigma, (features, sigma)

    def backward_with_inputs(
        self, cache: Any, dmu: np.ndarray, dsigma: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Flat gradient ordered as weights, bias, log_sigma, and the input gradient.

        The std does not depend on the inputs, so only `dmu` reaches them.
        """
        features, sigma = cache
        grad = np.concatenate(
            [
                (features.T @ dmu).ravel(),
                dmu.sum(axis=0),
                (dsigma * sigma).sum(axis=0),
            ]
        )
        return grad, dmu @ self.params["weights"].T

    @classmethod
    def from_dict(cls, data: dict) -> "LinearPredictor":
        """Load a predictor serialized with `to_dict`."""
        model = cls(data["n_channels"], data["lag"], data["state_dim"], data["n_extra"])
        model._load_dict(data)
        return model
