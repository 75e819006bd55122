"""Feed-forward prediction process with heteroscedastic Gaussian output (D4)."""

from typing import Any
import numpy as np
from scipy import special
from d4decoder.models.model_protocol import GaussianPredictor


SIGMA_FLOOR = 1e-3
DEFAULT_HIDDEN = (64, 64)


class MlpPredictor(GaussianPredictor):
    """p(x_k | s_k, h_k) = N(mu(s_k, h_k), sigma(s_k, h_k)**2).

    Hidden layers use tanh. The last layer has 2 * state_dim outputs: the
    mean (identity) and the std, max(softplus(z), 1e-3).
    """

    kind = "d4"

    def __init__(
        self,
        n_channels: int,
        lag: int,
        state_dim: int = 1,
        n_extra: int = 0,
        hidden: tuple[int, ...] = DEFAULT_HIDDEN,
        seed: int = 0,
    ) -> None:
        """Create a network with seeded Glorot-uniform weights and zero biases."""
        super().__init__(n_channels, lag, state_dim, n_extra)
        self.hidden = tuple(int(h) for h in hidden)
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"Hidden layer sizes must be positive, got {self.hidden}.")
        rng = np.random.default_rng(seed)
        sizes = (self.n_features, *self.hidden, 2 * state_dim)
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:], strict=True)):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.params[f"weights_{i}"] = rng.uniform(-limit, limit, (fan_in, fan_out))
            self.params[f"bias_{i}"] = np.zeros(fan_out)

    @property
    def n_layers(self) -> int:
        """Number of weight layers."""
        return len(self.hidden) + 1

    def _affine(self, inputs: np.ndarray, layer: int) -> np.ndarray:
        return inputs @ self.params[f"weights_{layer}"] + self.params[f"bias_{layer}"]

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray, Any]:
        """Mean and std for every feature row."""
        activations = [features]
        for i in range(self.n_layers - 1):
            activations.append(np.tanh(self._affine(activations[-1], i)))
        out = self._affine(activations[-1], self.n_layers - 1)
        mu = out[:, : self.state_dim]
        sigma_pre = out[:, self.state_dim :]
        softplus = np.logaddexp(0.0, sigma_pre)
        sigma = np.maximum(softplus, SIGMA_FLOOR)
        return mu, sigma, (activations, sigma_pre, softplus)

    def backward_with_inputs(
        self, cache: Any, dmu: np.ndarray, dsigma: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Backpropagate mean and std gradients; zero through the std floor.

        Returns:
            The flat parameter gradient and the gradient on the feature matrix.
        """
        activations, sigma_pre, softplus = cache
        dsigma_pre = dsigma * special.expit(sigma_pre) * (softplus > SIGMA_FLOOR)
        delta = np.hstack([dmu, dsigma_pre])

        grads: dict[str, np.ndarray] = {}
        for i in reversed(range(self.n_layers)):
            grads[f"weights_{i}"] = activations[i].T @ delta
            grads[f"bias_{i}"] = delta.sum(axis=0)
            if i:
                delta = delta @ self.params[f"weights_{i}"].T
                delta *= 1.0 - activations[i] ** 2
        flat = np.concatenate([grads[name].ravel() for name in self.params])
        return flat, delta @ self.params["weights_0"].T

    def to_dict(self) -> dict:
        """Serialize the network, including its layer sizes."""
        return {**super().to_dict(), "hidden": list(self.hidden)}

    @classmethod
    def from_dict(cls, data: dict) -> "MlpPredictor":
        """Load a network serialized with `to_dict`."""
        model = cls(
            data["n_channels"],
            data["lag"],
            data["state_dim"],
            data["n_extra"],
            hidden=tuple(data["hidden"]),
        )
        model._load_dict(data)
        return model
