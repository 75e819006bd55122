"""Gradients of the regularized lower bound and the ascent optimizer."""

import warnings
from typing import Any
import numpy as np
from d4decoder.densities import DENSITY_FLOOR
from d4decoder.densities import StateGrid
from d4decoder.densities import discretize_batch
from d4decoder.densities import entropy_batch
from d4decoder.densities import kl_divergence_batch
from d4decoder.models.model_protocol import history_marginal_sequence
from d4decoder.state_transition import LinearGaussianTransition


class AdamAscent:
    """Adam update rule, ascending the objective.

    Moments are kept between calls, so one instance should serve one model.
    """

    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        """Set the step size and moment decay rates."""
        if learning_rate <= 0:
            raise ValueError(
                f"The learning rate must be positive, got {learning_rate}."
            )
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._first: np.ndarray | None = None
        self._second: np.ndarray | None = None

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return the parameters after one ascent step along `grad`."""
        if self._first is None or self._second is None:
            self._first = np.zeros_like(params)
            self._second = np.zeros_like(params)
        self.step_count += 1
        self._first = self.beta1 * self._first + (1 - self.beta1) * grad
        self._second = self.beta2 * self._second + (1 - self.beta2) * grad**2
        first = self._first / (1 - self.beta1**self.step_count)
        second = self._second / (1 - self.beta2**self.step_count)
        return params + self.learning_rate * first / (np.sqrt(second) + self.eps)


def regularization_penalty(
    observations: np.ndarray,
    model: Any,
    trans: LinearGaussianTransition,
    smoother: np.ndarray,
    grid: StateGrid,
    lam: float,
) -> float:
    """The penalty -lam * sum_k (KL_k + H_k)**2 for the current parameters."""
    mu, sigma, _ = model.prediction_params(observations)
    prediction = discretize_batch(grid, mu, sigma)
    marginals = history_marginal_sequence(prediction, trans, grid)
    kl = kl_divergence_batch(smoother, marginals, grid.cell_volume)
    entropies = entropy_batch(smoother, grid.cell_volume)
    return float(-lam * ((kl + entropies) ** 2).sum())


def _axis_marginals(values: np.ndarray, grid: StateGrid, axis: int) -> np.ndarray:
    """Sum (K, *grid.shape) values over every grid axis but one."""
    if grid.ndim == 1:
        return values
    return values.sum(axis=2 - axis)


def penalty_gradient(
    observations: np.ndarray,
    model: Any,
    trans: LinearGaussianTransition,
    smoother: np.ndarray,
    grid: StateGrid,
    lam: float,
) -> tuple[float, np.ndarray]:
    """Exact gradient of -lam * sum_k (KL_k + H_k)**2 with respect to the parameters.

    KL_k compares the smoother with the history marginal q_k, which propagates
    the discretized prediction density of step k - 1 through the transition.
    Only q_k depends on the parameters, and dKL_k = -d sum_i w_i log q_i with
    w the smoother cell masses. The gradient reaches the prediction-process
    mean and std of step k - 1 through the transition kernel and the grid
    normalization of the discretized Gaussian.

    Returns:
        The penalty value and its flat parameter gradient.
    """
    mu, sigma, cache = model.prediction_params(observations)
    prediction = discretize_batch(grid, mu, sigma)
    marginals = history_marginal_sequence(prediction, trans, grid)
    kl = kl_divergence_batch(smoother, marginals, grid.cell_volume)
    entropies = entropy_batch(smoother, grid.cell_volume)
    coefficient = kl + entropies
    penalty = float(-lam * (coefficient**2).sum())

    # derivative of sum_i w_i log q_i with respect to the prediction density
    # of the previous step, weighted by 2 * lam * (KL_k + H_k)
    weights = smoother[1:] * grid.cell_volume
    ratio = weights / np.maximum(marginals[1:], DENSITY_FLOOR)
    upstream = np.zeros_like(prediction)
    scale = (2.0 * lam * coefficient[1:]).reshape(-1, *([1] * grid.ndim))
    upstream[:-1] = scale * trans.backward_integral(ratio, grid)

    # chain through p_j = u_j / sum(u * volume): dp_j = p_j * (score_j - mean score)
    weighted = upstream * prediction
    total = weighted.reshape(len(weighted), -1).sum(axis=1)
    dmu = np.zeros_like(mu)
    dsigma = np.zeros_like(sigma)
    for axis in range(grid.ndim):
        axis_weight = _axis_marginals(weighted, grid, axis)
        axis_density = _axis_marginals(prediction, grid, axis)
        axis_sigma = sigma[:, axis : axis + 1]
        z = (grid.centers[axis][None, :] - mu[:, axis : axis + 1]) / axis_sigma
        for score, target in ((z / axis_sigma, dmu), (z**2 / axis_sigma, dsigma)):
            mean_score = (axis_density * score).sum(axis=1) * grid.cell_volume
            target[:, axis] = (axis_weight * score).sum(axis=1) - total * mean_score

    return penalty, model.prediction_backward(cache, dmu, dsigma)


def ascent_step(model: Any, grad: np.ndarray, optimizer: AdamAscent) -> bool:
    """Apply one optimizer step; skip it and halve the rate on a non-finite gradient.

    Returns:
        Whether the parameters were updated.
    """
    if not np.all(np.isfinite(grad)):
        optimizer.learning_rate /= 2
        warnings.warn(
            "Non-finite gradient; the step is skipped and the learning rate is "
            f"halved to {optimizer.learning_rate:.3e}.",
            RuntimeWarning,
            stacklevel=2,
        )
        return False
    model.set_params(optimizer.step(model.get_params(), grad))
    return True


def grad_step_regularized(
    observations: np.ndarray,
    model: Any,
    trans: LinearGaussianTransition,
    smoother: np.ndarray,
    samples: np.ndarray,
    grid: StateGrid,
    lam: float,
    optimizer: AdamAscent,
) -> Any:
    """One ascent step on the regularized lower bound, updating `model` in place.

    The expectation term uses the trajectory samples; the penalty term is
    integrated on the grid. A step with a non-finite gradient is skipped and
    the learning rate halved.

    Returns:
        The model.
    """
    _, grad = model.expected_log_prediction(observations, samples)
    if lam > 0:
        _, penalty_grad = penalty_gradient(
            observations, model, trans, smoother, grid, lam
        )
        grad = grad + penalty_grad
    ascent_step(model, grad, optimizer)
    return model
