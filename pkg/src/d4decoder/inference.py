"""Grid filter, backward smoother and posterior trajectory sampler."""

import warnings
from dataclasses import dataclass
from dataclasses import replace
from typing import Any
import numpy as np
import xarray as xr
from d4decoder.densities import DENSITY_FLOOR
from d4decoder.densities import GridDensity
from d4decoder.densities import StateGrid
from d4decoder.densities import discretize
from d4decoder.models.model_protocol import HistoryWindow
from d4decoder.models.model_protocol import PredictionModel
from d4decoder.models.model_protocol import history_marginal
from d4decoder.models.model_protocol import history_marginal_sequence
from d4decoder.models.model_protocol import prediction_densities
from d4decoder.reference.variables import VARIABLE_REFERENCE_LOOKUP
from d4decoder.state_transition import LinearGaussianTransition
from d4decoder.validation import DegenerateDensityError
from d4decoder.validation import MissingSamplesError
from d4decoder.validation import check_dimension
from d4decoder.validation import check_same_grid


MIN_MASS = 1e-250
DENOMINATORS = ("history", "flat")
DENSITY_KINDS = ("filter", "one_step", "history_marginal", "prediction", "smoother")


@dataclass(frozen=True, eq=False)
class PosteriorSequence:
    """Per-step densities of a decoded sequence, stacked as (K, *grid.shape) arrays.

    Attributes:
        grid: The state grid.
        filter: p(x_k | s_{1:k}).
        one_step: p(x_k | s_{1:k-1}), the transition applied to the previous filter.
        history_marginal: p(x_k | h_k), the denominator of the filter update
            (None for generative baselines).
        prediction: Discretized p(x_k | s_k, h_k) (None for generative baselines).
        smoother: p(x_k | s_{1:K}), once the backward pass ran.
        samples: Sampled trajectories of shape (M, K, ndim), once drawn.
    """

    grid: StateGrid
    filter: np.ndarray
    one_step: np.ndarray
    history_marginal: np.ndarray | None = None
    prediction: np.ndarray | None = None
    smoother: np.ndarray | None = None
    samples: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        """Number of time steps K."""
        return len(self.filter)

    def _stack(self, kind: str) -> np.ndarray:
        if kind not in DENSITY_KINDS:
            raise ValueError(
                f"Unknown density kind '{kind}', use one of {DENSITY_KINDS}."
            )
        values = getattr(self, kind)
        if values is None:
            raise ValueError(f"The posterior sequence holds no '{kind}' densities.")
        return values

    def density(self, kind: str, k: int) -> GridDensity:
        """The density of one kind at time index k (0-based)."""
        return GridDensity(self.grid, self._stack(kind)[k])

    def _probabilities(self, kind: str) -> np.ndarray:
        return self._stack(kind).reshape(self.n_steps, -1) * self.grid.cell_volume

    def means(self, kind: str = "smoother") -> np.ndarray:
        """Means of one density kind for every step, shape (K, ndim)."""
        return self._probabilities(kind) @ self.grid.points

    def stds(self, kind: str = "smoother") -> np.ndarray:
        """Standard deviations of one density kind for every step, shape (K, ndim)."""
        second = self._probabilities(kind) @ self.grid.points**2
        return np.sqrt(np.maximum(second - self.means(kind) ** 2, 0.0))

    def to_dataset(self, state_variable: str = "state") -> xr.Dataset:
        """All stored densities as an xarray Dataset with dims (k, x[, y]).

        Args:
            state_variable: Reference variable of the state axes ("state" or
                "position"), which sets the unit attributes.
        """
        unit = VARIABLE_REFERENCE_LOOKUP[state_variable].unit
        density_unit = unit ** -self.grid.ndim
        axes = ("x", "y")[: self.grid.ndim]
        coords: dict[str, Any] = {"k": ("k", np.arange(1, self.n_steps + 1))}
        for axis, centers in zip(axes, self.grid.centers, strict=True):
            coords[axis] = (axis, centers, {"units": f"{unit:~}"})
        data_vars = {}
        for kind in DENSITY_KINDS:
            values = getattr(self, kind)
            if values is not None:
                attrs = {"units": f"{density_unit:~}"}
                data_vars[kind] = (("k", *axes), values, attrs)
        return xr.Dataset(data_vars, coords=coords)


def _normalize(values: np.ndarray, grid: StateGrid, what: str) -> np.ndarray:
    mass = float(values.sum() * grid.cell_volume)
    if not np.isfinite(mass) or mass < MIN_MASS:
        raise DegenerateDensityError(
            f"The unnormalized {what} density has total mass {mass:.3e}.\n"
            "The prediction model and the state grid are likely mismatched."
        )
    return values / mass


def _discriminative_update(
    one_step: np.ndarray, prediction: np.ndarray, marginal: np.ndarray, grid: StateGrid
) -> np.ndarray:
    ratio = prediction / np.maximum(marginal, DENSITY_FLOOR)
    return _normalize(ratio * one_step, grid, "filter")


def _generative_update(
    one_step: np.ndarray, log_likelihood: np.ndarray, grid: StateGrid
) -> np.ndarray:
    likelihood = np.exp(log_likelihood - log_likelihood.max())
    return _normalize(likelihood * one_step, grid, "filter")


def filter_step(
    prev_filter: GridDensity,
    s_k: np.ndarray,
    history: HistoryWindow,
    model: PredictionModel,
    trans: LinearGaussianTransition,
    s_prev: np.ndarray | None = None,
    history_prev: HistoryWindow | None = None,
    denominator: str = "history",
) -> tuple[GridDensity, GridDensity, GridDensity]:
    """One update of the discriminative filter.

    filter_k is proportional to p(x_k | s_k, h_k) / p(x_k | h_k) times the
    one-step prediction of the previous filter. The history marginal
    propagates the prediction-process density of the previous step, given by
    `s_prev` and `history_prev` (the initial-state density when omitted).

    Returns:
        The filter, one-step prediction and history marginal densities.

    Raises:
        DegenerateDensityError: If the unnormalized filter has (almost) no mass.
    """
    grid = prev_filter.grid
    one_step = trans.chapman_kolmogorov(prev_filter)
    prediction = discretize(model.predict(s_k, history), grid, check=False)
    if denominator == "flat":
        marginal = GridDensity.uniform(grid)
    else:
        marginal = history_marginal(model, s_prev, history_prev, trans, grid)
    values = _discriminative_update(
        one_step.values, prediction.values, marginal.values, grid
    )
    return GridDensity(grid, values), one_step, marginal


def _check_denominator(denominator: str) -> None:
    if denominator not in DENOMINATORS:
        raise ValueError(
            f"Unknown filter denominator '{denominator}', use one of {DENOMINATORS}."
        )


def run_filter(
    observations: np.ndarray,
    model: Any,
    trans: LinearGaussianTransition,
    grid: StateGrid,
    denominator: str = "history",
) -> PosteriorSequence:
    """Filter an observation sequence, starting from the initial-state density.

    Prediction models (d4, ddd) use the discriminative update; generative
    baselines (ssm) use their observation likelihood in the Bayes update.

    Args:
        observations: Observation matrix of shape (K, N).
        model: A prediction model or a generative baseline.
        trans: The state transition.
        grid: The state grid.
        denominator: "history" divides by the history marginal; "flat" uses a
            uniform denominator (pseudo-likelihood filter).
    """
    _check_denominator(denominator)
    check_dimension(trans.ndim, grid.ndim, "the state grid")
    observations = np.asarray(observations, dtype=float)
    n_steps = len(observations)

    if getattr(model, "kind", None) == "ssm":
        log_likelihood = model.log_likelihood_grid(observations, grid)
        prediction = marginal = None
    else:
        mu, _, _ = model.prediction_params(observations)
        outside = int((~grid.contains(mu)).sum())
        if outside:
            warnings.warn(
                f"{outside} of {n_steps} predicted means lie outside the state grid; "
                "their densities are concentrated on the nearest cells.",
                stacklevel=2,
            )
        prediction = prediction_densities(model, observations, grid)
        if denominator == "flat":
            marginal = np.broadcast_to(
                GridDensity.uniform(grid).values, prediction.shape
            ).copy()
        else:
            marginal = history_marginal_sequence(prediction, trans, grid)

    filtered = np.empty((n_steps, *grid.shape))
    one_step = np.empty_like(filtered)
    previous = trans.initial_density(grid).values
    for k in range(n_steps):
        one_step[k] = _normalize(trans.propagate(previous, grid), grid, "one-step")
        if prediction is None:
            filtered[k] = _generative_update(one_step[k], log_likelihood[k], grid)
        else:
            filtered[k] = _discriminative_update(
                one_step[k], prediction[k], marginal[k], grid
            )
        previous = filtered[k]

    return PosteriorSequence(grid, filtered, one_step, marginal, prediction)


def run_smoother(
    post: PosteriorSequence, trans: LinearGaussianTransition
) -> PosteriorSequence:
    """Backward recursion from smoother_K = filter_K.

    smoother_k = filter_k * integral of p(x_{k+1} | x_k) smoother_{k+1} /
    one_step_{k+1} over x_{k+1}.
    """
    grid = post.grid
    smoothed = np.empty_like(post.filter)
    smoothed[-1] = post.filter[-1]
    for k in range(post.n_steps - 2, -1, -1):
        ratio = smoothed[k + 1] / np.maximum(post.one_step[k + 1], DENSITY_FLOOR)
        backward = trans.backward_integral(ratio, grid)
        smoothed[k] = _normalize(post.filter[k] * backward, grid, "smoother")
    return replace(post, smoother=smoothed)


def _inverse_cdf(weights: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF draw of a cell index from unnormalized weights."""
    cumulative = np.cumsum(weights, axis=1)
    targets = uniforms * cumulative[:, -1]
    index = (cumulative <= targets[:, None]).sum(axis=1)
    return np.minimum(index, weights.shape[1] - 1)


def sample_trajectories(
    post: PosteriorSequence,
    trans: LinearGaussianTransition,
    n_samples: int,
    seed: int,
) -> np.ndarray:
    """Forward-filter backward-sample state trajectories.

    x_K is drawn from the last smoother density, then x_k from
    p(x_{k+1} | x_k) filter_k(x_k) going backward. Trajectory m uses its own
    PCG64 stream seeded with `seed + m`; samples are grid cell centers.

    Returns:
        Trajectories of shape (n_samples, K, ndim).
    """
    if post.smoother is None:
        raise MissingSamplesError("Run the smoother before sampling trajectories.")
    if n_samples < 1:
        raise ValueError(
            f"The number of trajectories must be positive, got {n_samples}."
        )
    grid = post.grid
    n_steps = post.n_steps
    uniforms = np.stack(
        [
            np.random.Generator(np.random.PCG64(seed + m)).random(n_steps)
            for m in range(n_samples)
        ]
    )
    matrices = trans.kernel_matrices(grid)

    cells = np.empty((n_samples, n_steps), dtype=int)
    last = np.broadcast_to(post.smoother[-1].ravel(), (n_samples, grid.size))
    cells[:, -1] = _inverse_cdf(last, uniforms[:, -1])
    for k in range(n_steps - 2, -1, -1):
        following = np.unravel_index(cells[:, k + 1], grid.shape)
        if grid.ndim == 1:
            kernel = matrices[0][following[0]]
        else:
            kernel = (
                matrices[0][following[0]][:, :, None]
                * matrices[1][following[1]][:, None, :]
            ).reshape(n_samples, -1)
        weights = kernel * post.filter[k].ravel()[None, :]
        cells[:, k] = _inverse_cdf(weights, uniforms[:, k])
    return grid.points[cells]


def decode(
    observations: np.ndarray,
    model: Any,
    trans: LinearGaussianTransition,
    grid: StateGrid,
    n_samples: int = 0,
    seed: int = 0,
    denominator: str = "history",
) -> PosteriorSequence:
    """Filter, smooth and optionally sample trajectories of one sequence."""
    post = run_filter(observations, model, trans, grid, denominator)
    post = run_smoother(post, trans)
    if n_samples:
        post = replace(post, samples=sample_trajectories(post, trans, n_samples, seed))
    return post


def total_variation(first: GridDensity, second: GridDensity) -> float:
    """Total variation distance between two densities on the same grid."""
    check_same_grid(first, second)
    difference = np.abs(first.values - second.values).sum()
    return 0.5 * float(difference * first.grid.cell_volume)
