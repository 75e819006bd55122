"""Expected complete-data log-likelihood (Q) and its regularized lower bound."""

from dataclasses import asdict
from dataclasses import dataclass
from typing import Any
import numpy as np
from scipy import special
from d4decoder.densities import DENSITY_FLOOR
from d4decoder.densities import entropy_batch
from d4decoder.densities import kl_divergence_batch
from d4decoder.inference import PosteriorSequence
from d4decoder.models.model_protocol import history_marginal_sequence
from d4decoder.models.model_protocol import prediction_densities
from d4decoder.state_transition import LinearGaussianTransition
from d4decoder.validation import MissingSamplesError
from d4decoder.validation import check_dimension


@dataclass(frozen=True)
class QBreakdown:
    """Terms of the Q function for one evaluation.

    `q_greedy` adds the KL and entropy sums to the expected log-likelihood
    terms; `q_regularized` subtracts lam * sum_k (KL_k + H_k)**2 from them.
    """

    expected_log_initial: float
    expected_log_transition: float
    expected_log_prediction: float
    kl_sum: float
    entropy_sum: float
    q_greedy: float
    q_regularized: float
    lam: float
    n_below_threshold: int = 0

    def __post_init__(self) -> None:
        """Validate the initialized QBreakdown class."""
        if self.kl_sum < 0:
            raise ValueError(f"The KL sum can not be negative, got {self.kl_sum}.")

    @property
    def expected_log_likelihood(self) -> float:
        """Sum of the three expectation terms."""
        return (
            self.expected_log_initial
            + self.expected_log_transition
            + self.expected_log_prediction
        )

    def to_record(self) -> dict[str, Any]:
        """Plain dictionary of all fields, for logs and tables."""
        return asdict(self)


def initial_state_terms(
    trans: LinearGaussianTransition, first_states: np.ndarray, post: PosteriorSequence
) -> tuple[float, float]:
    """E[log p(x_0)] and E[log p(x_1 | x_0)], with x_0 integrated on the grid.

    For every observed or sampled x_1 the pre-sequence state x_0 follows
    p(x_0 | x_1), proportional to p(x_1 | x_0) p(x_0). Both expectations are
    averaged over the given first states.

    Args:
        trans: The state transition.
        first_states: States x_1 of shape (M, ndim).
        post: Posterior sequence providing the state grid.
    """
    grid = post.grid
    log_initial = np.log(
        np.maximum(trans.initial_density(grid).values.ravel(), DENSITY_FLOOR)
    )
    log_step = trans.log_density(first_states[:, None, :], grid.points[None, :, :])
    log_weights = log_step + log_initial[None, :]
    log_norm = special.logsumexp(log_weights, axis=1, keepdims=True)
    weights = np.exp(log_weights - log_norm)
    expected_initial = float((weights * log_initial[None, :]).sum(axis=1).mean())
    expected_step = float((weights * log_step).sum(axis=1).mean())
    return expected_initial, expected_step


def compute_q(
    observations: np.ndarray,
    model: Any,
    trans: LinearGaussianTransition,
    post: PosteriorSequence,
    lam: float,
    samples: np.ndarray | None = None,
    kl_entropy_threshold: float = 0.0,
) -> QBreakdown:
    """Evaluate Q for the current parameters against the posterior in `post`.

    Expectations over trajectories are sample averages. Pass the observed
    states as a single "sample" of shape (1, K, ndim) when they are known;
    otherwise the trajectories stored in `post` are used. The KL and entropy
    terms compare the smoother with the history marginals of `model`.

    Raises:
        MissingSamplesError: Without samples or a smoother.
    """
    if samples is None:
        samples = post.samples
    if samples is None or post.smoother is None:
        raise MissingSamplesError(
            "Q needs smoother densities and sampled (or observed) state trajectories."
        )
    samples = np.asarray(samples, dtype=float).reshape(
        -1, post.n_steps, post.grid.ndim
    )
    check_dimension(post.n_steps, len(observations), "observation steps")

    expected_initial, expected_first_step = initial_state_terms(
        trans, samples[:, 0, :], post
    )
    expected_transition = expected_first_step + float(
        trans.log_density(samples[:, 1:, :], samples[:, :-1, :]).sum(axis=1).mean()
    )
    expected_prediction, _ = model.expected_log_prediction(observations, samples)

    marginals = history_marginal_sequence(
        prediction_densities(model, observations, post.grid), trans, post.grid
    )
    kl = kl_divergence_batch(post.smoother, marginals, post.grid.cell_volume)
    entropies = entropy_batch(post.smoother, post.grid.cell_volume)

    expected = expected_initial + expected_transition + expected_prediction
    return QBreakdown(
        expected_log_initial=expected_initial,
        expected_log_transition=expected_transition,
        expected_log_prediction=float(expected_prediction),
        kl_sum=float(kl.sum()),
        entropy_sum=float(entropies.sum()),
        q_greedy=float(expected + kl.sum() + entropies.sum()),
        q_regularized=float(expected - lam * ((kl + entropies) ** 2).sum()),
        lam=float(lam),
        n_below_threshold=int((kl + entropies < kl_entropy_threshold).sum()),
    )
