"""Training algorithms: greedy history search and regularized optimization."""

import json
import time
import warnings
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any
import numpy as np
import pandas as pd
from tqdm import tqdm
from d4decoder.densities import StateGrid
from d4decoder.inference import DENOMINATORS
from d4decoder.inference import decode
from d4decoder.learning.gradients import AdamAscent
from d4decoder.learning.gradients import ascent_step
from d4decoder.learning.gradients import grad_step_regularized
from d4decoder.learning.q_function import QBreakdown
from d4decoder.learning.q_function import compute_q
from d4decoder.models.catalog import MODELS
from d4decoder.models.catalog import build_model
from d4decoder.models.checkpoint import Checkpoint
from d4decoder.models.mlp import DEFAULT_HIDDEN
from d4decoder.models.ssm import fit_ssm
from d4decoder.simulation.dataset_protocol import EpisodeDataset
from d4decoder.state_transition import LinearGaussianTransition
from d4decoder.state_transition import fit_transition_mle
from d4decoder.utils import derive_seed
from d4decoder.validation import InsufficientDataError
from d4decoder.validation import MissingSamplesError


ALGORITHMS = ("greedy", "regularized")
STATE_MODES = ("auto", "observed", "latent")


@dataclass
class TrainConfig:
    """Settings of a training run.

    Attributes:
        model: Model kind, "d4", "ddd" or "ssm".
        algorithm: "greedy" (lag search) or "regularized" (fixed lag, penalty).
        lam: Regularization coefficient of the KL + entropy penalty.
        max_lag: Largest lag of the greedy search; the lag of regularized runs.
        learning_rate: Step size of the ascent optimizer.
        epochs: Gradient steps per EM iteration.
        warmup_epochs: Gradient steps on the prediction term before EM, when
            the states are observed.
        max_iterations: Cap on EM iterations of regularized runs.
        inner_iterations: Cap on EM iterations per lag of the greedy search.
        n_samples: Trajectories drawn per E-step when the states are latent.
        seed: Root seed of every random stream of the run.
        tolerance: Relative Q improvement counted as progress.
        patience: Iterations without progress before stopping.
        hidden: Hidden layer sizes of d4 networks.
        state_mode: "observed", "latent" or "auto" (observed if states exist).
        denominator: Filter denominator, "history" or "flat".
        kl_entropy_threshold: Diagnostic threshold on KL_k + H_k.
        init_sigma_x: Random-walk noise of the first E-step with latent states.
        progress: Show progress bars.
    """

    model: str = "d4"
    algorithm: str = "regularized"
    lam: float = 0.0
    max_lag: int = 20
    learning_rate: float = 1e-2
    epochs: int = 5
    warmup_epochs: int = 200
    max_iterations: int = 50
    inner_iterations: int = 10
    n_samples: int = 32
    seed: int = 0
    tolerance: float = 1e-3
    patience: int = 3
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    state_mode: str = "auto"
    denominator: str = "history"
    kl_entropy_threshold: float = 0.0
    init_sigma_x: float = 0.1
    progress: bool = True

    def __post_init__(self) -> None:
        """Validate the initialized TrainConfig class."""
        self.model = self.model.lower()
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.model not in (*MODELS, "ssm"):
            raise ValueError(
                f"Unknown model '{self.model}'.\nChoose from: {', '.join(MODELS)}, ssm."
            )
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"Unknown algorithm '{self.algorithm}'.\n"
                f"Choose from: {', '.join(ALGORITHMS)}."
            )
        if self.lam < 0:
            raise ValueError(
                f"The regularization coefficient must be >= 0, got {self.lam}."
            )
        if self.max_lag < 0:
            raise ValueError(
                f"The maximum lag can not be negative, got {self.max_lag}."
            )
        if self.state_mode not in STATE_MODES:
            raise ValueError(
                f"Unknown state mode '{self.state_mode}'.\n"
                f"Choose from: {', '.join(STATE_MODES)}."
            )
        if self.denominator not in DENOMINATORS:
            raise ValueError(
                f"Unknown denominator '{self.denominator}'.\n"
                f"Choose from: {', '.join(DENOMINATORS)}."
            )
        for name in ("epochs", "max_iterations", "inner_iterations", "n_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"'{name}' must be at least 1.")

    def resolve_state_mode(self, dataset: EpisodeDataset) -> str:
        """Observed or latent, for this dataset.

        Raises:
            MissingSamplesError: If observed states are requested but absent.
        """
        if self.state_mode == "auto":
            return "observed" if dataset.has_states else "latent"
        if self.state_mode == "observed" and not dataset.has_states:
            raise MissingSamplesError(
                f"Observed-state training needs states, but '{dataset.name}' has none."
            )
        return self.state_mode


class TrainingLog:
    """Training records, optionally appended to an NDJSON file."""

    def __init__(self, path: Path | None = None) -> None:
        """Start a new log, truncating the file at `path`."""
        self.path = path
        self.records: list[dict[str, Any]] = []
        if path is not None:
            path.write_text("", encoding="utf-8")

    def write(self, record: dict[str, Any]) -> None:
        """Add one record."""
        self.records.append(record)
        if self.path is not None:
            with self.path.open(mode="a", encoding="utf-8") as file:
                file.write(json.dumps(record) + "\n")

    def to_frame(self) -> pd.DataFrame:
        """All records as a table."""
        return pd.DataFrame(self.records)


@dataclass
class TrainResult:
    """Trained decoder and the curves of its training run."""

    model: Any
    transition: LinearGaussianTransition
    grid: StateGrid
    config: TrainConfig
    q_curve: list[dict[str, Any]] = field(default_factory=list)
    q_trace: list[dict[str, Any]] = field(default_factory=list)

    @property
    def lag(self) -> int:
        """History lag of the trained model."""
        return int(self.model.lag)

    def checkpoint(self, config_hash: str = "") -> Checkpoint:
        """Bundle the result as a checkpoint."""
        return Checkpoint(
            self.model,
            self.transition,
            self.grid,
            config_hash,
            {
                "algorithm": self.config.algorithm,
                "lambda": self.config.lam,
                "denominator": self.config.denominator,
            },
        )

    def curve_frame(self) -> pd.DataFrame:
        """Q against lag (greedy search)."""
        return pd.DataFrame(self.q_curve)

    def trace_frame(self) -> pd.DataFrame:
        """Q against EM iteration."""
        return pd.DataFrame(self.q_trace)


def default_grid(
    dataset: EpisodeDataset,
    lower: tuple[float, ...] | None = None,
    upper: tuple[float, ...] | None = None,
    cells: tuple[int, ...] | None = None,
) -> StateGrid:
    """The state grid of a dataset, with optional overrides.

    1-D states default to [-8, 8] with 400 cells; 2-D states to the padded
    bounding box of the states with 80 x 80 cells.

    Raises:
        ValueError: For 2-D latent states without explicit bounds.
    """
    if dataset.state_dim == 1:
        base = StateGrid.default_1d()
    elif dataset.states is not None:
        base = StateGrid.from_states(dataset.states)
    elif lower is None or upper is None:
        raise ValueError(
            "A 2-D grid is derived from the training states; give grid_lower and "
            "grid_upper when the states are latent."
        )
    else:
        base = StateGrid(lower, upper, cells or (80, 80))
    return StateGrid(
        base.lower if lower is None else lower,
        base.upper if upper is None else upper,
        base.cells if cells is None else cells,
    )


def _initial_transition(
    dataset: EpisodeDataset,
    config: TrainConfig,
    observed: bool,
    init: Checkpoint | None,
) -> LinearGaussianTransition:
    if observed and dataset.states is not None:
        return fit_transition_mle(dataset.states, random_walk=dataset.state_dim == 2)
    if init is not None:
        return init.transition
    return LinearGaussianTransition.random_walk(config.init_sigma_x, dataset.state_dim)


def _new_model(config: TrainConfig, dataset: EpisodeDataset, lag: int) -> Any:
    model = build_model(
        config.model,
        dataset.n_channels,
        lag,
        dataset.state_dim,
        seed=derive_seed(config.seed, "init", lag),
        hidden=config.hidden,
    )
    model.fit_standardization(dataset.observations)
    return model


def _warm_up(
    dataset: EpisodeDataset, model: Any, config: TrainConfig, optimizer: AdamAscent
) -> None:
    """Fit the prediction term alone on the observed states."""
    samples = np.asarray(dataset.states)[None]
    for _ in range(config.warmup_epochs):
        _, grad = model.expected_log_prediction(dataset.observations, samples)
        ascent_step(model, grad, optimizer)


def _em_loop(
    dataset: EpisodeDataset,
    model: Any,
    trans: LinearGaussianTransition,
    grid: StateGrid,
    config: TrainConfig,
    lam: float,
    n_iterations: int,
    stage: str,
    log: TrainingLog,
) -> tuple[Any, LinearGaussianTransition, list[dict[str, Any]], QBreakdown]:
    """Alternate E-steps (filter, smoother, sampling) and gradient M-steps.

    Returns:
        The model, the transition, one record per iteration and the Q of the
        final parameters.
    """
    observations = dataset.observations
    observed = config.resolve_state_mode(dataset) == "observed"
    optimizer = AdamAscent(config.learning_rate)
    if observed:
        _warm_up(dataset, model, config, optimizer)

    def e_step(iteration: int) -> tuple[Any, np.ndarray]:
        post = decode(
            observations,
            model,
            trans,
            grid,
            n_samples=0 if observed else config.n_samples,
            seed=derive_seed(config.seed, f"{stage}-samples", iteration),
            denominator=config.denominator,
        )
        if observed:
            return post, np.asarray(dataset.states)[None]
        return post, post.samples

    trace: list[dict[str, Any]] = []
    previous = -np.inf
    stalled = 0
    iterations = tqdm(
        range(n_iterations), desc=stage, leave=False, disable=not config.progress
    )
    for iteration in iterations:
        start = time.perf_counter()
        post, samples = e_step(iteration)
        q = compute_q(
            observations, model, trans, post, lam, samples, config.kl_entropy_threshold
        )
        for _ in range(config.epochs):
            grad_step_regularized(
                observations, model, trans, post.smoother, samples, grid, lam, optimizer
            )
        if not observed:
            trans = fit_transition_mle(
                samples, random_walk=grid.ndim == 2, empirical_initial=False
            )

        record = {
            "stage": stage,
            "algorithm": config.algorithm,
            "iteration": iteration,
            "lag": int(model.lag),
            "learning_rate": optimizer.learning_rate,
            "wall_time": time.perf_counter() - start,
            **q.to_record(),
        }
        log.write(record)
        trace.append(record)
        iterations.set_postfix(q=f"{q.q_regularized:.4g}")
        if q.n_below_threshold:
            warnings.warn(
                f"{q.n_below_threshold} steps have KL + entropy below the threshold "
                f"{config.kl_entropy_threshold}.",
                stacklevel=2,
            )

        if q.q_regularized - previous < config.tolerance * abs(previous):
            stalled += 1
        else:
            stalled = 0
        previous = max(previous, q.q_regularized)
        if stalled >= config.patience:
            break

    post, samples = e_step(n_iterations)
    final = compute_q(
        observations, model, trans, post, lam, samples, config.kl_entropy_threshold
    )
    return model, trans, trace, final


def _check_length(dataset: EpisodeDataset, lag: int) -> None:
    if dataset.n_steps <= lag:
        raise InsufficientDataError(
            f"'{dataset.name}' has {dataset.n_steps} steps; more than {lag} are "
            "needed for this history length."
        )


def train_greedy(
    dataset: EpisodeDataset,
    config: TrainConfig,
    grid: StateGrid | None = None,
    log: TrainingLog | None = None,
    init: Checkpoint | None = None,
) -> TrainResult:
    """Grow the history one lag at a time while Q keeps improving.

    For every lag the inner EM loop maximizes the expected log-likelihood
    only; lags are compared on Q with the KL and entropy sums added. The
    search stops at the first lag that does not improve on the best Q so far.
    """
    _check_length(dataset, config.max_lag)
    grid = grid or default_grid(dataset)
    log = log or TrainingLog()
    observed = config.resolve_state_mode(dataset) == "observed"

    curve: list[dict[str, Any]] = []
    trace: list[dict[str, Any]] = []
    best: tuple[Any, LinearGaussianTransition] | None = None
    q_max = -np.inf
    lags = tqdm(
        range(config.max_lag + 1), desc="greedy lag search", disable=not config.progress
    )
    for lag in lags:
        model = _new_model(config, dataset, lag)
        trans = _initial_transition(dataset, config, observed, init)
        model, trans, lag_trace, final = _em_loop(
            dataset,
            model,
            trans,
            grid,
            config,
            lam=0.0,
            n_iterations=config.inner_iterations,
            stage=f"greedy-l{lag}",
            log=log,
        )
        trace.extend(lag_trace)
        curve.append({"lag": lag, **final.to_record()})
        lags.set_postfix(q=f"{final.q_greedy:.4g}")
        if best is not None and final.q_greedy <= q_max:
            break
        q_max = final.q_greedy
        best = (model, trans)

    if best is None:
        raise InsufficientDataError("The greedy search did not train any model.")
    return TrainResult(best[0], best[1], grid, config, curve, trace)


def train_regularized(
    dataset: EpisodeDataset,
    config: TrainConfig,
    grid: StateGrid | None = None,
    log: TrainingLog | None = None,
    init: Checkpoint | None = None,
) -> TrainResult:
    """EM on the lam-penalized lower bound with a fixed, long history.

    A compatible checkpoint given as `init` warm-starts the prediction model.
    """
    _check_length(dataset, config.max_lag)
    grid = grid or default_grid(dataset)
    log = log or TrainingLog()
    observed = config.resolve_state_mode(dataset) == "observed"

    if (
        init is not None
        and init.kind == config.model
        and init.lag == config.max_lag
        and init.model.n_channels == dataset.n_channels
    ):
        model = init.model
    else:
        model = _new_model(config, dataset, config.max_lag)
    trans = _initial_transition(dataset, config, observed, init)
    model, trans, trace, final = _em_loop(
        dataset,
        model,
        trans,
        grid,
        config,
        lam=config.lam,
        n_iterations=config.max_iterations,
        stage="regularized",
        log=log,
    )
    curve = [{"lag": config.max_lag, **final.to_record()}]
    return TrainResult(model, trans, grid, config, curve, trace)


def train(
    dataset: EpisodeDataset,
    config: TrainConfig,
    grid: StateGrid | None = None,
    log: TrainingLog | None = None,
    init: Checkpoint | None = None,
) -> TrainResult:
    """Train the model kind of `config` with its algorithm.

    The ssm baseline is fitted in closed form on the observed states.

    Raises:
        MissingSamplesError: For the ssm baseline without observed states.
    """
    if config.model == "ssm":
        if dataset.states is None:
            raise MissingSamplesError("The ssm baseline is fitted on observed states.")
        grid = grid or default_grid(dataset)
        model = fit_ssm(dataset.states, dataset.observations, grid, dataset.bin_width)
        trans = fit_transition_mle(dataset.states, random_walk=dataset.state_dim == 2)
        return TrainResult(model, trans, grid, config)
    if config.algorithm == "greedy":
        return train_greedy(dataset, config, grid, log, init)
    return train_regularized(dataset, config, grid, log, init)
