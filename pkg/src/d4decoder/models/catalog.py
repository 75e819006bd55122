"""Catalog of prediction models and generative baselines."""

from typing import Any
from d4decoder.models.factorized import FactorizedPredictor
from d4decoder.models.linear import LinearPredictor
from d4decoder.models.mlp import DEFAULT_HIDDEN
from d4decoder.models.mlp import MlpPredictor
from d4decoder.models.model_protocol import GaussianPredictor
from d4decoder.models.ssm import GaussianObservationSSM
from d4decoder.models.ssm import PoissonPlaceFieldSSM


# This object tracks which prediction models are available.
MODELS: dict[str, type[GaussianPredictor]] = {
    # prediction processes
    "d4": MlpPredictor,
    "ddd": LinearPredictor,
}

# Generative state-space baselines, by observation likelihood.
BASELINES: dict[str, Any] = {
    "gaussian": GaussianObservationSSM,
    "poisson": PoissonPlaceFieldSSM,
}


def _build_factor(
    kind: str,
    n_channels: int,
    lag: int,
    n_extra: int,
    seed: int,
    hidden: tuple[int, ...],
) -> GaussianPredictor:
    if kind == "d4":
        return MlpPredictor(n_channels, lag, 1, n_extra, hidden=hidden, seed=seed)
    return LinearPredictor(n_channels, lag, 1, n_extra)


def build_model(
    kind: str,
    n_channels: int,
    lag: int,
    state_dim: int = 1,
    seed: int = 0,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
) -> GaussianPredictor | FactorizedPredictor:
    """Create an untrained prediction model.

    Two-dimensional states get the factorized predictor; its x-factor uses
    `seed` and its y-factor `seed + 1`.

    Raises:
        ValueError: For an unknown model kind or state dimension.
    """
    kind = kind.lower()
    if kind not in MODELS:
        msg = (
            f"Unknown prediction model '{kind}'.\n"
            f"Available models are: {', '.join(MODELS)}."
        )
        raise ValueError(msg)
    if state_dim == 1:
        return _build_factor(kind, n_channels, lag, 0, seed, hidden)
    if state_dim == 2:
        return FactorizedPredictor(
            _build_factor(kind, n_channels, lag, 1, seed, hidden),
            _build_factor(kind, n_channels, lag, 0, seed + 1, hidden),
        )
    msg = f"Only 1-D and 2-D states are supported, got {state_dim}."
    raise ValueError(msg)


def model_from_dict(data: dict) -> Any:
    """Rebuild any model serialized with its `to_dict` method."""
    kind = data["kind"]
    if kind == "factorized":
        x_model = model_from_dict(data["x"])
        return FactorizedPredictor(x_model, model_from_dict(data["y"]))
    if kind == "ssm":
        return BASELINES[data["likelihood"]].from_dict(data)
    if kind in MODELS:
        return MODELS[kind].from_dict(data)  # type: ignore[attr-defined]
    msg = f"Unknown model kind '{kind}' in serialized model."
    raise ValueError(msg)
