"""Prediction processes and generative baselines."""

from d4decoder.models.catalog import BASELINES
from d4decoder.models.catalog import MODELS
from d4decoder.models.catalog import build_model


__all__ = ["MODELS", "BASELINES", "build_model"]
