"""Training of prediction processes by expectation maximization."""

from d4decoder.learning.algorithms import TrainConfig
from d4decoder.learning.algorithms import train


__all__ = ["TrainConfig", "train"]
