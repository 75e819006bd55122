"""Synthetic dataset generators and episode I/O."""

from d4decoder.simulation import dataset_protocol
from d4decoder.simulation.catalog import GENERATORS


__all__ = ["dataset_protocol", "GENERATORS"]
