"""Unit test for validation."""

import numpy as np
import pytest
from d4decoder import validation
from d4decoder.densities import GridDensity
from d4decoder.densities import StateGrid


def test_check_same_grid():
    first = GridDensity.uniform(StateGrid(0.0, 1.0, 10))
    second = GridDensity.uniform(StateGrid(0.0, 1.0, 10))
    validation.check_same_grid(first, second)


def test_check_same_grid_mismatch():
    first = GridDensity.uniform(StateGrid(0.0, 1.0, 10))
    second = GridDensity.uniform(StateGrid(0.0, 2.0, 10))
    with pytest.raises(validation.GridMismatchError, match="different state grids"):
        validation.check_same_grid(first, second)


def test_check_lengths():
    validation.check_lengths(np.zeros(3), [1, 2, 3])
    with pytest.raises(validation.LengthMismatchError, match="observations"):
        validation.check_lengths(np.zeros(3), np.zeros(4), "observations")


def test_check_dimension():
    validation.check_dimension(2, 2, "the state grid")
    with pytest.raises(validation.DimensionMismatchError, match="expected 1, got 2"):
        validation.check_dimension(1, 2, "the state grid")
