"""Exceptions and checks for user input and numerical validation."""

from collections.abc import Sized
from typing import Any


class TruncationError(Exception):
    """Error raised when too much probability mass lies outside the state grid."""

    ...


class GridMismatchError(Exception):
    """Error raised when two densities do not live on the same state grid."""

    ...


class DegenerateInputError(Exception):
    """Error raised when the input data carries no usable variation."""

    ...


class DegenerateInputWarning(UserWarning):
    """Warning issued when an estimate had to be floored to stay valid."""

    ...


class DegenerateDensityError(Exception):
    """Error raised when an unnormalized density has (numerically) no mass."""

    ...


class DimensionMismatchError(Exception):
    """Error raised when an input does not match the dimensions of a model."""

    ...


class MissingSamplesError(Exception):
    """Error raised when the Q function needs trajectories that are not there."""

    ...


class SpecInvalidError(Exception):
    """Error raised when a simulation specification is not valid."""

    ...


class LengthMismatchError(Exception):
    """Error raised when two sequences that should be aligned are not."""

    ...


class InsufficientDataError(Exception):
    """Error raised when there is not enough data for the requested split."""

    ...


class IncompatibleCheckpointError(Exception):
    """Error raised when checkpoints or datasets can not be used together."""

    ...


def check_same_grid(first: Any, second: Any) -> None:
    """Check that two grid densities share the same state grid.

    Args:
        first: A GridDensity.
        second: Another GridDensity.

    Raises:
        GridMismatchError: If the grids differ.
    """
    if first.grid != second.grid:
        raise GridMismatchError(
            "The densities are defined on different state grids:"
            f"\n    first: {first.grid}"
            f"\n    second: {second.grid}"
        )


def check_lengths(first: Sized, second: Sized, what: str = "sequences") -> None:
    """Check that two sequences have the same length.

    Raises:
        LengthMismatchError: If the lengths differ.
    """
    if len(first) != len(second):
        raise LengthMismatchError(
            f"The {what} have different lengths: {len(first)} and {len(second)}."
        )


def check_dimension(expected: int, received: int, what: str) -> None:
    """Check that an input has the dimension a model was configured for.

    Raises:
        DimensionMismatchError: If the dimensions differ.
    """
    if expected != received:
        raise DimensionMismatchError(
            f"Dimension mismatch for {what}: expected {expected}, got {received}."
        )
