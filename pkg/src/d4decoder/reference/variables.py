"""Variable reference and unit registry for d4decoder."""

from dataclasses import dataclass
from typing import Any
from pint import DimensionalityError
from pint import UnitRegistry


@dataclass
class Variable:
    """d4decoder output variable."""

    name: str
    unit: Any  # pint unit
    desc: str | None = ""


def unit_registration() -> UnitRegistry:
    """Create unit registration for all custom units."""
    unit_registry = UnitRegistry()
    unit_registry.define("state_unit = [state]")
    return unit_registry


unit_registry = unit_registration()


VARIABLE_REFERENCE = (
    Variable("position", unit_registry.meter, desc="Position on the track."),
    Variable("state", unit_registry.state_unit, desc="Latent state of a benchmark."),
    Variable("speed", unit_registry.meter / unit_registry.second),
    Variable("bin_width", unit_registry.second),
    Variable("session_length", unit_registry.second),
)

VARIABLE_REFERENCE_LOOKUP = {var.name: var for var in VARIABLE_REFERENCE}


def to_magnitude(value: Any, unit: Any) -> float:
    """Convert a quantity ("330 s", "10 cm", 0.2) to a float in `unit`.

    Plain numbers are taken to be in `unit` already. The unit is a string or a
    pint unit, such as the unit of a reference variable.

    Raises:
        ValueError: If the quantity has incompatible dimensions.
    """
    if isinstance(value, int | float):
        return float(value)
    quantity = unit_registry.Quantity(value)
    try:
        return float(quantity.to(unit).magnitude)
    except DimensionalityError as err:
        msg = f"Can not convert '{value}' to {unit}."
        raise ValueError(msg) from err
