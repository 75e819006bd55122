"""Catalog of dataset generators."""

from d4decoder.simulation import dataset_protocol
from d4decoder.simulation.place_cells import PlaceCellGenerator
from d4decoder.simulation.sim20 import Sim20Generator


# This object tracks which generators are available.
GENERATORS: dict[str, type[dataset_protocol.Generator]] = {
    # All lowercase key.
    "sim20": Sim20Generator,
    "placecells": PlaceCellGenerator,
}
