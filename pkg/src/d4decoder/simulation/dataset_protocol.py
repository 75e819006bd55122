"""Outline of the episode dataset and the generator protocol."""

import json
import shutil
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any
from typing import Protocol
import numpy as np
import pandas as pd
from d4decoder.models.model_protocol import HistoryWindow
from d4decoder.validation import DegenerateInputError
from d4decoder.validation import InsufficientDataError
from d4decoder.validation import check_lengths


FNAME_PROPERTIES = "properties.json"
FNAME_OBSERVATIONS = "observations.csv"
FNAME_STATES = "states.csv"
FLOAT_FORMAT = "%.17g"
STATE_COLUMNS = ("x", "y")


@dataclass
class EpisodeDataset:
    """Observation sequence s_{1:K} with an optional state trajectory x_{1:K}.

    Attributes:
        observations: Matrix of shape (K, N).
        states: Matrix of shape (K, ndim), or None when the states are latent.
        name: Name of the dataset.
        properties: Provenance of the dataset (generator, spec, seed, bin width).
    """

    observations: np.ndarray
    states: np.ndarray | None = None
    name: str = "episode"
    properties: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Validate the initialized EpisodeDataset class."""
        self.observations = np.asarray(self.observations, dtype=float)
        if self.observations.ndim == 1:
            self.observations = self.observations[:, None]
        if self.observations.ndim != 2 or len(self.observations) == 0:
            raise ValueError("Observations must be a non-empty (K, N) matrix.")
        if not np.all(np.isfinite(self.observations)):
            raise DegenerateInputError("Observations contain non-finite values.")
        if self.states is not None:
            self.states = np.asarray(self.states, dtype=float).reshape(
                len(self.states), -1
            )
            check_lengths(self.observations, self.states, "observations and states")
            if self.states.shape[1] not in (1, 2):
                raise ValueError("Only 1-D and 2-D states are supported.")

    @property
    def n_steps(self) -> int:
        """Number of time steps K."""
        return len(self.observations)

    @property
    def n_channels(self) -> int:
        """Number of observation channels N."""
        return self.observations.shape[1]

    @property
    def has_states(self) -> bool:
        """Whether the state trajectory is known."""
        return self.states is not None

    @property
    def state_dim(self) -> int:
        """Dimension of the state, taken from the properties when states are latent."""
        if self.states is not None:
            return self.states.shape[1]
        return int(self.properties.get("state_dim", 1))

    @property
    def bin_width(self) -> float | None:
        """Width of an observation bin in seconds, if known."""
        value = self.properties.get("bin_width")
        return None if value is None else float(value)

    def history_window(self, k: int, lag: int) -> HistoryWindow:
        """History window h_k of time index k (0-based)."""
        return HistoryWindow.at(self.observations, k, lag)

    def block(self, start: int, stop: int, tag: str = "") -> "EpisodeDataset":
        """Contiguous time block [start, stop) of the episode."""
        if not 0 <= start < stop <= self.n_steps:
            raise InsufficientDataError(
                f"Block [{start}, {stop}) does not fit in {self.n_steps} steps."
            )
        return EpisodeDataset(
            self.observations[start:stop],
            None if self.states is None else self.states[start:stop],
            name=f"{self.name}{tag}",
            properties={**self.properties, "block": [start, stop]},
        )

    def without_states(self) -> "EpisodeDataset":
        """Copy of the episode with the states hidden."""
        return EpisodeDataset(
            self.observations,
            None,
            self.name,
            {**self.properties, "state_dim": self.state_dim},
        )


def concatenate(datasets: list[EpisodeDataset], name: str) -> EpisodeDataset:
    """Join episodes in time order."""
    states = [d.states for d in datasets if d.states is not None]
    return EpisodeDataset(
        np.vstack([d.observations for d in datasets]),
        np.vstack(states) if len(states) == len(datasets) else None,
        name=name,
        properties=dict(datasets[0].properties),
    )


class Generator(Protocol):
    """Synthetic dataset generator.

    Methods:
        generate: Draw an episode from the generator.
    """

    name: str

    def generate(self, seed: int) -> EpisodeDataset:
        """Draw an episode.

        Args:
            seed: Seed of the random stream used by the generator.

        Returns:
            The generated episode, with its states and properties.
        """
        ...


def write_dataset(dataset: EpisodeDataset, dataset_folder: Path) -> list[Path]:
    """Write observation and state CSVs plus the properties sidecar.

    Returns:
        Paths of the written files.
    """
    steps = np.arange(1, dataset.n_steps + 1)
    observations = pd.DataFrame(
        dataset.observations,
        columns=[f"s{n + 1}" for n in range(dataset.n_channels)],
    )
    observations.insert(0, "k", steps)
    written = [dataset_folder / FNAME_OBSERVATIONS]
    observations.to_csv(written[0], index=False, float_format=FLOAT_FORMAT)

    if dataset.states is not None:
        states = pd.DataFrame(
            dataset.states, columns=list(STATE_COLUMNS[: dataset.state_dim])
        )
        states.insert(0, "k", steps)
        written.append(dataset_folder / FNAME_STATES)
        states.to_csv(written[-1], index=False, float_format=FLOAT_FORMAT)

    write_properties_file(
        dataset_folder, {"name": dataset.name, **dataset.properties}
    )
    written.append(dataset_folder / FNAME_PROPERTIES)
    return written


def read_dataset(dataset_folder: Path) -> EpisodeDataset:
    """Load an episode written by `write_dataset`.

    Raises:
        FileNotFoundError: If the folder holds no observations file.
    """
    observations_path = dataset_folder / FNAME_OBSERVATIONS
    if not observations_path.exists():
        msg = f"No observations file was found at '{observations_path}'"
        raise FileNotFoundError(msg)
    observations = pd.read_csv(observations_path).drop(columns="k")

    states = None
    if (dataset_folder / FNAME_STATES).exists():
        states = pd.read_csv(dataset_folder / FNAME_STATES).drop(columns="k")

    properties: dict[str, Any] = {}
    if (dataset_folder / FNAME_PROPERTIES).exists():
        properties = read_properties_file(dataset_folder)
    name = str(properties.pop("name", dataset_folder.name))
    return EpisodeDataset(
        observations.to_numpy(dtype=float),
        None if states is None else states.to_numpy(dtype=float),
        name=name,
        properties=properties,
    )


def write_properties_file(dataset_folder: Path, properties: dict[str, Any]) -> None:
    """Write the (serialized) dataset properties to a json file.

    Args:
        dataset_folder: Path to the dataset folder.
        properties: Generator name, specification, seed and other provenance.
    """
    json_object = json.dumps(properties, indent=4)

    with (dataset_folder / FNAME_PROPERTIES).open(mode="w", encoding="utf-8") as file:
        file.write(json_object)


def read_properties_file(dataset_folder: Path) -> dict[str, Any]:
    """Load the dataset properties from the json file.

    Args:
        dataset_folder: Path to the dataset folder.

    Returns:
        The properties dictionary.
    """
    with (dataset_folder / FNAME_PROPERTIES).open(mode="r", encoding="utf-8") as file:
        properties: dict[str, Any] = json.load(file)
    return properties


def copy_properties_file(
    source_folder: Path,
    target_folder: Path,
) -> None:
    """Copy the properties file from one folder to another.

    To be used when outputs derived from a dataset should carry its provenance.

    Args:
        source_folder: Source folder containing the properties file.
        target_folder: Destination folder where the file should be copied to.
    """
    shutil.copy(source_folder / FNAME_PROPERTIES, target_folder / FNAME_PROPERTIES)
