"""Run configuration: config files, user settings and run manifests."""

import json
from dataclasses import dataclass
from dataclasses import field
from dataclasses import fields
from pathlib import Path
from typing import Any
import yaml
from d4decoder import __version__
from d4decoder.densities import StateGrid
from d4decoder.learning.algorithms import TrainConfig
from d4decoder.learning.algorithms import default_grid
from d4decoder.simulation.dataset_protocol import EpisodeDataset
from d4decoder.utils import derive_seed
from d4decoder.utils import file_sha256


COMMANDS = ("simulate", "train", "decode", "evaluate", "compare", "sweep")
FNAME_MANIFEST = "manifest.json"
SCHEDULERS = ("threads", "processes", "synchronous")

# Flag names that differ from the TrainConfig field they set.
ALIASES = {"algo": "algorithm", "lambda": "lam"}
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
GRID_KEYS = ("grid_lower", "grid_upper", "grid_cells")
RUN_KEYS = (
    "kind",
    "n_steps",
    "source",
    "samples",
    "split",
    "folds",
    "holdout",
    "lambdas",
    "param",
    "values",
    "scheduler",
    "dump_densities",
)
KNOWN_KEYS = (*TRAIN_KEYS, *ALIASES, *GRID_KEYS, *RUN_KEYS)


def run_config_loader(config_path: Path) -> dict[str, Any]:
    """Load a flat YAML or JSON run configuration, and do some validation."""
    with config_path.open() as f:
        settings = yaml.safe_load(f)

    if settings is None:
        return {}
    if not isinstance(settings, dict):
        msg = f"The config file '{config_path}' should hold a flat mapping of keys."
        raise ValueError(msg)

    unknown = sorted(set(settings) - set(KNOWN_KEYS))
    if unknown:
        msg = (
            f"Unknown keys in the config file '{config_path}':\n"
            f"    {', '.join(unknown)}."
        )
        raise ValueError(msg)
    return {ALIASES.get(key, key): value for key, value in settings.items()}


def config_loader() -> dict:
    """Load the d4decoder user config and validate the contents."""
    config_path = Path.home() / ".config" / "d4decoder" / "d4decoder_config.yml"

    if not config_path.exists():
        msg = f"No config file was found at '{config_path}'"
        raise FileNotFoundError(msg)

    with config_path.open() as f:
        config: dict = yaml.safe_load(f)

    if not isinstance(config, dict) or "working_directory" not in config.keys():
        msg = "No `working_directory` key found in the config file."
        raise ValueError(msg)

    return config


def resolve_output_dir(output: Path | None, command: str) -> Path:
    """The output directory given on the command line, or the working directory.

    Without `--output` the run writes to `<working_directory>/output/<command>`,
    which is created if needed.
    """
    if output is not None:
        if not output.is_dir():
            msg = f"The output directory '{output}' does not exist."
            raise FileNotFoundError(msg)
        return output
    folder = Path(config_loader()["working_directory"]) / "output" / command
    folder.mkdir(parents=True, exist_ok=True)
    return folder


def merge_settings(
    config_path: Path | None, flags: dict[str, Any]
) -> dict[str, Any]:
    """Combine config file values with command-line flags; flags win.

    Flags left at None do not override the file.
    """
    settings = run_config_loader(config_path) if config_path is not None else {}
    for key, value in flags.items():
        if value is None or value == ():
            continue
        settings[ALIASES.get(key, key)] = value
    return settings


@dataclass
class RunConfig:
    """Resolved settings of one command invocation.

    Attributes:
        command: One of simulate, train, decode, evaluate, compare, sweep.
        settings: Flat settings, config file merged with flags.
        output_dir: Existing directory receiving the artifacts.
        inputs: Input files and dataset folders of the run.
    """

    command: str
    settings: dict[str, Any]
    output_dir: Path
    inputs: list[Path] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Validate the initialized RunConfig class."""
        if self.command not in COMMANDS:
            msg = (
                f"Unknown command '{self.command}'.\n"
                f"Choose from: {', '.join(COMMANDS)}."
            )
            raise ValueError(msg)
        unknown = sorted(set(self.settings) - {ALIASES.get(k, k) for k in KNOWN_KEYS})
        if unknown:
            msg = f"Unknown settings: {', '.join(unknown)}."
            raise ValueError(msg)
        for path in self.inputs:
            if not path.exists():
                msg = f"The input '{path}' does not exist."
                raise FileNotFoundError(msg)
        if not self.output_dir.is_dir():
            msg = f"The output directory '{self.output_dir}' does not exist."
            raise FileNotFoundError(msg)
        if self.settings.get("scheduler", "threads") not in SCHEDULERS:
            msg = f"Unknown dask scheduler.\nChoose from: {', '.join(SCHEDULERS)}."
            raise ValueError(msg)

    @property
    def seed(self) -> int:
        """Root seed of the run."""
        return int(self.settings.get("seed", 0))

    def get(self, key: str, default: Any = None) -> Any:
        """A run setting, or `default` when it was not given."""
        return self.settings.get(key, default)

    def train_config(self, progress: bool = True) -> TrainConfig:
        """Training settings of the run."""
        values = {key: self.settings[key] for key in TRAIN_KEYS if key in self.settings}
        values.setdefault("progress", progress)
        return TrainConfig(**values)

    def grid(self, dataset: EpisodeDataset) -> StateGrid:
        """State grid of `dataset` with the grid overrides of the run."""
        lower, upper, cells = (self.settings.get(key) for key in GRID_KEYS)
        return default_grid(
            dataset,
            None if lower is None else tuple(lower),
            None if upper is None else tuple(upper),
            None if cells is None else tuple(cells),
        )

    def manifest(self, seeds: dict[str, int] | None = None) -> dict[str, Any]:
        """Everything needed to reproduce the outputs of the run."""
        hashes = {}
        for path in self.inputs:
            files = sorted(p for p in path.rglob("*") if p.is_file())
            for file in files if path.is_dir() else [path]:
                hashes[str(file)] = file_sha256(file)
        return {
            "command": self.command,
            "version": __version__,
            "config": self.settings,
            "seeds": {
                "root": self.seed,
                "derivation": "SeedSequence([root, crc32(tag), index]), PCG64",
                **(seeds or {}),
            },
            "inputs": hashes,
        }

    def write_manifest(self, seeds: dict[str, int] | None = None) -> Path:
        """Write `manifest.json` to the output directory."""
        path = self.output_dir / FNAME_MANIFEST
        with path.open(mode="w", encoding="utf-8") as file:
            json.dump(self.manifest(seeds), file, indent=2, default=str)
        return path


def stream_seeds(root: int, tags: list[str]) -> dict[str, int]:
    """Seeds of the named random streams (index 0) of a run, for the manifest."""
    return {tag: derive_seed(root, tag) for tag in tags}
