"""Versioned JSON checkpoints of trained decoders."""

import hashlib
import json
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any
from d4decoder.densities import StateGrid
from d4decoder.models.catalog import model_from_dict
from d4decoder.state_transition import LinearGaussianTransition
from d4decoder.validation import IncompatibleCheckpointError


CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """A trained decoder: prediction model (or baseline), transition and grid."""

    model: Any
    transition: LinearGaussianTransition
    grid: StateGrid
    config_hash: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        """Model kind: d4, ddd or ssm."""
        return str(self.model.kind)

    @property
    def lag(self) -> int:
        """History lag of the model."""
        return int(self.model.lag)

    @property
    def denominator(self) -> str:
        """Filter denominator the model was trained with."""
        return str(self.metadata.get("denominator", "history"))


def config_hash(config: dict) -> str:
    """Stable sha256 of a configuration dictionary."""
    encoded = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(encoded).hexdigest()


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> None:
    """Write a checkpoint; parameters are stored as 64-bit floats."""
    document = {
        "format_version": CHECKPOINT_VERSION,
        "kind": checkpoint.kind,
        "lag": checkpoint.lag,
        "config_hash": checkpoint.config_hash,
        "grid": checkpoint.grid.to_dict(),
        "transition": checkpoint.transition.to_dict(),
        "model": checkpoint.model.to_dict(),
        "metadata": checkpoint.metadata,
    }
    with path.open(mode="w", encoding="utf-8") as file:
        json.dump(document, file, indent=2)


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint written by `save_checkpoint`.

    Raises:
        IncompatibleCheckpointError: If the file has another format version or
            is not a checkpoint.
    """
    with path.open(mode="r", encoding="utf-8") as file:
        document = json.load(file)

    version = document.get("format_version") if isinstance(document, dict) else None
    if version != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(
            f"'{path}' is not a version {CHECKPOINT_VERSION} checkpoint "
            f"(found format version {version})."
        )
    return Checkpoint(
        model=model_from_dict(document["model"]),
        transition=LinearGaussianTransition.from_dict(document["transition"]),
        grid=StateGrid.from_dict(document["grid"]),
        config_hash=document["config_hash"],
        metadata=document.get("metadata", {}),
    )
