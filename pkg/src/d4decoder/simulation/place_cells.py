"""Synthetic place-cell ensemble recorded on a W-shaped track."""

from dataclasses import dataclass
from typing import Any
import numpy as np
from d4decoder.reference.variables import VARIABLE_REFERENCE_LOOKUP
from d4decoder.reference.variables import to_magnitude
from d4decoder.simulation.dataset_protocol import EpisodeDataset
from d4decoder.utils import derive_seed
from d4decoder.utils import make_rng
from d4decoder.validation import SpecInvalidError


QUANTITIES = {
    "session_length": "session_length",
    "bin_width": "bin_width",
    "arm_length": "position",
    "base_length": "position",
    "corridor_width": "position",
    "mean_speed": "speed",
}


@dataclass
class WTrack:
    """Three vertical arms at x = 0, base / 2 and base joined at y = 0 by the base."""

    arm_length: float = 1.0
    base_length: float = 1.0
    corridor_width: float = 0.1

    def __post_init__(self) -> None:
        """Validate the initialized WTrack class."""
        if min(self.arm_length, self.base_length, self.corridor_width) <= 0:
            raise SpecInvalidError("Track dimensions must be positive.")

    @property
    def lap(self) -> np.ndarray:
        """Waypoints of one lap: center, left, center, right and back to center."""
        left, center, right = 0.0, self.base_length / 2, self.base_length
        top = self.arm_length
        return np.array(
            [
                (center, top), (center, 0.0), (left, 0.0), (left, top),
                (left, 0.0), (center, 0.0), (center, top), (center, 0.0),
                (right, 0.0), (right, top), (right, 0.0), (center, 0.0),
                (center, top),
            ]
        )

    @property
    def lap_length(self) -> float:
        """Length of one lap along the track."""
        return float(np.linalg.norm(np.diff(self.lap, axis=0), axis=1).sum())

    def point_at(self, distance: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Track points at distances along the (repeated) lap, with segment normals."""
        waypoints = self.lap
        segments = np.diff(waypoints, axis=0)
        lengths = np.linalg.norm(segments, axis=1)
        ends = np.cumsum(lengths)
        along = np.mod(distance, self.lap_length)
        index = np.minimum(np.searchsorted(ends, along, side="right"), len(lengths) - 1)
        start = ends[index] - lengths[index]
        direction = segments[index] / lengths[index][:, None]
        points = waypoints[index] + direction * (along - start)[:, None]
        normals = np.column_stack([-direction[:, 1], direction[:, 0]])
        return points, normals

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Whether points lie inside the corridors."""
        half = self.corridor_width / 2
        x, y = points[:, 0], points[:, 1]
        in_base = (np.abs(y) <= half) & (x >= -half) & (x <= self.base_length + half)
        in_arm = np.zeros(len(points), dtype=bool)
        for arm_x in (0.0, self.base_length / 2, self.base_length):
            in_arm |= (np.abs(x - arm_x) <= half) & (y >= -half) & (
                y <= self.arm_length + half
            )
        return in_base | in_arm


@dataclass
class PlaceCellSpec:
    """Specification of the place-cell generator.

    Durations and lengths accept pint quantity strings ("330 s", "10 cm").
    Cell centers, widths (m) and peak rates (Hz) are drawn from the seed
    unless given explicitly.
    """

    n_cells: int = 62
    session_length: Any = "330 s"
    bin_width: Any = "200 ms"
    arm_length: Any = "1 m"
    base_length: Any = "1 m"
    corridor_width: Any = "10 cm"
    mean_speed: Any = "0.25 m/s"
    speed_correlation: float = 0.95
    field_width_range: tuple[float, float] = (0.05, 0.12)
    peak_rate_range: tuple[float, float] = (5.0, 20.0)
    centers: np.ndarray | None = None
    widths: np.ndarray | None = None
    peak_rates: np.ndarray | None = None

    def __post_init__(self) -> None:
        """Convert quantities to SI floats and validate."""
        try:
            for name, variable in QUANTITIES.items():
                unit = VARIABLE_REFERENCE_LOOKUP[variable].unit
                setattr(self, name, to_magnitude(getattr(self, name), unit))
        except ValueError as err:
            raise SpecInvalidError(str(err)) from err

        if self.n_cells < 1:
            raise SpecInvalidError("At least one place cell is needed.")
        if self.bin_width <= 0 or self.session_length < self.bin_width:
            raise SpecInvalidError(
                "The bin width must be positive and shorter than the session."
            )
        if self.mean_speed <= 0 or not 0 <= self.speed_correlation < 1:
            raise SpecInvalidError(
                "The mean speed must be positive and its correlation in [0, 1)."
            )
        if min(self.field_width_range) <= 0 or min(self.peak_rate_range) <= 0:
            raise SpecInvalidError("Field widths and peak rates must be positive.")
        self.track = WTrack(self.arm_length, self.base_length, self.corridor_width)

        for name in ("centers", "widths", "peak_rates"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=float)
                if len(value) != self.n_cells:
                    raise SpecInvalidError(
                        f"'{name}' must have one entry per cell ({self.n_cells})."
                    )
                setattr(self, name, value)
        if self.peak_rates is not None and np.any(self.peak_rates <= 0):
            raise SpecInvalidError("Peak rates must be positive.")
        if self.widths is not None and np.any(self.widths <= 0):
            raise SpecInvalidError("Field widths must be positive.")
        if self.centers is not None and not np.all(
            self.track.contains(self.centers.reshape(-1, 2))
        ):
            raise SpecInvalidError("Place-field centers must lie on the track.")

    @property
    def n_steps(self) -> int:
        """Number of time bins."""
        return int(round(self.session_length / self.bin_width))

    def to_dict(self) -> dict[str, Any]:
        """Serialize the settings in SI units."""
        return {
            "n_cells": self.n_cells,
            "session_length_s": self.session_length,
            "bin_width_s": self.bin_width,
            "arm_length_m": self.arm_length,
            "base_length_m": self.base_length,
            "corridor_width_m": self.corridor_width,
            "mean_speed_m_per_s": self.mean_speed,
            "speed_correlation": self.speed_correlation,
        }


def simulate_trajectory(spec: PlaceCellSpec, rng: np.random.Generator) -> np.ndarray:
    """Laps around the track with AR(1) speed and lateral jitter in the corridor."""
    n_steps = spec.n_steps
    rho = spec.speed_correlation
    innovations = rng.standard_normal(n_steps) * spec.mean_speed * 0.3
    speed = np.empty(n_steps)
    previous = spec.mean_speed
    for k in range(n_steps):
        previous = spec.mean_speed + rho * (previous - spec.mean_speed) + innovations[k]
        previous = max(previous, 0.1 * spec.mean_speed)
        speed[k] = previous
    distance = np.cumsum(speed * spec.bin_width) - speed[0] * spec.bin_width
    points, normals = spec.track.point_at(distance)

    half = spec.corridor_width / 2
    lateral_noise = rng.standard_normal(n_steps) * half * 0.3
    lateral = np.empty(n_steps)
    offset = 0.0
    for k in range(n_steps):
        offset = float(np.clip(0.9 * offset + lateral_noise[k], -half, half))
        lateral[k] = offset
    return points + normals * lateral[:, None]


def tuning_rates(
    positions: np.ndarray, centers: np.ndarray, widths: np.ndarray, peaks: np.ndarray
) -> np.ndarray:
    """Gaussian place-field rates (Hz) of every cell at every position, (K, n_cells)."""
    squared = ((positions[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return peaks[None, :] * np.exp(-0.5 * squared / widths[None, :] ** 2)


def generate_place_cells(spec: PlaceCellSpec, seed: int) -> EpisodeDataset:
    """Draw a session: trajectory on the W-track and Poisson spike counts per bin."""
    field_rng = make_rng(derive_seed(seed, "placecells-fields"))
    if spec.centers is None:
        along = field_rng.uniform(0, spec.track.lap_length, spec.n_cells)
        centers, _ = spec.track.point_at(along)
    else:
        centers = spec.centers.reshape(-1, 2)
    widths = (
        spec.widths
        if spec.widths is not None
        else field_rng.uniform(*spec.field_width_range, spec.n_cells)
    )
    peaks = (
        spec.peak_rates
        if spec.peak_rates is not None
        else field_rng.uniform(*spec.peak_rate_range, spec.n_cells)
    )

    positions = simulate_trajectory(
        spec, make_rng(derive_seed(seed, "placecells-trajectory"))
    )
    rates = tuning_rates(positions, centers, widths, peaks)
    spike_rng = make_rng(derive_seed(seed, "placecells-spikes"))
    counts = spike_rng.poisson(rates * spec.bin_width)
    return EpisodeDataset(
        counts.astype(float),
        positions,
        name="placecells",
        properties={
            "generator": "placecells",
            "seed": seed,
            "state_dim": 2,
            "bin_width": spec.bin_width,
            "rng": "numpy PCG64",
            "settings": {
                **spec.to_dict(),
                "centers": centers.tolist(),
                "widths": np.asarray(widths).tolist(),
                "peak_rates": np.asarray(peaks).tolist(),
            },
        },
    )


class PlaceCellGenerator:
    """Generator of synthetic place-cell sessions."""

    name = "placecells"

    def __init__(self, spec: PlaceCellSpec | None = None) -> None:
        """Use the default settings unless others are given."""
        self.spec = spec or PlaceCellSpec()

    def generate(self, seed: int) -> EpisodeDataset:
        """Draw a session."""
        return generate_place_cells(self.spec, seed)
