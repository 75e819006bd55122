"""Twenty-channel benchmark with nonlinear, lagged observations of an AR(1) state."""

from dataclasses import dataclass
from typing import Any
import numpy as np
from scipy import linalg
from d4decoder.simulation.dataset_protocol import EpisodeDataset
from d4decoder.utils import derive_seed
from d4decoder.utils import make_rng
from d4decoder.validation import SpecInvalidError


NONLINEARITIES = {
    "tanh": np.tanh,
    "cosine": np.cos,
    "sine": np.sin,
    "cubic": lambda value: value**3,
}
DEFAULT_LAG_WEIGHTS = (1.0, 0.8, 0.6, 0.4, 0.2)


@dataclass(frozen=True)
class ChannelSpec:
    """One observation channel: gain * f(sum_j weight_j * x_{k-j} + shift)."""

    nonlinearity: str = "tanh"
    lag: int = 4
    weights: tuple[float, ...] = DEFAULT_LAG_WEIGHTS
    gain: float = 1.0
    shift: float = 0.0

    def __post_init__(self) -> None:
        """Validate the initialized ChannelSpec class."""
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.nonlinearity not in NONLINEARITIES:
            raise SpecInvalidError(
                f"Unknown nonlinearity '{self.nonlinearity}'.\n"
                f"Choose from: {', '.join(NONLINEARITIES)}."
            )
        if self.lag < 0 or len(self.weights) != self.lag + 1:
            raise SpecInvalidError(
                f"A channel with lag {self.lag} needs {self.lag + 1} weights, "
                f"got {len(self.weights)}."
            )

    def response(self, states: np.ndarray, n_steps: int) -> np.ndarray:
        """Noiseless output for the last `n_steps` entries of a padded trajectory."""
        offset = len(states) - n_steps
        argument = np.full(n_steps, self.shift)
        for j, weight in enumerate(self.weights):
            argument += weight * states[offset - j : offset - j + n_steps]
        return self.gain * NONLINEARITIES[self.nonlinearity](argument)

    def to_dict(self) -> dict[str, Any]:
        """Serialize the channel."""
        return {
            "nonlinearity": self.nonlinearity,
            "lag": self.lag,
            "weights": list(self.weights),
            "gain": self.gain,
            "shift": self.shift,
        }


@dataclass
class SimSpec:
    """Specification of the benchmark.

    The observation noise covariance is noise_scale * noise_correlation**|i-j|.
    Channels default to: channel 1 the tanh of the declining lag sum, the
    others drawn from the seed (random nonlinearity, lag, gain and shift).
    """

    n_steps: int = 1000
    n_channels: int = 20
    a: float = 0.9
    b: float = 0.0
    sigma_x: float = 0.1
    x0: float = 0.0
    max_lag: int = 4
    noise_scale: float = 0.04
    noise_correlation: float = 0.7
    channels: tuple[ChannelSpec, ...] | None = None

    def __post_init__(self) -> None:
        """Validate the initialized SimSpec class."""
        if self.n_steps < 1 or self.n_channels < 1:
            raise SpecInvalidError("The length and channel count must be positive.")
        if self.max_lag < 0:
            raise SpecInvalidError(
                f"The maximum lag can not be negative: {self.max_lag}."
            )
        if self.sigma_x < 0:
            raise SpecInvalidError(f"sigma_x can not be negative: {self.sigma_x}.")
        if self.noise_scale <= 0 or not -1 < self.noise_correlation < 1:
            raise SpecInvalidError(
                "The observation noise needs noise_scale > 0 and "
                "-1 < noise_correlation < 1 to be positive-definite."
            )
        if self.channels is not None:
            self.channels = tuple(
                c if isinstance(c, ChannelSpec) else ChannelSpec(**c)
                for c in self.channels
            )
            if len(self.channels) != self.n_channels:
                raise SpecInvalidError(
                    f"Got {len(self.channels)} channel specs for "
                    f"{self.n_channels} channels."
                )
            if any(c.lag > self.max_lag for c in self.channels):
                raise SpecInvalidError(
                    f"Channel lags can not exceed the maximum lag {self.max_lag}."
                )

    @property
    def noise_covariance(self) -> np.ndarray:
        """Toeplitz observation noise covariance."""
        return self.noise_scale * linalg.toeplitz(
            self.noise_correlation ** np.arange(self.n_channels)
        )

    def draw_channels(self, rng: np.random.Generator) -> tuple[ChannelSpec, ...]:
        """Channel specs: the given ones, or channel 1 fixed and the rest drawn."""
        if self.channels is not None:
            return self.channels
        first_lag = min(self.max_lag, len(DEFAULT_LAG_WEIGHTS) - 1)
        weights = DEFAULT_LAG_WEIGHTS[: first_lag + 1]
        channels = [ChannelSpec("tanh", first_lag, weights)]
        tags = list(NONLINEARITIES)
        for _ in range(self.n_channels - 1):
            lag = int(rng.integers(0, self.max_lag + 1))
            weights = np.resize(DEFAULT_LAG_WEIGHTS, lag + 1)
            channels.append(
                ChannelSpec(
                    tags[int(rng.integers(len(tags)))],
                    lag,
                    tuple(weights),
                    gain=float(rng.uniform(0.5, 1.5)),
                    shift=float(rng.uniform(-0.5, 0.5)),
                )
            )
        return tuple(channels)

    def to_dict(
        self, channels: tuple[ChannelSpec, ...] | None = None
    ) -> dict[str, Any]:
        """Serialize the spec, with the channels actually used."""
        channels = channels if channels is not None else self.channels
        return {
            "n_steps": self.n_steps,
            "n_channels": self.n_channels,
            "a": self.a,
            "b": self.b,
            "sigma_x": self.sigma_x,
            "x0": self.x0,
            "max_lag": self.max_lag,
            "noise_scale": self.noise_scale,
            "noise_correlation": self.noise_correlation,
            "channels": None if channels is None else [c.to_dict() for c in channels],
        }


def simulate_states(
    spec: SimSpec, n_total: int, rng: np.random.Generator
) -> np.ndarray:
    """AR(1) trajectory z_0 = x0, z_j = a z_{j-1} + b + w_j, of length n_total."""
    noise = rng.standard_normal(n_total) * spec.sigma_x
    states = np.empty(n_total)
    previous = spec.x0
    for j in range(n_total):
        previous = spec.a * previous + spec.b + noise[j]
        states[j] = previous
    return states


def generate_sim(spec: SimSpec, seed: int) -> EpisodeDataset:
    """Draw an episode of the benchmark.

    The state runs `max_lag` prehistory steps before the K returned steps, so
    every lag of every channel is defined from the first step on.

    Raises:
        SpecInvalidError: If the noise covariance is not positive-definite.
    """
    channels = spec.draw_channels(make_rng(derive_seed(seed, "sim20-channels")))
    padded = simulate_states(
        spec, spec.n_steps + spec.max_lag, make_rng(derive_seed(seed, "sim20-states"))
    )
    try:
        cholesky = linalg.cholesky(spec.noise_covariance, lower=True)
    except linalg.LinAlgError as err:
        msg = "The observation noise covariance is not positive-definite."
        raise SpecInvalidError(msg) from err

    noise_rng = make_rng(derive_seed(seed, "sim20-noise"))
    noise = noise_rng.standard_normal((spec.n_steps, spec.n_channels)) @ cholesky.T
    clean = np.column_stack([c.response(padded, spec.n_steps) for c in channels])
    return EpisodeDataset(
        clean + noise,
        padded[spec.max_lag :, None],
        name="sim20",
        properties={
            "generator": "sim20",
            "seed": seed,
            "state_dim": 1,
            "rng": "numpy PCG64",
            "settings": spec.to_dict(channels),
        },
    )


class Sim20Generator:
    """Generator of the twenty-channel benchmark."""

    name = "sim20"

    def __init__(self, spec: SimSpec | None = None) -> None:
        """Use the default settings unless others are given."""
        self.spec = spec or SimSpec()

    def generate(self, seed: int) -> EpisodeDataset:
        """Draw an episode."""
        return generate_sim(self.spec, seed)
