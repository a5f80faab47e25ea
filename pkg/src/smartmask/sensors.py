"""Emulated laser-scattering PM sensor and ambient temperature/humidity sensor.

Two PM sensor instances are used in the testbed: one reading the breathing
box (on-mask) and one reading the ground box.  Each reading applies
independent multiplicative Gaussian noise per size bin; the noise draw is a
pure function of (sensor seed, timestamp), so re-sampling the same state is
reproducible while successive samples get fresh draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .env import EnvState, WATER_DENSITY, number_to_mass


class SensorLocation(str, Enum):
    MASK = "mask"
    GROUND = "ground"


@dataclass(frozen=True)
class SensorConfig:
    location: SensorLocation = SensorLocation.MASK
    sample_period: float = 1.0      # s
    noise_sigma: float = 0.05       # relative std-dev
    rng_seed: int = 0

    def __post_init__(self):
        if self.sample_period <= 0:
            raise ValueError("sample_period must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class PmReading:
    timestamp: int                      # ms since scenario start
    number_concentration: np.ndarray    # #/cm^3 per bin
    mass_concentration: np.ndarray      # ug/m^3 per bin

    def fine_count(self) -> float:
        """Number concentration summed over the 0.3-1.0 um bins."""
        return float(self.number_concentration[0] + self.number_concentration[1])


@dataclass(frozen=True)
class AmbientReading:
    temperature: float      # degC
    relative_humidity: float


def sample_pm(env: EnvState, cfg: SensorConfig) -> PmReading:
    """One PM reading of the configured box at the current sim time."""
    box = env.breathing if cfg.location is SensorLocation.MASK else env.ground
    true_n = box.detectable()
    t_ms = int(round(env.sim_time * 1000.0))

    if cfg.noise_sigma > 0:
        rng = np.random.default_rng((cfg.rng_seed, t_ms))
        noisy = true_n * (1.0 + rng.normal(0.0, cfg.noise_sigma, true_n.shape))
        noisy = np.maximum(noisy, 0.0)
    else:
        noisy = true_n.copy()

    rep = env.grid.representative_diameters
    mass = np.array([number_to_mass(n, d, WATER_DENSITY)
                     for n, d in zip(noisy, rep)])
    return PmReading(timestamp=t_ms, number_concentration=noisy,
                     mass_concentration=mass)


def sample_ambient(env: EnvState) -> AmbientReading:
    """Noise-free temperature/humidity of the breathing box."""
    return AmbientReading(temperature=env.breathing.temperature,
                          relative_humidity=env.breathing.relative_humidity)
