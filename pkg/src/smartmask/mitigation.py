"""Piezoelectric mesh mist generator model.

The actuator converts reservoir liquid into a mist plume while draining the
battery.  Electrical figures follow the prototype hardware (12 V transducer
drawing up to 0.2 A, 2000 mAh pack); liquid throughput and the locally
captured plume fraction are model parameters calibrated by the runner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .env import DomainError, MistPlume

TRANSDUCER_FREQUENCY_KHZ = 110.0
LIQUID_RATE_ML_PER_MIN = 0.5        # at intensity 1.0
SPRAY_CURRENT_MA = 200.0            # actuator draw at intensity 1.0
IDLE_CURRENT_MA = 50.0              # MCU + sensor baseline
BATTERY_CAPACITY_MAH = 2000.0
RESERVOIR_CAPACITY_ML = 30.0

MIST_MEDIAN_DIAMETER_UM = 2.0

# Default plume coupling; the runner overrides these with calibrated values.
DEFAULT_F_LOCAL = 0.05              # fraction of mist entering the sensed box
DEFAULT_R_PUSH = 0.03               # 1/s push-away at full intensity


class ResourceError(RuntimeError):
    """Spray refused: reservoir or battery is empty.  ``kind`` is the
    housekeeping action required ("REFILL" or "RECHARGE")."""

    def __init__(self, kind: str):
        super().__init__(f"{kind} required before spraying")
        self.kind = kind


@dataclass(frozen=True)
class SprayParams:
    intensity: float = 1.0      # scales liquid rate and plume
    duration: float = 15.0      # s
    angle_factor: float = 1.0   # scales push-away only

    def __post_init__(self):
        if not 0.0 <= self.intensity <= 1.0:
            raise DomainError("intensity must be in [0, 1]")
        if not 0.0 <= self.angle_factor <= 1.0:
            raise DomainError("angle_factor must be in [0, 1]")
        if self.duration <= 0:
            raise DomainError("duration must be > 0")


@dataclass(frozen=True)
class ActuatorState:
    spraying: bool = False
    time_remaining: float = 0.0
    liquid: float = RESERVOIR_CAPACITY_ML       # mL
    battery_charge: float = BATTERY_CAPACITY_MAH  # mAh
    params: SprayParams = SprayParams()
    liquid_capacity: float = RESERVOIR_CAPACITY_ML
    battery_capacity: float = BATTERY_CAPACITY_MAH
    exhausted: str | None = None    # set when a spray stops on empty resources
    transducer_frequency: float = TRANSDUCER_FREQUENCY_KHZ

    @property
    def battery_pct(self) -> float:
        return 100.0 * self.battery_charge / self.battery_capacity

    @property
    def liquid_pct(self) -> float:
        return 100.0 * self.liquid / self.liquid_capacity


def start_spray(state: ActuatorState, params: SprayParams) -> ActuatorState:
    """Begin (or restart) spraying; the latest command wins."""
    if state.liquid <= 0:
        raise ResourceError("REFILL")
    if state.battery_charge <= 0:
        raise ResourceError("RECHARGE")
    return replace(state, spraying=True, time_remaining=params.duration,
                   params=params, exhausted=None)


def stop_spray(state: ActuatorState) -> ActuatorState:
    return replace(state, spraying=False, time_remaining=0.0)


def spray_step(state: ActuatorState, dt: float, *,
               f_local: float = DEFAULT_F_LOCAL,
               r_push: float = DEFAULT_R_PUSH,
               ) -> tuple[ActuatorState, MistPlume | None]:
    """Advance the actuator by dt, returning the plume emitted this step."""
    if dt <= 0:
        raise DomainError("dt must be > 0")

    if not state.spraying:
        charge = max(0.0, state.battery_charge - IDLE_CURRENT_MA * dt / 3600.0)
        return replace(state, battery_charge=charge), None

    p = state.params
    liquid_rate = LIQUID_RATE_ML_PER_MIN / 60.0 * p.intensity     # mL/s
    current = IDLE_CURRENT_MA + SPRAY_CURRENT_MA * p.intensity    # mA

    liquid = max(0.0, state.liquid - liquid_rate * dt)
    charge = max(0.0, state.battery_charge - current * dt / 3600.0)
    remaining = state.time_remaining - dt

    droplet_volume_um3 = (math.pi / 6.0) * MIST_MEDIAN_DIAMETER_UM**3
    rate = f_local * (liquid_rate * 1e12) / droplet_volume_um3    # #/s
    plume = MistPlume(droplet_rate_into_box=rate,
                      droplet_diameter=MIST_MEDIAN_DIAMETER_UM,
                      push_away_rate=r_push * p.intensity * p.angle_factor)

    exhausted = state.exhausted
    spraying = True
    if liquid <= 0:
        spraying, exhausted = False, "REFILL"
    elif charge <= 0:
        spraying, exhausted = False, "RECHARGE"
    elif remaining <= 0:
        spraying = False
    new = replace(state, spraying=spraying,
                  time_remaining=max(0.0, remaining) if spraying else 0.0,
                  liquid=liquid, battery_charge=charge, exhausted=exhausted)
    return new, plume
