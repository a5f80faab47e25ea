"""Digital-twin testbed for an active closed-loop smart mask."""

from .env import (
    BinGrid,
    BoxState,
    EmissionEvent,
    EmissionKind,
    EnvState,
    MistPlume,
    PhysicsParams,
    apply_emission,
    coalesced_diameter,
    default_env,
    evaporation_step,
    number_to_mass,
    step,
    stokes_settling_velocity,
)
from .sensors import AmbientReading, PmReading, SensorConfig, SensorLocation, sample_ambient, sample_pm
from .mitigation import ActuatorState, SprayParams, spray_step, start_spray, stop_spray
from .controller import (
    Alert,
    ControllerConfig,
    ControllerState,
    Mode,
    RiskLevel,
    SprayCommand,
    classify_risk,
    compensate_self_interference,
    decide,
    handle_command,
    housekeeping,
)

__version__ = "0.1.0"
