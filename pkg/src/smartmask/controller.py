"""Firmware-grade closed-loop policy.

Classifies air-quality risk from the mask PM sensor, subtracts the mask's own
mist signature from readings, decides when to spray in automatic mode,
executes operator commands in manual mode, and latches housekeeping alerts
(recharge / refill / decontaminate).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from . import protocol
from .mitigation import ActuatorState, SprayParams
from .sensors import PmReading


class RiskLevel(IntEnum):
    LOW = 0
    MODERATE = 1
    HIGH = 2
    VERY_HIGH = 3


class Mode(IntEnum):
    AUTOMATIC = protocol.MODE_AUTOMATIC
    MANUAL = protocol.MODE_MANUAL


class Alert(IntEnum):
    RECHARGE = protocol.ALERT_RECHARGE
    REFILL = protocol.ALERT_REFILL
    DECONTAMINATE = protocol.ALERT_DECONTAMINATE


@dataclass(frozen=True)
class SprayCommand:
    duration: float
    intensity: float


# Sentinel action from handle_command meaning "cancel the running spray".
STOP_SPRAY = object()


@dataclass(frozen=True)
class ControllerConfig:
    # thresholds on the 0.3-1.0 um number sum, #/cm^3
    risk_thresholds: tuple[float, float, float] = (100.0, 300.0, 1000.0)
    spray_duration: float = 15.0
    spray_intensity_by_risk: dict = field(default_factory=lambda: {
        RiskLevel.HIGH: 0.7, RiskLevel.VERY_HIGH: 1.0})
    cooldown: float = 10.0
    battery_alert: float = 15.0         # %
    liquid_alert: float = 10.0          # %
    decontamination_threshold: float = 1e5  # (#/cm^3) * s
    self_mist_signature: np.ndarray = field(
        default_factory=lambda: np.zeros(5))

    def __post_init__(self):
        t = self.risk_thresholds
        if not (t[0] < t[1] < t[2]):
            raise ValueError("risk thresholds must be strictly ascending")
        for v in (self.battery_alert, self.liquid_alert):
            if not 0 < v < 100:
                raise ValueError("alert levels must be in (0, 100)")
        if self.cooldown < 0:
            raise ValueError("cooldown must be >= 0")
        object.__setattr__(self, "self_mist_signature",
                           np.asarray(self.self_mist_signature, dtype=float))


@dataclass(frozen=True)
class ControllerState:
    mode: Mode = Mode.AUTOMATIC
    cooldown_until: float = 0.0
    cumulative_exposure: float = 0.0    # (#/cm^3) * s of 0.3-1.0 um exposure
    latched_alerts: frozenset = frozenset()
    spray_active_intensity: float = 0.0


def classify_risk(reading: PmReading, cfg: ControllerConfig) -> RiskLevel:
    """Risk category from the 0.3-1.0 um number concentration sum."""
    n = reading.fine_count()
    t1, t2, t3 = cfg.risk_thresholds
    if n < t1:
        return RiskLevel.LOW
    if n < t2:
        return RiskLevel.MODERATE
    if n < t3:
        return RiskLevel.HIGH
    return RiskLevel.VERY_HIGH


def compensate_self_interference(reading: PmReading, state: ControllerState,
                                 cfg: ControllerConfig) -> PmReading:
    """Subtract the mask's own expected mist contribution while spraying."""
    if state.spray_active_intensity <= 0:
        return reading
    expected = state.spray_active_intensity * cfg.self_mist_signature
    number = np.maximum(reading.number_concentration - expected, 0.0)
    scale = np.divide(number, reading.number_concentration,
                      out=np.ones_like(number),
                      where=reading.number_concentration > 0)
    return PmReading(timestamp=reading.timestamp,
                     number_concentration=number,
                     mass_concentration=reading.mass_concentration * scale)


def decide(state: ControllerState, risk: RiskLevel, actuator: ActuatorState,
           cfg: ControllerConfig, now: float
           ) -> tuple[ControllerState, SprayCommand | None]:
    """Autonomous spray decision; only ever fires in automatic mode."""
    if (state.mode is not Mode.AUTOMATIC or risk < RiskLevel.HIGH
            or now < state.cooldown_until or actuator.spraying
            or actuator.liquid <= 0 or actuator.battery_charge <= 0):
        return state, None
    intensity = cfg.spray_intensity_by_risk.get(risk, 1.0)
    cmd = SprayCommand(duration=cfg.spray_duration, intensity=intensity)
    new = replace(state,
                  cooldown_until=now + cfg.spray_duration + cfg.cooldown)
    return new, cmd


def housekeeping(state: ControllerState, actuator: ActuatorState,
                 compensated: PmReading, dt: float, cfg: ControllerConfig
                 ) -> tuple[ControllerState, list[Alert]]:
    """Integrate exposure and latch threshold-crossing alerts."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    exposure = state.cumulative_exposure + compensated.fine_count() * dt

    fired: list[Alert] = []
    latched = set(state.latched_alerts)
    checks = (
        (Alert.RECHARGE, actuator.battery_pct < cfg.battery_alert),
        (Alert.REFILL, actuator.liquid_pct < cfg.liquid_alert),
        (Alert.DECONTAMINATE, exposure > cfg.decontamination_threshold),
    )
    for alert, condition in checks:
        if condition and alert not in latched:
            latched.add(alert)
            fired.append(alert)

    new = replace(state, cumulative_exposure=exposure,
                  latched_alerts=frozenset(latched))
    return new, fired


def acknowledge_alert(state: ControllerState, alert: Alert) -> ControllerState:
    return replace(state, latched_alerts=state.latched_alerts - {alert})


def handle_command(state: ControllerState, cmd: protocol.Command, seq: int,
                   cfg: ControllerConfig, actuator: ActuatorState
                   ) -> tuple[ControllerState, object, protocol.Ack]:
    """Execute one decoded command.

    Returns (new state, action, ack) where action is None, a SprayCommand,
    or STOP_SPRAY.  Rejections (wrong mode, malformed arguments) produce a
    rejected/error ack and leave the state unchanged.
    """
    ok = protocol.Ack(seq=seq, status=protocol.ACK_OK)
    rejected = protocol.Ack(seq=seq, status=protocol.ACK_REJECTED)
    error = protocol.Ack(seq=seq, status=protocol.ACK_ERROR)

    if cmd.code == protocol.CMD_SET_MODE:
        try:
            mode = Mode(cmd.mode)
        except ValueError:
            return state, None, error
        return replace(state, mode=mode), None, ok

    if cmd.code == protocol.CMD_SPRAY_ON:
        # Override requires an explicit switch to manual first.
        if state.mode is not Mode.MANUAL:
            return state, None, rejected
        if actuator.liquid <= 0 or actuator.battery_charge <= 0:
            return state, None, rejected
        duration = cmd.duration if cmd.duration else cfg.spray_duration
        intensity = cmd.intensity if cmd.intensity is not None else 1.0
        if duration <= 0 or not 0.0 <= intensity <= 1.0:
            return state, None, error
        return state, SprayCommand(duration, intensity), ok

    if cmd.code == protocol.CMD_SPRAY_OFF:
        return state, STOP_SPRAY, ok

    if cmd.code == protocol.CMD_ACK_ALERT:
        try:
            alert = Alert(cmd.alert_code)
        except ValueError:
            return state, None, error
        return acknowledge_alert(state, alert), None, ok

    if cmd.code == protocol.CMD_SET_PARAMS:
        if (cmd.duration is None or cmd.duration <= 0
                or cmd.intensity is None
                or not 0.0 <= cmd.intensity <= 1.0
                or cmd.angle_factor is None
                or not 0.0 <= cmd.angle_factor <= 1.0):
            return state, None, error
        return state, ("set_params", SprayParams(
            intensity=cmd.intensity, duration=cmd.duration,
            angle_factor=cmd.angle_factor)), ok

    return state, None, error
