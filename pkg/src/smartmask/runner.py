"""Orchestration: fixed-tick co-simulation, reports, replication, calibration.

The loop advances the environment at ``physics_dt`` and the sensing/control
path at ``control_dt`` (an integer multiple).  Each control tick: sample the
mask sensor, compensate self-interference, classify risk, apply queued
commands, make the autonomous spray decision, run housekeeping, then step
the actuator and environment through the physics sub-steps.

Also hosts the desk-scale replication of the two-sensor humidifier
experiment and the calibration search that tunes the four free plume/source
parameters against its published outcome metrics.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import controller as ctl
from . import env as envmod
from . import mitigation as mit
from . import protocol
from .env import ConfigError, EmissionEvent, EmissionKind, PhysicsParams
from .sensors import SensorConfig, SensorLocation, sample_ambient, sample_pm

log = logging.getLogger("smartmask")

SCHEMA_VERSION = 1

CSV_COLUMNS = (
    ["time_s"]
    + [f"mask_n{i}" for i in range(5)]
    + [f"mask_m{i}" for i in range(5)]
    + ["mask_fine_raw", "mask_fine_comp", "risk",
       "spraying", "spray_intensity", "spray_time_remaining_s",
       "liquid_ml", "battery_mah"]
    + [f"ground_n{i}" for i in range(5)]
    + [f"ground_m{i}" for i in range(5)]
    + ["alerts", "temperature_c", "rh_pct"]
)

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "avg_mask_N_0p3_1p0", "avg_mask_N_compensated",
                 "avg_ground_N_by_bin", "avg_ground_mass_by_bin",
                 "reduction_pct_raw", "reduction_pct_compensated",
                 "ground_increase_pct"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "avg_mask_N_0p3_1p0": {"type": "number"},
        "avg_mask_N_compensated": {"type": ["number", "null"]},
        "avg_ground_N_by_bin": {"type": "array", "items": {"type": "number"}},
        "avg_ground_mass_by_bin": {"type": "array", "items": {"type": "number"}},
        "reduction_pct_raw": {"type": ["number", "null"]},
        "reduction_pct_compensated": {"type": ["number", "null"]},
        "ground_increase_pct": {
            "type": ["object", "null"],
            "properties": {k: {"type": "number"} for k in
                           ("mass_0p3_1p0", "mass_1p0_2p5",
                            "number_0p3_1p0", "number_1p0_2p5")},
        },
    },
}


@dataclass(frozen=True)
class CalibrationParams:
    """The four free parameters tuned by ``calibrate``."""

    f_local: float = 0.14838    # fraction of generated mist entering the box
    k_c: float = 3.441e-05      # cm^3/s mean-field loading rate
    r_push: float = 0.05361     # 1/s push-away at full intensity
    humidifier_rate: float = 4.293e8  # #/s while the humidifier runs


def load_calibration(path: str | None = None) -> CalibrationParams:
    """Calibrated defaults checked into the package, or a specific file."""
    if path is None:
        from importlib.resources import files
        text = files("smartmask").joinpath("calibration.json").read_text()
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    obj = json.loads(text)
    return CalibrationParams(**{k: obj[k] for k in
                                ("f_local", "k_c", "r_push", "humidifier_rate")})


@dataclass(frozen=True)
class ScheduledEmission:
    start: float
    event: EmissionEvent


@dataclass(frozen=True)
class ScriptedSpray:
    start: float
    duration: float = 15.0
    intensity: float = 1.0


@dataclass
class ScenarioConfig:
    duration: float = 175.0
    physics_dt: float = 0.1
    control_dt: float = 1.0
    temperature: float = 22.0
    relative_humidity: float = 45.0
    background: tuple[float, ...] = (0.0,) * 5   # initial #/cm^3 per bin
    emissions: list[ScheduledEmission] = field(default_factory=list)
    scripted_sprays: list[ScriptedSpray] = field(default_factory=list)
    mitigation_enabled: bool = True
    controller: ctl.ControllerConfig = field(default_factory=ctl.ControllerConfig)
    noise_sigma: float = 0.05
    calibration: CalibrationParams = field(default_factory=CalibrationParams)
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("duration: must be > 0")
        if self.physics_dt <= 0 or self.physics_dt > envmod.MAX_STEP_DT:
            raise ConfigError(
                f"physics_dt: must be in (0, {envmod.MAX_STEP_DT}]")
        ratio = self.control_dt / self.physics_dt
        if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
            raise ConfigError(
                "control_dt: must be an integer multiple of physics_dt")

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.physics_dt))

    @property
    def nticks(self) -> int:
        return int(round(self.duration / self.control_dt))

    @staticmethod
    def from_dict(obj: dict) -> "ScenarioConfig":
        """Build a config from parsed JSON, reporting the failing field path."""
        if obj.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version: expected {SCHEMA_VERSION}")
        kwargs: dict = {}
        simple = ("duration", "physics_dt", "control_dt", "temperature",
                  "relative_humidity", "mitigation_enabled", "noise_sigma",
                  "seed", "out_dir")
        for key in simple:
            if key in obj:
                kwargs[key] = obj[key]
        if "background" in obj:
            bg = obj["background"]
            if not isinstance(bg, list) or len(bg) != 5:
                raise ConfigError("background: expected a list of 5 values")
            kwargs["background"] = tuple(float(x) for x in bg)
        for i, e in enumerate(obj.get("emissions", [])):
            try:
                ev = EmissionEvent.preset(
                    e["kind"], rate=e.get("rate"),
                    duration=float(e.get("duration", 0.0)))
                kwargs.setdefault("emissions", []).append(
                    ScheduledEmission(start=float(e["start"]), event=ev))
            except (KeyError, ValueError, envmod.DomainError) as exc:
                raise ConfigError(f"emissions[{i}]: {exc}") from exc
        for i, s in enumerate(obj.get("scripted_sprays", [])):
            try:
                kwargs.setdefault("scripted_sprays", []).append(ScriptedSpray(
                    start=float(s["start"]),
                    duration=float(s.get("duration", 15.0)),
                    intensity=float(s.get("intensity", 1.0))))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"scripted_sprays[{i}]: {exc}") from exc
        if "calibration" in obj:
            try:
                kwargs["calibration"] = CalibrationParams(**obj["calibration"])
            except TypeError as exc:
                raise ConfigError(f"calibration: {exc}") from exc
        ctrl = obj.get("controller", {})
        if ctrl:
            try:
                if "self_mist_signature" in ctrl:
                    ctrl = dict(ctrl)
                    ctrl["self_mist_signature"] = np.asarray(
                        ctrl["self_mist_signature"], dtype=float)
                if "risk_thresholds" in ctrl:
                    ctrl["risk_thresholds"] = tuple(ctrl["risk_thresholds"])
                kwargs["controller"] = ctl.ControllerConfig(**ctrl)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"controller: {exc}") from exc
        try:
            return ScenarioConfig(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @staticmethod
    def from_file(path: str) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as f:
            return ScenarioConfig.from_dict(json.load(f))


@dataclass
class TickRecord:
    time_s: float
    mask_n: np.ndarray
    mask_m: np.ndarray
    fine_raw: float
    fine_comp: float
    risk: int
    spraying: bool
    spray_intensity: float
    spray_time_remaining: float
    liquid: float
    battery: float
    ground_n: np.ndarray
    ground_m: np.ndarray
    alerts: list[int]
    temperature: float
    rh: float

    def row(self) -> list:
        fmt = lambda x: format(float(x), ".10g")
        return ([fmt(self.time_s)]
                + [fmt(x) for x in self.mask_n] + [fmt(x) for x in self.mask_m]
                + [fmt(self.fine_raw), fmt(self.fine_comp), str(self.risk),
                   "1" if self.spraying else "0", fmt(self.spray_intensity),
                   fmt(self.spray_time_remaining), fmt(self.liquid),
                   fmt(self.battery)]
                + [fmt(x) for x in self.ground_n]
                + [fmt(x) for x in self.ground_m]
                + [";".join(str(a) for a in self.alerts),
                   fmt(self.temperature), fmt(self.rh)])


class Simulation:
    """Single-owner co-simulation of environment, sensors, actuator, policy."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.env = envmod.default_env(seed=cfg.seed,
                                      temperature=cfg.temperature,
                                      rh=cfg.relative_humidity)
        self.env.breathing.number[:] = cfg.background
        self.params = PhysicsParams(k_coalescence=cfg.calibration.k_c)
        self.actuator = mit.ActuatorState()
        self.ctrl = ctl.ControllerState()
        self.mask_sensor = SensorConfig(location=SensorLocation.MASK,
                                        noise_sigma=cfg.noise_sigma,
                                        rng_seed=cfg.seed + 1)
        self.ground_sensor = SensorConfig(location=SensorLocation.GROUND,
                                          noise_sigma=cfg.noise_sigma,
                                          rng_seed=cfg.seed + 2)
        self.tick_index = 0
        self._fired_impulses: set[int] = set()
        self.records: list[TickRecord] = []
        self.pending_commands: list[tuple[protocol.Command, int]] = []
        self.last_acks: list[protocol.Ack] = []

    # -- command ingress (used by the device server) ------------------------

    def queue_command(self, cmd: protocol.Command, seq: int) -> None:
        self.pending_commands.append((cmd, seq))

    def _apply_commands(self) -> list[protocol.Ack]:
        acks = []
        for cmd, seq in self.pending_commands:
            self.ctrl, action, ack = ctl.handle_command(
                self.ctrl, cmd, seq, self.cfg.controller, self.actuator)
            acks.append(ack)
            if action is ctl.STOP_SPRAY:
                self.actuator = mit.stop_spray(self.actuator)
                self.ctrl = replace(self.ctrl, spray_active_intensity=0.0)
            elif isinstance(action, ctl.SprayCommand):
                self._start_spray(action)
            elif isinstance(action, tuple) and action[0] == "set_params":
                self.actuator = replace(self.actuator, params=action[1])
        self.pending_commands.clear()
        return acks

    def _start_spray(self, cmd: ctl.SprayCommand) -> None:
        try:
            self.actuator = mit.start_spray(
                self.actuator, mit.SprayParams(intensity=cmd.intensity,
                                               duration=cmd.duration))
            self.ctrl = replace(self.ctrl, spray_active_intensity=cmd.intensity)
        except mit.ResourceError as exc:
            log.warning("spray refused: %s", exc)

    # -- main loop ----------------------------------------------------------

    def control_tick(self) -> TickRecord:
        """One control period: sense, decide, actuate, advance physics."""
        cfg = self.cfg
        now = self.tick_index * cfg.control_dt

        raw = sample_pm(self.env, self.mask_sensor)
        ground = sample_pm(self.env, self.ground_sensor)
        ambient = sample_ambient(self.env)
        comp = ctl.compensate_self_interference(raw, self.ctrl, cfg.controller)
        risk = ctl.classify_risk(comp, cfg.controller)

        self.last_acks = self._apply_commands()

        if cfg.mitigation_enabled:
            self.ctrl, spray_cmd = ctl.decide(
                self.ctrl, risk, self.actuator, cfg.controller, now)
            if spray_cmd is not None:
                self._start_spray(spray_cmd)
        for scripted in cfg.scripted_sprays:
            if abs(scripted.start - now) < cfg.control_dt / 2:
                self._start_spray(ctl.SprayCommand(scripted.duration,
                                                   scripted.intensity))

        self.ctrl, alerts = ctl.housekeeping(
            self.ctrl, self.actuator, comp, cfg.control_dt, cfg.controller)

        record = TickRecord(
            time_s=now,
            mask_n=raw.number_concentration, mask_m=raw.mass_concentration,
            fine_raw=raw.fine_count(), fine_comp=comp.fine_count(),
            risk=int(risk),
            spraying=self.actuator.spraying,
            spray_intensity=(self.actuator.params.intensity
                             if self.actuator.spraying else 0.0),
            spray_time_remaining=self.actuator.time_remaining,
            liquid=self.actuator.liquid, battery=self.actuator.battery_charge,
            ground_n=ground.number_concentration,
            ground_m=ground.mass_concentration,
            alerts=[int(a) for a in alerts],
            temperature=ambient.temperature, rh=ambient.relative_humidity)
        self.records.append(record)

        for _ in range(cfg.substeps):
            self._physics_step()
        self.tick_index += 1
        return record

    def _physics_step(self) -> None:
        cfg = self.cfg
        dt = cfg.physics_dt
        t = self.env.sim_time
        for idx, sched in enumerate(cfg.emissions):
            ev = sched.event
            if ev.kind in (EmissionKind.HUMIDIFIER, EmissionKind.MIST):
                if sched.start - dt / 2 <= t < sched.start + ev.duration - dt / 2:
                    self.env = envmod.apply_emission(self.env, ev, dt)
            elif idx not in self._fired_impulses and t >= sched.start - dt / 2:
                self._fired_impulses.add(idx)
                self.env = envmod.apply_emission(self.env, ev, dt)

        self.actuator, plume = mit.spray_step(
            self.actuator, dt,
            f_local=cfg.calibration.f_local, r_push=cfg.calibration.r_push)
        if not self.actuator.spraying and self.ctrl.spray_active_intensity > 0:
            self.ctrl = replace(self.ctrl, spray_active_intensity=0.0)
        self.env = envmod.step(self.env, plume, dt, self.params)

    def run(self) -> list[TickRecord]:
        for _ in range(self.cfg.nticks):
            self.control_tick()
        # closing record at t = duration (state after the last advance)
        self._final_record()
        return self.records

    def _final_record(self) -> None:
        saved = self.cfg.substeps
        raw = sample_pm(self.env, self.mask_sensor)
        ground = sample_pm(self.env, self.ground_sensor)
        ambient = sample_ambient(self.env)
        comp = ctl.compensate_self_interference(raw, self.ctrl,
                                                self.cfg.controller)
        risk = ctl.classify_risk(comp, self.cfg.controller)
        self.records.append(TickRecord(
            time_s=self.tick_index * self.cfg.control_dt,
            mask_n=raw.number_concentration, mask_m=raw.mass_concentration,
            fine_raw=raw.fine_count(), fine_comp=comp.fine_count(),
            risk=int(risk), spraying=self.actuator.spraying,
            spray_intensity=(self.actuator.params.intensity
                             if self.actuator.spraying else 0.0),
            spray_time_remaining=self.actuator.time_remaining,
            liquid=self.actuator.liquid,
            battery=self.actuator.battery_charge,
            ground_n=ground.number_concentration,
            ground_m=ground.mass_concentration,
            alerts=[], temperature=ambient.temperature,
            rh=ambient.relative_humidity))
        del saved


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def records_to_csv(records: list[TickRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow(r.row())
    return buf.getvalue()


def _atomic_write(path: str, data: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def summarize(records: list[TickRecord]) -> dict:
    """Single-run time averages; comparison metrics are null here."""
    fine_raw = np.array([r.fine_raw for r in records])
    fine_comp = np.array([r.fine_comp for r in records])
    ground_n = np.array([r.ground_n for r in records])
    ground_m = np.array([r.ground_m for r in records])
    return {
        "schema_version": SCHEMA_VERSION,
        "avg_mask_N_0p3_1p0": float(fine_raw.mean()),
        "avg_mask_N_compensated": float(fine_comp.mean()),
        "avg_ground_N_by_bin": [float(x) for x in ground_n.mean(axis=0)],
        "avg_ground_mass_by_bin": [float(x) for x in ground_m.mean(axis=0)],
        "reduction_pct_raw": None,
        "reduction_pct_compensated": None,
        "ground_increase_pct": None,
    }


@dataclass
class RunReport:
    records: list[TickRecord]
    summary: dict
    csv_text: str

    def write(self, out_dir: str) -> None:
        _atomic_write(os.path.join(out_dir, "timeseries.csv"), self.csv_text)
        _atomic_write(os.path.join(out_dir, "summary.json"),
                      json.dumps(self.summary, indent=2) + "\n")


def run_scenario(cfg: ScenarioConfig) -> RunReport:
    """Run one scenario to completion and persist its report if configured."""
    sim = Simulation(cfg)
    records = sim.run()
    report = RunReport(records=records, summary=summarize(records),
                       csv_text=records_to_csv(records))
    if cfg.out_dir:
        report.write(cfg.out_dir)
    return report


# ---------------------------------------------------------------------------
# Experiment replication
# ---------------------------------------------------------------------------

HUMIDIFIER_ON_S = 15.0
SETTLE_S = 160.0
WINDOW_S = HUMIDIFIER_ON_S + SETTLE_S


def _replication_config(params: CalibrationParams, *, mitigation: bool,
                        humidifier: bool, scripted: list[ScriptedSpray] = (),
                        signature: np.ndarray | None = None,
                        seed: int = 0, noise_sigma: float = 0.05,
                        out_dir: str | None = None) -> ScenarioConfig:
    emissions = []
    if humidifier:
        emissions.append(ScheduledEmission(
            start=0.0, event=EmissionEvent.preset(
                "humidifier", rate=params.humidifier_rate,
                duration=HUMIDIFIER_ON_S)))
    controller = ctl.ControllerConfig() if signature is None else \
        ctl.ControllerConfig(self_mist_signature=signature)
    return ScenarioConfig(duration=WINDOW_S, emissions=emissions,
                          scripted_sprays=list(scripted),
                          mitigation_enabled=mitigation,
                          controller=controller,
                          calibration=params, seed=seed,
                          noise_sigma=noise_sigma, out_dir=out_dir)


def _spray_onset(records: list[TickRecord]) -> tuple[float, float] | None:
    for r in records:
        if r.spraying:
            return r.time_s, r.spray_intensity
    return None


def replicate_paper_experiment(params: CalibrationParams,
                               mask_enabled: bool = True,
                               seed: int = 0, noise_sigma: float = 0.05,
                               out_dir: str | None = None) -> dict:
    """Replicate the three-run humidifier protocol and report its metrics.

    Runs (a) humidifier only, (b) mask only in clean air (measures the
    self-mist signature), and (c) humidifier with the closed loop active,
    then computes the raw/compensated mask-sensor reductions and the
    ground-sensor increases.  ``mask_enabled`` selects which run's
    timeseries is persisted as the primary output.
    """
    # (a) baseline: humidifier only
    run_a = run_scenario(_replication_config(
        params, mitigation=False, humidifier=True, seed=seed,
        noise_sigma=noise_sigma))

    # first pass of (c) without compensation, to locate the trigger
    run_c0 = run_scenario(_replication_config(
        params, mitigation=True, humidifier=True, seed=seed,
        noise_sigma=noise_sigma))
    onset = _spray_onset(run_c0.records)

    signature = np.zeros(5)
    run_b = None
    if onset is not None:
        t_spray, intensity = onset
        # (b) mask only: scripted spray at the same onset, in clean air
        run_b = run_scenario(_replication_config(
            params, mitigation=False, humidifier=False,
            scripted=[ScriptedSpray(start=t_spray, duration=HUMIDIFIER_ON_S,
                                    intensity=intensity)],
            seed=seed, noise_sigma=noise_sigma))
        active = [r for r in run_b.records if r.spraying]
        if active and intensity > 0:
            signature = (np.mean([r.mask_n for r in active], axis=0)
                         / intensity)

    # (c) final closed-loop run with the measured signature
    run_c = run_scenario(_replication_config(
        params, mitigation=True, humidifier=True, signature=signature,
        seed=seed, noise_sigma=noise_sigma))

    fine_a = np.array([r.fine_raw for r in run_a.records])
    fine_c = np.array([r.fine_raw for r in run_c.records])
    fine_b = (np.array([r.fine_raw for r in run_b.records])
              if run_b is not None else np.zeros_like(fine_c))
    comp_c = np.maximum(fine_c - fine_b, 0.0)

    avg_a = float(fine_a.mean())
    avg_c = float(fine_c.mean())
    avg_comp = float(comp_c.mean())

    def pct(base, other):
        return None if base <= 0 else 100.0 * (other - base) / base

    gn_a = np.array([r.ground_n for r in run_a.records]).mean(axis=0)
    gn_c = np.array([r.ground_n for r in run_c.records]).mean(axis=0)
    gm_a = np.array([r.ground_m for r in run_a.records]).mean(axis=0)
    gm_c = np.array([r.ground_m for r in run_c.records]).mean(axis=0)

    summary = {
        "schema_version": SCHEMA_VERSION,
        "avg_mask_N_0p3_1p0": avg_c if mask_enabled else avg_a,
        "avg_mask_N_compensated": avg_comp if mask_enabled else None,
        "avg_ground_N_by_bin": [float(x) for x in (gn_c if mask_enabled else gn_a)],
        "avg_ground_mass_by_bin": [float(x) for x in (gm_c if mask_enabled else gm_a)],
        "reduction_pct_raw": None if avg_a <= 0 else 100.0 * (avg_a - avg_c) / avg_a,
        "reduction_pct_compensated":
            None if avg_a <= 0 else 100.0 * (avg_a - avg_comp) / avg_a,
        "ground_increase_pct": {
            "mass_0p3_1p0": pct(gm_a[0] + gm_a[1], gm_c[0] + gm_c[1]),
            "mass_1p0_2p5": pct(gm_a[2], gm_c[2]),
            "number_0p3_1p0": pct(gn_a[0] + gn_a[1], gn_c[0] + gn_c[1]),
            "number_1p0_2p5": pct(gn_a[2], gn_c[2]),
        },
        "spray_onset_s": None if onset is None else onset[0],
        "spray_count": _count_sprays(run_c.records),
        "self_mist_signature": [float(x) for x in signature],
    }
    if out_dir:
        primary = run_c if mask_enabled else run_a
        _atomic_write(os.path.join(out_dir, "timeseries.csv"), primary.csv_text)
        _atomic_write(os.path.join(out_dir, "summary.json"),
                      json.dumps(summary, indent=2) + "\n")
    return summary


def _count_sprays(records: list[TickRecord]) -> int:
    count = 0
    prev = False
    for r in records:
        if r.spraying and not prev:
            count += 1
        prev = r.spraying
    return count


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

PAPER_TARGETS = {
    "reduction_pct_raw": 20.0,
    "reduction_pct_compensated": 40.0,
    "ground_mass_0p3_1p0": 63.0,
    "ground_mass_1p0_2p5": 60.0,
    "ground_number_0p3_1p0": 62.0,
    "ground_number_1p0_2p5": 50.0,
}

PAPER_TOLERANCES_PP = {
    "reduction_pct_raw": 10.0,
    "reduction_pct_compensated": 10.0,
    "ground_mass_0p3_1p0": 15.0,
    "ground_mass_1p0_2p5": 15.0,
    "ground_number_0p3_1p0": 15.0,
    "ground_number_1p0_2p5": 15.0,
}


def _metrics_vector(summary: dict) -> dict:
    g = summary["ground_increase_pct"] or {}
    pick = lambda v: float("nan") if v is None else v
    return {
        "reduction_pct_raw": pick(summary["reduction_pct_raw"]),
        "reduction_pct_compensated": pick(summary["reduction_pct_compensated"]),
        "ground_mass_0p3_1p0": pick(g.get("mass_0p3_1p0")),
        "ground_mass_1p0_2p5": pick(g.get("mass_1p0_2p5")),
        "ground_number_0p3_1p0": pick(g.get("number_0p3_1p0")),
        "ground_number_1p0_2p5": pick(g.get("number_1p0_2p5")),
    }


def _residual(metrics: dict, targets: dict,
              tolerances_pp: dict | None = None) -> float:
    """Squared relative error, heavily penalizing tolerance violations so the
    search prefers an in-tolerance fit over a closer-but-violating one."""
    err = 0.0
    for key, target in targets.items():
        v = metrics.get(key, float("nan"))
        if math.isnan(v):
            return float("inf")
        err += ((v - target) / target) ** 2
        if tolerances_pp is not None:
            excess = abs(v - target) - tolerances_pp[key]
            if excess > 0:
                err += 100.0 * (excess / target) ** 2
    return err


def calibrate(targets: dict | None = None,
              tolerances_pp: dict | None = None,
              out_path: str | None = None,
              start: CalibrationParams | None = None,
              sweeps: int = 2, seed: int = 0) -> dict:
    """Coordinate-descent search for the four plume/source parameters.

    Minimizes the squared relative error of the replication metrics against
    the target percentages.  Deterministic for a fixed grid and seed.
    Returns a report dict with the best parameters and residuals; raises no
    error on failure but marks ``within_tolerance`` false and lists the
    offending metrics.
    """
    targets = dict(PAPER_TARGETS if targets is None else targets)
    tolerances_pp = dict(PAPER_TOLERANCES_PP if tolerances_pp is None
                         else tolerances_pp)
    best = start or CalibrationParams()

    grids = {name: np.geomspace(getattr(best, name) / 3.0,
                                getattr(best, name) * 3.0, 9)
             for name in ("humidifier_rate", "f_local", "k_c", "r_push")}

    cache: dict[CalibrationParams, float] = {}

    def evaluate(p: CalibrationParams) -> float:
        if p not in cache:
            # noise-free runs keep the search objective smooth
            summary = replicate_paper_experiment(p, seed=seed, noise_sigma=0.0)
            cache[p] = _residual(_metrics_vector(summary), targets,
                                 tolerances_pp)
        return cache[p]

    best_err = evaluate(best)
    for sweep in range(sweeps):
        for name, grid in grids.items():
            for value in grid:
                cand = replace(best, **{name: float(value)})
                err = evaluate(cand)
                if err < best_err:
                    best, best_err = cand, err
            log.info("calibrate sweep %d %s -> %s (err %.4f)",
                     sweep, name, best, best_err)
        # refine each parameter around the current best
        grids = {name: np.geomspace(getattr(best, name) / 2.5,
                                    getattr(best, name) * 2.5, 9)
                 for name in grids}

    final = replicate_paper_experiment(best, seed=seed, noise_sigma=0.0)
    metrics = _metrics_vector(final)
    misses = {k: metrics[k] for k in targets
              if math.isnan(metrics[k])
              or abs(metrics[k] - targets[k]) > tolerances_pp[k]}
    report = {
        "params": asdict(best),
        "residual": best_err,
        "metrics": metrics,
        "targets": targets,
        "within_tolerance": not misses,
        "out_of_tolerance": misses,
    }
    if out_path:
        payload = dict(asdict(best))
        payload["metrics"] = metrics
        _atomic_write(out_path, json.dumps(payload, indent=2) + "\n")
    return report
