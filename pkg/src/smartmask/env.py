"""Sectional two-box aerosol model of the air column around a mask wearer.

The air column is split into a breathing box (0.3-2.1 m) and a ground box
(0-0.3 m), each well mixed.  Droplet populations are tracked as number
concentrations (#/cm^3) on a fixed diameter grid, with a separate per-box
population for self-generated mist (so the controller can be told apart from
ambient aerosol) and a scalar sub-detection pool for droplets that start
below the smallest grid bin but can grow back into range by coalescing with
mist.

Processes, applied in a fixed order each step: d^2-law evaporation down to a
per-bin nucleus floor, mist injection and mean-field coalescence (loading),
advective push-away while spraying, and Stokes gravitational settling
breathing -> ground -> floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache

import numpy as np

GRAVITY = 9.81                 # m/s^2
AIR_VISCOSITY = 1.81e-5        # Pa s
WATER_DENSITY = 1.0            # g/cm^3

DEFAULT_BIN_EDGES = (0.3, 0.5, 1.0, 2.5, 4.0, 10.0)  # um

# Default two-box geometry: sensor heights 1.6 m (mask) and 0 m (ground).
BREATHING_HEIGHT_M = 1.8
GROUND_HEIGHT_M = 0.3
CROSS_SECTION_M2 = 1.0

DEFAULT_KAPPA0 = 0.08          # um^2/s evaporation rate constant at rh = 0
MAX_STEP_DT = 0.5              # s, explicit-Euler stability bound

_SUB_POOL_DIAMETER = 0.25      # um, representative size of below-range droplets


class DomainError(ValueError):
    """An operation was called outside its physical domain."""


class ConfigError(ValueError):
    """A configuration value is inconsistent or unknown."""


class EmissionKind(str, Enum):
    TALK = "talk"
    COUGH = "cough"
    SNEEZE = "sneeze"
    HUMIDIFIER = "humidifier"
    MIST = "mist"


# Continuous sources carry a rate in #/s; the rest are single impulses.
_CONTINUOUS_KINDS = {EmissionKind.HUMIDIFIER, EmissionKind.MIST}


@dataclass(frozen=True)
class BinGrid:
    """Fixed diameter grid (um).  Bin i spans [edges[i], edges[i+1])."""

    edges: tuple[float, ...] = DEFAULT_BIN_EDGES

    def __post_init__(self):
        e = self.edges
        if len(e) < 2 or any(x <= 0 for x in e):
            raise ConfigError("bin edges must be positive")
        if any(b <= a for a, b in zip(e, e[1:])):
            raise ConfigError("bin edges must be strictly increasing")
        rep = np.sqrt(np.asarray(e[:-1]) * np.asarray(e[1:]))
        object.__setattr__(self, "_rep", rep)
        object.__setattr__(self, "_edges_arr", np.asarray(e, dtype=float))

    @property
    def nbins(self) -> int:
        return len(self.edges) - 1

    @property
    def representative_diameters(self) -> np.ndarray:
        """Geometric-mean diameter of each bin (um)."""
        return self._rep

    @property
    def edges_array(self) -> np.ndarray:
        return self._edges_arr

    def locate(self, d: float) -> int:
        """Bin index for diameter d; -1 below range, nbins above range."""
        if d < self.edges[0]:
            return -1
        if d >= self.edges[-1]:
            return self.nbins
        return int(np.searchsorted(self._edges_arr, d, side="right")) - 1


@dataclass
class BoxState:
    """One well-mixed box of the air column.

    ``number``/``nucleus`` hold the ambient droplet population; ``mist_number``
    the mask's own mist (nucleus 0, pure water); the ``sub_*`` scalars the
    below-detection pool.
    """

    number: np.ndarray                  # #/cm^3 per bin
    nucleus: np.ndarray                 # um per bin, 0 = evaporates away
    height: float                       # m
    cross_section: float                # m^2
    temperature: float = 22.0           # degC
    relative_humidity: float = 45.0     # %
    mist_number: np.ndarray = None      # #/cm^3 per bin
    sub_number: float = 0.0             # #/cm^3
    sub_diameter: float = _SUB_POOL_DIAMETER
    sub_nucleus: float = 0.0

    def __post_init__(self):
        self.number = np.asarray(self.number, dtype=float)
        self.nucleus = np.asarray(self.nucleus, dtype=float)
        if self.mist_number is None:
            self.mist_number = np.zeros_like(self.number)
        else:
            self.mist_number = np.asarray(self.mist_number, dtype=float)
        if np.any(self.number < 0) or np.any(self.mist_number < 0):
            raise DomainError("number concentrations must be >= 0")
        if not 0.0 <= self.relative_humidity <= 100.0:
            raise DomainError("relative humidity must be in [0, 100]")
        if self.height <= 0 or self.cross_section <= 0:
            raise DomainError("box geometry must be positive")

    @property
    def volume_cm3(self) -> float:
        return self.height * self.cross_section * 1e6

    def detectable(self) -> np.ndarray:
        """Per-bin concentration as seen by an optical counter (ambient + mist)."""
        return self.number + self.mist_number

    def copy(self) -> "BoxState":
        # hot path: bypass __init__ validation (the source already satisfies it)
        new = object.__new__(BoxState)
        new.__dict__.update(self.__dict__)
        new.number = self.number.copy()
        new.nucleus = self.nucleus.copy()
        new.mist_number = self.mist_number.copy()
        return new


@dataclass
class EnvState:
    """Full simulation state: two stacked boxes sharing one grid."""

    grid: BinGrid
    breathing: BoxState
    ground: BoxState
    sim_time: float = 0.0
    rng_seed: int = 0

    def copy(self) -> "EnvState":
        new = object.__new__(EnvState)
        new.__dict__.update(self.__dict__)
        new.breathing = self.breathing.copy()
        new.ground = self.ground.copy()
        return new

    def volume_moment(self) -> float:
        """Total third moment (sum n_i d_i^3 over everything, both boxes).

        Concentrations are scaled by box volume so the moment is an absolute
        particle-volume budget, comparable across boxes.
        """
        total = 0.0
        for box in (self.breathing, self.ground):
            rep = self.grid.representative_diameters
            per_cm3 = (
                float(np.sum(box.number * rep**3))
                + float(np.sum(box.mist_number * rep**3))
                + box.sub_number * box.sub_diameter**3
            )
            total += per_cm3 * box.volume_cm3
        return total


def default_env(seed: int = 0, temperature: float = 22.0, rh: float = 45.0,
                grid: BinGrid | None = None) -> EnvState:
    """Empty two-box column with the default desk-scale geometry."""
    grid = grid or BinGrid()
    n = grid.nbins
    mk = lambda h: BoxState(
        number=np.zeros(n), nucleus=np.zeros(n), height=h,
        cross_section=CROSS_SECTION_M2, temperature=temperature,
        relative_humidity=rh,
    )
    return EnvState(grid=grid, breathing=mk(BREATHING_HEIGHT_M),
                    ground=mk(GROUND_HEIGHT_M), rng_seed=seed)


@dataclass(frozen=True)
class EmissionEvent:
    """Parameterized droplet source.

    ``total_count`` is the droplet count for impulsive kinds (talk, cough,
    sneeze) and a rate in #/s for continuous kinds (humidifier, mist).
    """

    kind: EmissionKind
    total_count: float
    median_diameter: float              # um
    geometric_std_dev: float
    duration: float = 0.0               # s
    nucleus_diameter: float = 0.0       # um

    def __post_init__(self):
        if self.total_count < 0 or self.duration < 0:
            raise DomainError("total_count and duration must be >= 0")
        if self.geometric_std_dev <= 1.0:
            raise DomainError("geometric_std_dev must be > 1")

    @staticmethod
    def preset(kind: EmissionKind | str, rate: float | None = None,
               duration: float = 0.0) -> "EmissionEvent":
        """Default source parameters per kind (counts from the literature,
        distribution shapes are the model's log-normal choices)."""
        kind = EmissionKind(kind)
        if kind is EmissionKind.SNEEZE:
            return EmissionEvent(kind, 40_000, 4.0, 2.0, 0.0, 1.0)
        if kind is EmissionKind.COUGH:
            return EmissionEvent(kind, 3_000, 2.0, 1.8, 0.0, 1.0)
        if kind is EmissionKind.TALK:
            return EmissionEvent(kind, 3_000, 1.0, 1.6, 300.0, 1.0)
        if kind is EmissionKind.HUMIDIFIER:
            return EmissionEvent(kind, rate if rate is not None else 1e8,
                                 1.0, 1.5, duration, 0.0)
        if kind is EmissionKind.MIST:
            return EmissionEvent(kind, rate if rate is not None else 0.0,
                                 2.0, 1.5, duration, 0.0)
        raise ConfigError(f"unknown emission kind: {kind}")


@dataclass(frozen=True)
class MistPlume:
    """Mist output of the actuator entering the breathing box."""

    droplet_rate_into_box: float        # #/s
    droplet_diameter: float             # um (median)
    push_away_rate: float               # 1/s on ambient breathing-box droplets

    def __post_init__(self):
        if min(self.droplet_rate_into_box, self.droplet_diameter,
               self.push_away_rate) < 0:
            raise DomainError("plume fields must be >= 0")


@dataclass(frozen=True)
class PhysicsParams:
    """Tunable physics constants; calibrated values live in the runner."""

    density: float = WATER_DENSITY      # g/cm^3
    kappa0: float = DEFAULT_KAPPA0      # um^2/s
    k_coalescence: float = 2e-5         # cm^3/s mean-field loading rate
    mist_gsd: float = 1.5               # spread of the injected mist
    gravity_off: bool = False           # test flag: disable settling


DEFAULT_PARAMS = PhysicsParams()


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

def stokes_settling_velocity(d: float, rho: float) -> float:
    """Stokes terminal velocity (m/s) for diameter d (um), density rho (g/cm^3)."""
    if d < 0 or rho <= 0:
        raise DomainError("require d >= 0 and rho > 0")
    d_m = d * 1e-6
    rho_si = rho * 1000.0
    return rho_si * GRAVITY * d_m * d_m / (18.0 * AIR_VISCOSITY)


def _stokes_velocity_array(d: np.ndarray, rho: float) -> np.ndarray:
    return rho * 1000.0 * GRAVITY * (d * 1e-6) ** 2 / (18.0 * AIR_VISCOSITY)


def evaporation_step(d: float, nucleus: float, dt: float, rh: float,
                     kappa0: float = DEFAULT_KAPPA0) -> float:
    """d^2-law shrinkage over dt, floored at the nucleus diameter."""
    if d < nucleus or nucleus < 0:
        raise DomainError("require d >= nucleus >= 0")
    if dt <= 0:
        raise DomainError("dt must be > 0")
    if not 0.0 <= rh <= 100.0:
        raise DomainError("rh must be in [0, 100]")
    kappa = kappa0 * (1.0 - rh / 100.0)
    shrunk = d * d - kappa * dt
    if shrunk <= nucleus * nucleus:
        return nucleus
    return math.sqrt(shrunk)


def coalesced_diameter(d1: float, d2: float) -> float:
    """Volume-conserving merged diameter of two droplets."""
    if d1 < 0 or d2 < 0:
        raise DomainError("diameters must be >= 0")
    # the max() guards against the cube root rounding just below max(d1, d2)
    return max((d1**3 + d2**3) ** (1.0 / 3.0), d1, d2)


def number_to_mass(n: float, d: float, rho: float) -> float:
    """Number concentration (#/cm^3) at diameter d (um) to mass (ug/m^3)."""
    if n < 0 or d < 0 or rho <= 0:
        raise DomainError("require n, d >= 0 and rho > 0")
    return n * (math.pi / 6.0) * d**3 * rho


@lru_cache(maxsize=256)
def _lognormal_bin_fractions_cached(grid: BinGrid, median: float,
                                    gsd: float) -> tuple[float, np.ndarray]:
    sigma = math.log(gsd)
    cdf = np.array([0.5 * (1.0 + math.erf(math.log(e / median)
                                          / sigma / math.sqrt(2.0)))
                    for e in grid.edges])
    below = float(cdf[0])
    fracs = np.diff(cdf)
    fracs[-1] += 1.0 - float(cdf[-1])
    fracs.setflags(write=False)
    return below, fracs


def lognormal_bin_fractions(grid: BinGrid, median: float,
                            gsd: float) -> tuple[float, np.ndarray]:
    """Split a log-normal number distribution onto the grid.

    Returns (fraction below the grid, per-bin fractions); mass above the top
    edge is folded into the top bin.
    """
    return _lognormal_bin_fractions_cached(grid, float(median), float(gsd))


def _blend_nucleus(n_old: np.ndarray, nuc_old: np.ndarray, i: int,
                   n_add: float, nuc_add: float) -> None:
    """Number-weighted nucleus update when droplets join bin i (in place)."""
    total = n_old[i] + n_add
    if total > 0:
        nuc_old[i] = (n_old[i] * nuc_old[i] + n_add * nuc_add) / total
    n_old[i] = total


def apply_emission(env: EnvState, event: EmissionEvent, dt: float) -> EnvState:
    """Add one emission event's droplets to the breathing box.

    Continuous kinds emit total_count * dt droplets; impulsive kinds emit
    total_count in a single call.
    """
    if dt <= 0:
        raise DomainError("dt must be > 0")
    if not isinstance(event.kind, EmissionKind):
        raise ConfigError(f"unknown emission kind: {event.kind!r}")

    count = event.total_count * dt if event.kind in _CONTINUOUS_KINDS \
        else event.total_count
    if count == 0:
        return env

    out = env.copy()
    box = out.breathing
    conc = count / box.volume_cm3
    below, fracs = lognormal_bin_fractions(
        env.grid, event.median_diameter, event.geometric_std_dev)

    rep = env.grid.representative_diameters
    for i in range(env.grid.nbins):
        add = conc * fracs[i]
        if add > 0:
            nuc = min(event.nucleus_diameter, rep[i])
            _blend_nucleus(box.number, box.nucleus, i, add, nuc)

    # Below-range droplets: respiratory nuclei are retained in the
    # sub-detection pool; pure-water droplets this small evaporate away.
    if below > 0 and event.nucleus_diameter >= env.grid.edges[0]:
        add = conc * below
        d_new = _SUB_POOL_DIAMETER
        nuc_new = min(event.nucleus_diameter, d_new)
        tot = box.sub_number + add
        box.sub_diameter = (box.sub_number * box.sub_diameter + add * d_new) / tot
        box.sub_nucleus = (box.sub_number * box.sub_nucleus + add * nuc_new) / tot
        box.sub_number = tot
    return out


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------

def _evaporate_population(number: np.ndarray, nucleus: np.ndarray,
                          grid: BinGrid, kappa: float, dt: float) -> float:
    """Upwind transfer toward smaller bins as droplets shrink (in place).

    A bin drains at rate kappa / (its width in d^2 space); bins whose nucleus
    floor is at or above their lower edge are pinned.  Returns the number
    concentration leaving through the bottom of the grid.
    """
    inv_widths, lower_edges = _grid_evaporation_factors(grid)
    frac = np.minimum(1.0, kappa * dt * inv_widths)
    pinned = nucleus >= lower_edges
    moved = np.where(pinned, 0.0, number * frac)
    number -= moved
    for i in range(1, grid.nbins):
        if moved[i] > 0:
            _blend_nucleus(number, nucleus, i - 1, moved[i], nucleus[i])
    return float(moved[0])


@lru_cache(maxsize=16)
def _grid_evaporation_factors(grid: BinGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-grid constants for the d^2-space upwind drain: inverse bin widths
    in d^2 and the (slightly relaxed) lower edges used for nucleus pinning."""
    edges2 = grid.edges_array**2
    inv_widths = 1.0 / np.diff(edges2)
    lower_edges = grid.edges_array[:-1] - 1e-12
    inv_widths.setflags(write=False)
    lower_edges.setflags(write=False)
    return inv_widths, lower_edges


@lru_cache(maxsize=16)
def _grid_settling_velocities(grid: BinGrid, rho: float) -> np.ndarray:
    v = _stokes_velocity_array(grid.representative_diameters, rho)
    v.setflags(write=False)
    return v


def _apply_evaporation(box: BoxState, grid: BinGrid, dt: float,
                       params: PhysicsParams) -> None:
    kappa = params.kappa0 * (1.0 - box.relative_humidity / 100.0)
    if kappa <= 0:
        return
    escaped = _evaporate_population(box.number, box.nucleus, grid, kappa, dt)
    if escaped > 0:
        # Shrunk past the smallest bin: respiratory nuclei keep existing in
        # the sub-detection pool, water droplets vanish.
        nuc = box.nucleus[0]
        if nuc > 0:
            tot = box.sub_number + escaped
            box.sub_diameter = (box.sub_number * box.sub_diameter
                                + escaped * min(nuc, _SUB_POOL_DIAMETER)) / tot
            box.sub_nucleus = (box.sub_number * box.sub_nucleus
                               + escaped * min(nuc, _SUB_POOL_DIAMETER)) / tot
            box.sub_number = tot
    if box.mist_number.any():
        _evaporate_population(box.mist_number, np.zeros(grid.nbins), grid,
                              kappa, dt)
    if box.sub_number > 0:
        box.sub_diameter = evaporation_step(
            box.sub_diameter, min(box.sub_nucleus, box.sub_diameter), dt,
            box.relative_humidity, params.kappa0)


def _deposit_conserving(number: np.ndarray, nucleus: np.ndarray,
                        grid: BinGrid, dc: float, count: float,
                        nuc: float) -> None:
    """Add ``count`` droplets of diameter dc, splitting between the two bins
    whose representative diameters bracket dc so that both number and volume
    are conserved (in place)."""
    rep = grid.representative_diameters
    if dc <= rep[0]:
        _blend_nucleus(number, nucleus, 0, count, nuc)
        return
    if dc >= rep[-1]:
        _blend_nucleus(number, nucleus, grid.nbins - 1, count, nuc)
        return
    j = int(np.searchsorted(rep, dc)) - 1
    lo3, hi3 = rep[j] ** 3, rep[j + 1] ** 3
    f = (hi3 - dc**3) / (hi3 - lo3)
    _blend_nucleus(number, nucleus, j, count * f, nuc)
    _blend_nucleus(number, nucleus, j + 1, count * (1.0 - f), nuc)


@lru_cache(maxsize=16)
def _coalescence_deposit_matrix(grid: BinGrid) -> np.ndarray:
    """M[i, j, k]: fraction of droplets landing in bin k when a bin-i droplet
    coalesces with a bin-j mist droplet (number- and volume-conserving split
    between the bracketing representative diameters)."""
    n = grid.nbins
    rep = grid.representative_diameters
    m = np.zeros((n, n, n))
    for i in range(n):
        for j in range(n):
            dc = coalesced_diameter(rep[i], rep[j])
            tmp = np.zeros(n)
            _deposit_conserving(tmp, np.zeros(n), grid, dc, 1.0, 0.0)
            m[i, j] = tmp
    m.setflags(write=False)
    return m


def _apply_mist_and_coalescence(box: BoxState, grid: BinGrid, plume: MistPlume,
                                dt: float, params: PhysicsParams) -> None:
    # Inject this step's mist, spread log-normally around the plume median.
    if plume.droplet_rate_into_box > 0:
        conc = plume.droplet_rate_into_box * dt / box.volume_cm3
        below, fracs = lognormal_bin_fractions(
            grid, plume.droplet_diameter, params.mist_gsd)
        box.mist_number += conc * fracs
        # below-range mist is pure water and never detectable; dropped

    m_total = float(np.sum(box.mist_number))
    if m_total <= 0 or params.k_coalescence <= 0:
        return

    frac = min(1.0, params.k_coalescence * m_total * dt)
    rep = grid.representative_diameters
    weights = box.mist_number / m_total

    coalescing = box.number * frac
    sub_coalescing = box.sub_number * frac
    demand = float(np.sum(coalescing)) + sub_coalescing
    if demand <= 0:
        return
    # One mist droplet is consumed per loaded droplet; scale down if the
    # mist population cannot cover the demand.
    scale = min(1.0, m_total / demand)
    coalescing *= scale
    sub_coalescing *= scale

    box.number -= coalescing
    box.sub_number -= sub_coalescing
    consumed = float(np.sum(coalescing)) + sub_coalescing
    box.mist_number *= max(0.0, 1.0 - consumed / m_total)

    dep = _coalescence_deposit_matrix(grid)
    incoming = np.einsum("i,j,ijk->k", coalescing, weights, dep)
    incoming_nuc = np.einsum("i,j,ijk->k", coalescing * box.nucleus, weights, dep)
    total = box.number + incoming
    blended = np.where(total > 0,
                       (box.number * box.nucleus + incoming_nuc)
                       / np.where(total > 0, total, 1.0),
                       box.nucleus)
    box.number = total
    box.nucleus = blended
    if sub_coalescing > 0:
        for j in range(grid.nbins):
            cnt = sub_coalescing * weights[j]
            if cnt <= 0:
                continue
            dc = coalesced_diameter(box.sub_diameter, rep[j])
            _deposit_conserving(box.number, box.nucleus, grid, dc, cnt,
                                box.sub_nucleus)


def _apply_settling(env: EnvState, dt: float, params: PhysicsParams) -> None:
    grid = env.grid
    b, g = env.breathing, env.ground
    v = _grid_settling_velocities(grid, params.density)
    ratio = b.height / g.height  # concentration amplification breathing -> ground

    for attr in ("number", "mist_number"):
        nb = getattr(b, attr)
        ng = getattr(g, attr)
        if not (nb.any() or ng.any()):
            continue
        out_b = nb * np.minimum(1.0, v / b.height * dt)
        out_g = ng * np.minimum(1.0, v / g.height * dt)
        nb -= out_b
        ng -= out_g  # deposited on the floor, leaves the system
        gain = out_b * ratio
        if attr == "number":
            for i in range(grid.nbins):
                if gain[i] > 0:
                    _blend_nucleus(ng, g.nucleus, i, gain[i], b.nucleus[i])
        else:
            ng += gain

    for box_pair in ((b, g), (g, None)):
        box, dest = box_pair
        if box.sub_number <= 0:
            continue
        vs = stokes_settling_velocity(box.sub_diameter, params.density)
        out = box.sub_number * min(1.0, vs / box.height * dt)
        box.sub_number -= out
        if dest is not None:
            gain = out * ratio
            tot = dest.sub_number + gain
            dest.sub_diameter = (dest.sub_number * dest.sub_diameter
                                 + gain * box.sub_diameter) / tot
            dest.sub_nucleus = (dest.sub_number * dest.sub_nucleus
                                + gain * box.sub_nucleus) / tot
            dest.sub_number = tot


def step(env: EnvState, plume: MistPlume | None, dt: float,
         params: PhysicsParams = DEFAULT_PARAMS) -> EnvState:
    """Advance the environment by one explicit-Euler step of length dt."""
    if not 0.0 < dt <= MAX_STEP_DT:
        raise DomainError(f"dt must be in (0, {MAX_STEP_DT}] s")

    out = env.copy()
    grid = out.grid

    for box in (out.breathing, out.ground):
        _apply_evaporation(box, grid, dt, params)

    if plume is not None:
        _apply_mist_and_coalescence(out.breathing, grid, plume, dt, params)
        if plume.push_away_rate > 0:
            keep = 1.0 - min(1.0, plume.push_away_rate * dt)
            out.breathing.number *= keep
            out.breathing.sub_number *= keep

    if not params.gravity_off:
        _apply_settling(out, dt, params)

    out.sim_time = env.sim_time + dt
    return out
