"""Deterministic solar plant model: sun, PV array, battery, load, charge stages.

The battery is a linear open-circuit-voltage source behind a series
resistance; the charge regulator runs the usual three stages (BULK at full
available current, ABSORPTION holding a voltage ceiling for a fixed time,
then FLOAT at a lower ceiling). Irradiance follows a half-sine day shaped
by seeded, piecewise-smooth cloud attenuation so runs are reproducible
sample for sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

BULK = "BULK"
ABSORPTION = "ABSORPTION"
FLOAT = "FLOAT"

SECONDS_PER_DAY = 86400

# Array terminal voltage at full sun; shaped by a soft power of the
# irradiance fraction so dawn and dusk ramp rather than step.
ARRAY_V_PEAK = 17.5

# Cloud attenuation is value noise: uniform knots this far apart in time,
# cosine-smoothed between them.
CLOUD_KNOT_SECONDS = 600


@dataclass(frozen=True)
class PlantConfig:
    peak_irradiance: float = 1000.0
    sunrise_s: int = 21600
    sunset_s: int = 64800
    array_rated_current: float = 40.0
    battery_capacity: float = 100.0
    battery_internal_resistance: float = 0.01
    ocv_empty: float = 11.8
    ocv_full: float = 12.7
    coulombic_efficiency: float = 0.95
    absorption_voltage: float = 14.4
    float_voltage: float = 13.5
    absorption_duration: int = 7200
    load_schedule: tuple[tuple[int, int, float], ...] = ()
    cloud_attenuation_seed: int = 0
    cloud_depth: float = 0.0

    def __post_init__(self) -> None:
        if not self.sunrise_s < self.sunset_s:
            raise ValueError("sunrise must precede sunset")
        if not self.ocv_empty < self.ocv_full:
            raise ValueError("ocv_empty must be below ocv_full")
        for name in ("peak_irradiance", "array_rated_current", "battery_capacity",
                     "battery_internal_resistance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.cloud_depth <= 1.0:
            raise ValueError("cloud_depth must be within 0..1")
        if not 0.0 < self.coulombic_efficiency <= 1.0:
            raise ValueError("coulombic_efficiency must be within (0, 1]")


@dataclass(frozen=True)
class PlantState:
    t: float = 0.0
    soc: float = 0.5
    battery_voltage: float = 0.0
    array_voltage: float = 0.0
    charge_current: float = 0.0
    load_current: float = 0.0
    cumulative_energy: float = 0.0
    stage: str = BULK
    stage_entered_at: float = 0.0


def _cloud_knot(seed: int, knot: int) -> float:
    # Stable uniform value in [0, 1) for knot i of a seed's cloud curve.
    state = np.random.SeedSequence([seed, knot]).generate_state(1)[0]
    return state / 2**32


def cloud_factor(cfg: PlantConfig, t: float) -> float:
    """Smooth seeded attenuation in [1 - cloud_depth, 1]."""
    if cfg.cloud_depth == 0.0:
        return 1.0
    pos = t / CLOUD_KNOT_SECONDS
    i = math.floor(pos)
    frac = pos - i
    a = _cloud_knot(cfg.cloud_attenuation_seed, i)
    b = _cloud_knot(cfg.cloud_attenuation_seed, i + 1)
    # cosine interpolation keeps the curve C1-smooth at the knots
    mix = (1 - math.cos(math.pi * frac)) / 2
    u = a * (1 - mix) + b * mix
    return 1.0 - cfg.cloud_depth * u


def irradiance(cfg: PlantConfig, t: float) -> float:
    """W/m^2 at simulated time t: half-sine daylight window times clouds."""
    if t < 0:
        raise ValueError("t must be non-negative")
    tod = t % SECONDS_PER_DAY
    if tod <= cfg.sunrise_s or tod >= cfg.sunset_s:
        return 0.0
    phase = (tod - cfg.sunrise_s) / (cfg.sunset_s - cfg.sunrise_s)
    return cfg.peak_irradiance * math.sin(math.pi * phase) * cloud_factor(cfg, t)


def ocv(cfg: PlantConfig, soc: float) -> float:
    """Open-circuit battery voltage, linear in state of charge."""
    if not 0.0 <= soc <= 1.0:
        raise ValueError(f"soc {soc} outside 0..1")
    return cfg.ocv_empty + soc * (cfg.ocv_full - cfg.ocv_empty)


def load_current(cfg: PlantConfig, t: float) -> float:
    tod = t % SECONDS_PER_DAY
    return sum(amps for start, end, amps in cfg.load_schedule if start <= tod < end)


def _ceiling_current(cfg: PlantConfig, soc: float, load: float, ceiling: float) -> float:
    # Charge current that would put the terminal exactly at the ceiling.
    r = cfg.battery_internal_resistance
    return max(0.0, (ceiling - ocv(cfg, soc)) / r + load)


def step(cfg: PlantConfig, state: PlantState, dt: float) -> PlantState:
    """Advance the plant by dt seconds (0 < dt <= 60)."""
    if not 0.0 < dt <= 60.0:
        raise ValueError("dt must be in (0, 60] seconds")

    irr = irradiance(cfg, state.t)
    available = irr / cfg.peak_irradiance * cfg.array_rated_current
    load = load_current(cfg, state.t)

    stage = state.stage
    entered = state.stage_entered_at
    if available <= 0.0:
        # night: no charging, regulator re-arms for the next day
        charge = 0.0
        if stage != BULK:
            stage, entered = BULK, state.t
    elif stage == BULK:
        limit = _ceiling_current(cfg, state.soc, load, cfg.absorption_voltage)
        if available >= limit:
            charge = limit
            stage, entered = ABSORPTION, state.t
        else:
            charge = available
    elif stage == ABSORPTION:
        charge = min(available, _ceiling_current(cfg, state.soc, load, cfg.absorption_voltage))
        if state.t - entered >= cfg.absorption_duration:
            stage, entered = FLOAT, state.t
    else:  # FLOAT
        charge = min(available, _ceiling_current(cfg, state.soc, load, cfg.float_voltage))

    delta_ah = (cfg.coulombic_efficiency * charge - load) * dt / 3600.0
    soc = min(1.0, max(0.0, state.soc + delta_ah / cfg.battery_capacity))
    terminal = ocv(cfg, soc) + (charge - load) * cfg.battery_internal_resistance
    array_v = ARRAY_V_PEAK * (irr / cfg.peak_irradiance) ** 0.15 if irr > 0 else 0.0
    energy = state.cumulative_energy + terminal * charge * dt / 3600.0

    return replace(
        state,
        t=state.t + dt,
        soc=soc,
        battery_voltage=terminal,
        array_voltage=array_v,
        charge_current=charge,
        load_current=load,
        cumulative_energy=energy,
        stage=stage,
        stage_entered_at=entered,
    )


def initial_state(cfg: PlantConfig, soc: float = 0.5) -> PlantState:
    """State at t=0 with quantities settled for the starting conditions."""
    load = load_current(cfg, 0.0)
    return PlantState(
        t=0.0,
        soc=soc,
        battery_voltage=ocv(cfg, soc) - load * cfg.battery_internal_resistance,
        array_voltage=0.0,
        charge_current=0.0,
        load_current=load,
        cumulative_energy=0.0,
        stage=BULK,
        stage_entered_at=0.0,
    )


TRACE_HEADER = "t,soc,battery_voltage,array_voltage,charge_current,load_current,cumulative_energy,stage"


def trace_row(state: PlantState) -> str:
    return (
        f"{state.t:.0f},{state.soc:.6f},{state.battery_voltage:.4f},"
        f"{state.array_voltage:.4f},{state.charge_current:.4f},"
        f"{state.load_current:.4f},{state.cumulative_energy:.4f},{state.stage}"
    )
