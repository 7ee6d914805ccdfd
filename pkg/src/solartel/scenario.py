"""End-to-end scenario runner: plant, controller, field unit, phones, server.

One deterministic loop advances everything in 250 ms ticks (the unit's loop
tick), with the plant stepping on whole seconds. Per tick the order is
fixed: plant and registers first, then handset power states, the server
(scheduler and auto-answer), the network (timeouts, drops), and the field
unit last. Identical scenario and seed give byte-identical artifacts.

Artifacts written per run: plant_truth.csv, readings.csv (server store),
readings.jsonl (append-only log), unit_events.csv, calls.csv, alarms.csv,
summary.json.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace

import yaml

from . import plant as plant_mod
from .controller import ControllerSim, snapshot
from .plant import PlantConfig
from .protocol import LinkConfig, ModbusLink
from .server import ALARM_CSV_HEADER, READINGS_CSV_HEADER, MonitorServer, ScheduleConfig
from .telephony import CALL_CSV_HEADER, Handset, Network, call_csv_row
from .unit import UNIT_LOG_HEADER, FieldUnit, FieldUnitConfig

UNIT_NUMBER = "3525550101"
SERVER_NUMBER = "3525550100"

ARTIFACT_NAMES = (
    "plant_truth.csv",
    "readings.csv",
    "readings.jsonl",
    "unit_events.csv",
    "calls.csv",
    "alarms.csv",
    "summary.json",
)


@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float
    seed: int
    plant: PlantConfig
    unit: FieldUnitConfig
    schedule: ScheduleConfig
    initial_soc: float = 0.5
    channel_snr_db: float | None = None
    response_drop_rate: float = 0.0
    response_corrupt_rate: float = 0.0
    call_drop_probability: float = 0.0
    controller_latency_ms: int = 50
    description: str = ""

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")


def _unit_cfg(**kw) -> FieldUnitConfig:
    kw.setdefault("alarm_number", SERVER_NUMBER)
    kw.setdefault("own_number", UNIT_NUMBER)
    return FieldUnitConfig(**kw)


def _schedule_cfg(**kw) -> ScheduleConfig:
    kw.setdefault("field_number", UNIT_NUMBER)
    return ScheduleConfig(**kw)


def nominal_day() -> Scenario:
    return Scenario(
        name="nominal-day",
        duration=86400.0,
        seed=2009,
        plant=PlantConfig(
            array_rated_current=45.0,
            battery_internal_resistance=0.045,
            cloud_depth=0.15,
            load_schedule=((0, 86400, 2.0), (64800, 79200, 6.0)),
        ),
        initial_soc=0.55,
        unit=_unit_cfg(),
        schedule=_schedule_cfg(call_period=3600.0),
        description="Balanced day: hourly collection calls, full charge cycle, no alarms.",
    )


def overload_day() -> Scenario:
    return Scenario(
        name="overload-day",
        duration=86400.0,
        seed=2009,
        plant=PlantConfig(
            array_rated_current=40.0,
            battery_internal_resistance=0.02,
            cloud_depth=0.3,
            load_schedule=((0, 25200, 20.0), (61200, 86400, 2.0)),
        ),
        initial_soc=0.30,
        unit=_unit_cfg(),
        schedule=_schedule_cfg(call_period=3600.0),
        description="Overnight 20 A load overdraws the bank; continuous low-voltage "
                    "alarm calls until morning charge recovers the terminal voltage.",
    )


def noisy_channel() -> Scenario:
    return Scenario(
        name="noisy-channel",
        duration=10800.0,
        seed=2009,
        plant=PlantConfig(
            array_rated_current=45.0,
            battery_internal_resistance=0.045,
            cloud_depth=0.2,
            load_schedule=((0, 86400, 2.0),),
        ),
        initial_soc=0.6,
        unit=_unit_cfg(),
        schedule=_schedule_cfg(call_period=1800.0),
        channel_snr_db=20.0,
        description="Three hours with 20 dB SNR white noise on every call; the frame "
                    "checks must reject anything the detector garbles.",
    )


def lossy_poll() -> Scenario:
    return Scenario(
        name="lossy-poll",
        duration=7200.0,
        seed=2009,
        plant=PlantConfig(
            array_rated_current=45.0,
            battery_internal_resistance=0.045,
            cloud_depth=0.2,
            load_schedule=((0, 86400, 2.0),),
        ),
        initial_soc=0.6,
        unit=_unit_cfg(),
        schedule=_schedule_cfg(call_period=1800.0),
        response_drop_rate=0.6,
        response_corrupt_rate=0.2,
        description="Controller loses 60% and corrupts 20% of responses: exercises "
                    "the retry budget and skipped poll cycles.",
    )


BUILTINS = {
    s().name: s for s in (nominal_day, overload_day, noisy_channel, lossy_poll)
}


def load_scenario_file(path: str) -> Scenario:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"scenario file {path} must be a mapping")
    plant_kw = dict(raw.get("plant", {}))
    if "load_schedule" in plant_kw:
        plant_kw["load_schedule"] = tuple(tuple(row) for row in plant_kw["load_schedule"])
    faults = raw.get("faults", {})
    return Scenario(
        name=raw.get("name", os.path.splitext(os.path.basename(path))[0]),
        duration=float(raw["duration"]),
        seed=int(raw.get("seed", 0)),
        plant=PlantConfig(**plant_kw),
        initial_soc=float(raw.get("initial_soc", 0.5)),
        unit=_unit_cfg(**raw.get("unit", {})),
        schedule=_schedule_cfg(**raw.get("schedule", {})),
        channel_snr_db=raw.get("channel_snr_db"),
        response_drop_rate=float(faults.get("response_drop_rate", 0.0)),
        response_corrupt_rate=float(faults.get("response_corrupt_rate", 0.0)),
        call_drop_probability=float(faults.get("call_drop_probability", 0.0)),
        description=raw.get("description", ""),
    )


def get_scenario(name_or_path: str) -> Scenario:
    if name_or_path in BUILTINS:
        return BUILTINS[name_or_path]()
    if os.path.exists(name_or_path):
        return load_scenario_file(name_or_path)
    raise KeyError(f"unknown scenario {name_or_path!r}")


def describe(scenario: Scenario) -> str:
    lines = [f"{scenario.name}: {scenario.description}"]
    dump = asdict(scenario)
    dump.pop("description")
    lines.append(yaml.safe_dump(dump, sort_keys=True).rstrip())
    return "\n".join(lines)


class SimWorld:
    """Everything wired together; advance() moves one 250 ms tick."""

    def __init__(self, scenario: Scenario, out_dir: str | None, seed: int | None = None):
        self.scenario = scenario
        seed = scenario.seed if seed is None else seed
        self.seed = seed
        self.out_dir = out_dir
        self.plant_cfg = replace(scenario.plant, cloud_attenuation_seed=seed)
        self.plant_state = plant_mod.initial_state(self.plant_cfg, scenario.initial_soc)

        self.network = Network(seed=seed + 2, call_drop_probability=scenario.call_drop_probability)
        self.handset = Handset(scenario.unit.own_number, noise_snr_db=scenario.channel_snr_db)
        self.network.register(self.handset)
        self.controller = ControllerSim(
            latency_ms=scenario.controller_latency_ms,
            drop_rate=scenario.response_drop_rate,
            corrupt_rate=scenario.response_corrupt_rate,
            seed=seed + 1,
        )
        self.controller.update(snapshot(self.plant_state))
        self.unit = FieldUnit(
            scenario.unit, self.handset, self.network,
            ModbusLink(self.controller, LinkConfig()),
        )
        store_path = os.path.join(out_dir, "readings.jsonl") if out_dir else None
        self.server = MonitorServer(
            scenario.schedule, self.network, own_number=scenario.unit.alarm_number,
            noise_snr_db=scenario.channel_snr_db, store_path=store_path,
        )
        self.now = 0.0
        self._tick_index = 0
        self._truth_rows = [plant_mod.trace_row(self.plant_state)]
        self.unit.boot(0.0)

    def advance(self) -> float:
        self._tick_index += 1
        now = self._tick_index / 4.0
        self.now = now
        if self._tick_index % 4 == 0:
            self.plant_state = plant_mod.step(self.plant_cfg, self.plant_state, 1.0)
            self.controller.update(snapshot(self.plant_state))
            self._truth_rows.append(plant_mod.trace_row(self.plant_state))
        self.handset.tick(now)
        self.server.tick(now)
        self.network.tick(now)
        self.unit.tick(now)
        return now

    def run_to_end(self) -> None:
        end_ticks = round(self.scenario.duration * 4)
        while self._tick_index < end_ticks:
            self.advance()

    # -- artifacts ------------------------------------------------------------

    def summary(self) -> dict:
        unit_events = self.unit.events
        polls_ok = sum(1 for e in unit_events if e.event == "poll_ok")
        polls_failed = sum(1 for e in unit_events if e.event == "poll_fail")
        alarm_calls = sum(1 for e in unit_events if e.event == "alarm_call_placed")
        alarm_calls_done = sum(1 for e in unit_events if e.event == "alarm_call_done")
        unit_billed = sum(
            r.billed_minutes for r in self.network.records
            if r.billed_party == self.scenario.unit.own_number
        )
        server_side = self.server.summary()
        return {
            "scenario": self.scenario.name,
            "seed": self.seed,
            "duration_s": self.scenario.duration,
            "polls_ok": polls_ok,
            "polls_failed": polls_failed,
            "frames_transmitted": len(self.unit.transmitted_seqs()),
            "frames_stored": server_side["readings_stored"],
            "frames_rejected": server_side["frames_rejected"],
            "frames_duplicate": server_side["frames_duplicate"],
            "decode_failures": server_side["decode_failures"],
            "scheduled_calls": server_side["scheduled_calls"],
            "missed_calls": server_side["missed_calls"],
            "alarm_calls_placed": alarm_calls,
            "alarm_calls_completed": alarm_calls_done,
            "alarms_raised": server_side["alarms_raised"],
            "billed_minutes_total": self.network.total_billed_minutes(),
            "billed_minutes_server": server_side["billed_minutes"],
            "billed_minutes_unit": unit_billed,
        }

    def write_artifacts(self) -> dict:
        assert self.out_dir is not None
        os.makedirs(self.out_dir, exist_ok=True)

        def write(name: str, header: str, rows) -> None:
            with open(os.path.join(self.out_dir, name), "w") as fh:
                fh.write(header + "\n")
                for row in rows:
                    fh.write(row + "\n")

        write("plant_truth.csv", plant_mod.TRACE_HEADER, self._truth_rows)
        write("readings.csv", READINGS_CSV_HEADER, (r.csv_row() for r in self.server.readings))
        write("unit_events.csv", UNIT_LOG_HEADER, (e.csv_row() for e in self.unit.events))
        write("calls.csv", CALL_CSV_HEADER, (call_csv_row(r) for r in self.network.records))
        write("alarms.csv", ALARM_CSV_HEADER, (a.csv_row() for a in self.server.alarms))
        summary = self.summary()
        with open(os.path.join(self.out_dir, "summary.json"), "w") as fh:
            fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
        self.server.close()
        return summary


def run(scenario: Scenario, out_dir: str, seed: int | None = None) -> dict:
    """Run to completion and write artifacts; returns the summary."""
    os.makedirs(out_dir, exist_ok=True)
    store = os.path.join(out_dir, "readings.jsonl")
    if os.path.exists(store):
        os.remove(store)  # a rerun must not replay the previous run's readings
    world = SimWorld(scenario, out_dir, seed=seed)
    world.run_to_end()
    return world.write_artifacts()


def artifact_hashes(out_dir: str) -> dict[str, str]:
    hashes = {}
    for name in ARTIFACT_NAMES:
        path = os.path.join(out_dir, name)
        with open(path, "rb") as fh:
            hashes[name] = hashlib.sha256(fh.read()).hexdigest()
    return hashes
