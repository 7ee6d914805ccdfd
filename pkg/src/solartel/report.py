"""Day-view figures rendered from a finished run's CSV artifacts.

The run itself only writes delimited files; this is the CSV consumer that
draws them. Figures land next to the CSVs (or in --out): a two-panel day
view of voltages and currents with alarm-call marks, and a telephony view
of cumulative billed minutes per paying party.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _read_csv(path: str) -> dict[str, list[str]]:
    with open(path) as fh:
        reader = csv.DictReader(fh)
        columns: dict[str, list[str]] = {name: [] for name in reader.fieldnames}
        for row in reader:
            for key, value in row.items():
                columns[key].append(value)
    return columns


def _floats(columns: dict, key: str) -> np.ndarray:
    return np.array([float(v) for v in columns[key]])


def render(run_dir: str, out_dir: str | None = None) -> list[str]:
    out_dir = out_dir or run_dir
    os.makedirs(out_dir, exist_ok=True)

    truth = _read_csv(os.path.join(run_dir, "plant_truth.csv"))
    readings = _read_csv(os.path.join(run_dir, "readings.csv"))
    calls = _read_csv(os.path.join(run_dir, "calls.csv"))
    events = _read_csv(os.path.join(run_dir, "unit_events.csv"))

    hours = _floats(truth, "t") / 3600.0
    written = []

    # -- day view -------------------------------------------------------------
    fig, (ax_v, ax_i) = plt.subplots(2, 1, figsize=(10, 7), sharex=True)
    ax_v.plot(hours, _floats(truth, "battery_voltage"), lw=0.8, color="tab:blue",
              label="battery (plant truth)")
    ax_v.plot(hours, _floats(truth, "array_voltage"), lw=0.5, color="tab:orange",
              alpha=0.6, label="array")
    if readings["timestamp"]:
        ax_v.plot(_floats(readings, "timestamp") / 3600.0, _floats(readings, "battery_v"),
                  "o", ms=3, color="tab:red", label="stored readings")
    alarm_t = [float(t) for t, ev in zip(events["t"], events["event"])
               if ev == "alarm_call_placed"]
    if alarm_t:
        ax_v.plot(np.array(alarm_t) / 3600.0, np.full(len(alarm_t), ax_v.get_ylim()[0]),
                  "|", color="tab:red", ms=10, label="alarm calls")
    ax_v.set_ylabel("volts")
    ax_v.legend(loc="upper left", fontsize=8)
    ax_v.grid(alpha=0.3)

    ax_i.plot(hours, _floats(truth, "charge_current"), lw=0.8, color="tab:green",
              label="charge current")
    ax_i.plot(hours, _floats(truth, "load_current"), lw=0.8, color="tab:purple",
              label="load current")
    ax_i.set_xlabel("hour of run")
    ax_i.set_ylabel("amps")
    ax_i.legend(loc="upper left", fontsize=8)
    ax_i.grid(alpha=0.3)
    fig.suptitle(os.path.basename(os.path.abspath(run_dir)))
    fig.tight_layout()
    day_path = os.path.join(out_dir, "fig_day.png")
    fig.savefig(day_path, dpi=110)
    plt.close(fig)
    written.append(day_path)

    # -- telephony view ---------------------------------------------------------
    fig, ax = plt.subplots(figsize=(10, 3.5))
    if calls["id"]:
        ends = _floats(calls, "ended_at") / 3600.0
        billed = _floats(calls, "billed_minutes")
        payers = calls["from"]
        for party, color in zip(sorted(set(payers)), ("tab:blue", "tab:red", "tab:green")):
            mask = np.array([p == party for p in payers])
            order = np.argsort(ends[mask])
            ax.step(ends[mask][order], np.cumsum(billed[mask][order]), where="post",
                    color=color, label=f"billed to {party}")
    ax.set_xlabel("hour of run")
    ax.set_ylabel("cumulative billed minutes")
    ax.legend(loc="upper left", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    tel_path = os.path.join(out_dir, "fig_telephony.png")
    fig.savefig(tel_path, dpi=110)
    plt.close(fig)
    written.append(tel_path)

    return written
