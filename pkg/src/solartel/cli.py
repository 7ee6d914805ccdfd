"""Command line: run scenarios, list/describe them, render report figures.

`run --serve` keeps the simulation alive after the deterministic part
finishes: the world continues ticking at --speed simulated seconds per
wall second with the HTTP API live, so the operator console can watch
readings arrive, trigger billed polls and acknowledge alarms.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
import time

from . import report as report_mod
from . import scenario as scenario_mod


def _cmd_list(_args) -> int:
    for name, factory in scenario_mod.BUILTINS.items():
        print(f"{name:15s} {factory().description}")
    return 0


def _cmd_describe(args) -> int:
    try:
        sc = scenario_mod.get_scenario(args.scenario)
    except KeyError as exc:
        print(exc.args[0], file=sys.stderr)
        return 2
    print(scenario_mod.describe(sc))
    return 0


class _LiveLoop(threading.Thread):
    """Advances the world in wall-clock time after the scripted run."""

    def __init__(self, world: scenario_mod.SimWorld, lock: threading.RLock, speed: float):
        super().__init__(daemon=True)
        self.world = world
        self.lock = lock
        self.speed = speed
        self.stop_flag = False

    def run(self) -> None:
        wall_per_tick = 0.25 / self.speed
        while not self.stop_flag:
            time.sleep(wall_per_tick)
            with self.lock:
                self.world.advance()


def _cmd_run(args) -> int:
    try:
        sc = scenario_mod.get_scenario(args.scenario)
    except (KeyError, ValueError, OSError) as exc:
        print(f"bad scenario: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out or f"runs/{sc.name}"
    if not args.serve:
        summary = scenario_mod.run(sc, out_dir, seed=args.seed)
        print(json.dumps(summary, sort_keys=True, indent=2))
        print(f"artifacts in {out_dir}/", file=sys.stderr)
        return 0

    # serve mode: deterministic run first, then keep the world live
    import uvicorn

    from .api import ServerHandle, create_app

    world = scenario_mod.SimWorld(sc, out_dir, seed=args.seed)
    world.run_to_end()
    summary = world.write_artifacts()
    print(json.dumps(summary, sort_keys=True, indent=2), file=sys.stderr)

    lock = threading.RLock()
    live = _LiveLoop(world, lock, args.speed)
    handle = ServerHandle(world.server, now_fn=lambda: world.now, lock=lock)
    app = create_app(handle)
    live.start()
    print(f"simulation live at x{args.speed}; API on http://127.0.0.1:{args.port}",
          file=sys.stderr)
    try:
        uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")
    except KeyboardInterrupt:
        pass
    live.stop_flag = True
    return 0


def _cmd_report(args) -> int:
    written = report_mod.render(args.run_dir, args.out)
    for path in written:
        print(path)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="solartel")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario to completion")
    p_run.add_argument("scenario", help="built-in name or YAML scenario file")
    p_run.add_argument("--out", help="artifact directory (default runs/<name>)")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--serve", action="store_true",
                       help="keep the HTTP API live and the world ticking afterwards")
    p_run.add_argument("--port", type=int, default=8000)
    p_run.add_argument("--speed", type=float, default=30.0,
                       help="simulated seconds per wall second in serve mode")
    p_run.set_defaults(func=_cmd_run)

    p_list = sub.add_parser("list", help="list built-in scenarios")
    p_list.set_defaults(func=_cmd_list)

    p_desc = sub.add_parser("describe", help="dump a scenario's parameters")
    p_desc.add_argument("scenario")
    p_desc.set_defaults(func=_cmd_describe)

    p_rep = sub.add_parser("report", help="render figures from a run directory")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("--out", default=None, help="figure directory (default: run dir)")
    p_rep.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
