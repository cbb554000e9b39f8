"""Command-line front end.

    ttnetsim run <scenario> [--seed N] [--duration T] [--out DIR]
                 [--trace PATH]
    ttnetsim experiment <fig6|fig7|sync-trace> <scenario>
                 [--sweep v1,v2,...] [--out DIR] [--seed N] [--duration T]
    ttnetsim validate <scenario>

Output files land in --out, else $TTSIM_OUT, else the working directory.
`validate` prints a JSON report and exits 0 only when the scenario loads
cleanly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .experiments import (
    experiment_fig6, experiment_fig7, experiment_sync_trace, run_single,
)
from .metrics import flow_rows, write_flow_csv, write_sync_csv
from .scenario import ScenarioError, load_scenario, parse_duration_ps


def _out_dir(arg) -> str:
    d = arg or os.environ.get("TTSIM_OUT") or "."
    os.makedirs(d, exist_ok=True)
    return d


def _load(path: str):
    try:
        return load_scenario(path)
    except ScenarioError as e:
        json.dump({"valid": False, "errors": e.errors}, sys.stdout, indent=2)
        print()
        sys.exit(2)
    except OSError as e:
        json.dump({"valid": False, "errors": [str(e)]}, sys.stdout, indent=2)
        print()
        sys.exit(2)


def cmd_run(args) -> int:
    sc = _load(args.scenario)
    duration = parse_duration_ps(args.duration) if args.duration else None
    res = run_single(sc, seed=args.seed, duration=duration,
                     trace=args.trace is not None)
    out = _out_dir(args.out)
    path = os.path.join(out, f"{sc.name}.csv")
    write_flow_csv(path, flow_rows(sc.name, "single", 0, res.summaries))
    print(path)
    if args.trace is not None:
        res.net.sim.trace.write(args.trace)
        print(args.trace)
    return 0


def cmd_experiment(args) -> int:
    sc = _load(args.scenario)
    sweep = args.sweep.split(",") if args.sweep else None
    duration = parse_duration_ps(args.duration) if args.duration else None
    out = _out_dir(args.out)
    if args.kind == "sync-trace":
        res = experiment_sync_trace(sc, seed=args.seed, duration=duration)
        path = os.path.join(out, f"{sc.name}-sync.csv")
        write_sync_csv(path, [(sc.name, t, node, err)
                              for t, node, err in res.sync_rows])
    else:
        runner = experiment_fig6 if args.kind == "fig6" else experiment_fig7
        rows, _results = runner(sc, sweep, seed=args.seed, duration=duration)
        path = os.path.join(out, f"{sc.name}-{args.kind}.csv")
        write_flow_csv(path, rows)
    print(path)
    return 0


def cmd_validate(args) -> int:
    try:
        load_scenario(args.scenario)
    except ScenarioError as e:
        json.dump({"valid": False, "errors": e.errors}, sys.stdout, indent=2)
        print()
        return 2
    except OSError as e:
        json.dump({"valid": False, "errors": [str(e)]}, sys.stdout, indent=2)
        print()
        return 2
    json.dump({"valid": True, "errors": []}, sys.stdout, indent=2)
    print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ttnetsim",
        description="deterministic TT-Ethernet + TT-CAN network simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="single simulation run")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--duration", default=None,
                     help="override, e.g. 500ms or 5s")
    run.add_argument("--out", default=None)
    run.add_argument("--trace", default=None,
                     help="also write the event trace to this path")
    run.set_defaults(fn=cmd_run)

    exp = sub.add_parser("experiment", help="parameter sweep or clock trace")
    exp.add_argument("kind", choices=("fig6", "fig7", "sync-trace"))
    exp.add_argument("scenario")
    exp.add_argument("--sweep", default=None, help="comma-separated values")
    exp.add_argument("--seed", type=int, default=None)
    exp.add_argument("--duration", default=None)
    exp.add_argument("--out", default=None)
    exp.set_defaults(fn=cmd_experiment)

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("scenario")
    val.set_defaults(fn=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
