"""Command line entry points: run a mission, batch Monte Carlo, export
snapshots. Exit codes: 0 complete, 1 configuration error, 2 budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import mission


def _out_dir(args) -> str:
    return os.environ.get("FETCHPLAN_OUT", args.out or ".")


def _cmd_run(args) -> int:
    try:
        cfg = mission.ScenarioConfig.from_json(args.config)
        if args.method:
            cfg.method = args.method
            cfg.__post_init__()
        if args.seed is not None:
            cfg.seed = args.seed
    except (mission.ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return mission.EXIT_CONFIG
    log = mission.run_mission(cfg)
    out_dir = _out_dir(args)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"run_{cfg.method}_seed{cfg.seed}.jsonl")
    log.write(path)
    foot = log.footer
    print(f"method={cfg.method} seed={cfg.seed} t_f={foot['t_f']:.3f} "
          f"completed={foot['completed']} log={path}")
    return foot["exit"]


def _cmd_montecarlo(args) -> int:
    try:
        cfg = mission.ScenarioConfig.from_json(args.config)
        if args.method:
            cfg.method = args.method
            cfg.__post_init__()
    except (mission.ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return mission.EXIT_CONFIG
    summary = mission.monte_carlo(cfg, args.runs, args.seed, args.workers)
    out_dir = _out_dir(args)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"mc_{cfg.method}_seed{args.seed}_n{args.runs}.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    print(f"method={cfg.method} runs={args.runs} mean_tf={summary['mean_tf']:.3f} "
          f"completion={summary['completion_rate']:.2f} summary={path}")
    return 0 if summary["completion_rate"] == 1.0 else mission.EXIT_BUDGET


def _cmd_snapshot(args) -> int:
    try:
        log = mission.RunLog.read(args.log)
        times = [float(t) for t in args.times.split(",")]
        paths = mission.export_snapshots(log, times, _out_dir(args))
    except (ValueError, OSError) as exc:
        print(f"snapshot error: {exc}", file=sys.stderr)
        return mission.EXIT_CONFIG
    for p in paths:
        print(p)
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fetchplan",
                                 description="fetch-mission planning and simulation")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="execute one mission")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--method", choices=mission.METHODS)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out")
    p_run.set_defaults(fn=_cmd_run)

    p_mc = sub.add_parser("montecarlo", help="batch of runs over random placements")
    p_mc.add_argument("--config", required=True)
    p_mc.add_argument("--runs", type=int, required=True)
    p_mc.add_argument("--seed", type=int, required=True)
    p_mc.add_argument("--method", choices=mission.METHODS)
    p_mc.add_argument("--workers", type=int, default=1)
    p_mc.add_argument("--out")
    p_mc.set_defaults(fn=_cmd_montecarlo)

    p_sn = sub.add_parser("snapshot", help="export plot-ready snapshots from a log")
    p_sn.add_argument("--log", required=True)
    p_sn.add_argument("--times", required=True, help="comma-separated times")
    p_sn.add_argument("--out")
    p_sn.set_defaults(fn=_cmd_snapshot)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
