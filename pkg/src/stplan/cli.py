"""Command line: ``stplan {plan,sim,bench,render-esdf}``.

Exit codes: 0 on success (for ``plan``: a complete path), 2 when ``plan``
only finds a partial path, 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .core import ConfigError, ObstacleSet, ScenarioConfig, StateTime, Vec2
from .dataset_replay import (ParseError, ReplayWorld, bench_config, interpolate_10hz, load,
                             replay_start_times)
from .planner import plan_st, replan_loop
from .render import render_esdf, render_plan
from .sim_harness import (PLANNERS, ExperimentConfig, TrialOutcome, aggregate, init_scenario,
                          median_timings, metrics_csv, run_experiment)
from .timed_esdf import build as build_esdf, export_slice_csv
from .world import WorldSnapshot

SCENARIO_KEYS = {f.name for f in fields(ScenarioConfig)}
PLAN_KEYS = {"n_obstacles", "obstacles"}


class CliError(Exception):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        out[key.strip()] = _parse_value(val)
    return out


def _read_json(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"invalid JSON in {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError(f"{p}: config must be a JSON object")
    return data


def _planners(arg, default) -> list[str]:
    names = [s.strip() for s in (arg or default).split(",") if s.strip()]
    for n in names:
        if n not in PLANNERS:
            raise CliError(f"unknown planner {n!r}; expected one of {', '.join(PLANNERS)}")
    return names


def _scenario(data: dict, args) -> ScenarioConfig:
    data = dict(data)
    if args.seed is not None:
        data["rng_seed"] = args.seed
    return ScenarioConfig.from_dict(data)


def _plan_world(data: dict, cfg: ScenarioConfig):
    """Seeded random scene, or the explicit ``obstacles`` list when given."""
    if "obstacles" in data:
        obs = data["obstacles"]
        pos = np.array([o["p"] for o in obs], dtype=float).reshape(-1, 2)
        vel = np.array([o.get("v", [0.0, 0.0]) for o in obs], dtype=float).reshape(-1, 2)
        world = WorldSnapshot(ObstacleSet.from_arrays(pos, vel, cfg.safe_distance), 0.0,
                              cfg.workspace_extent)
        return world, StateTime(Vec2.of(cfg.start), Vec2(0.0, 0.0), 0.0)
    n = int(data.get("n_obstacles", 40))
    return init_scenario(cfg, n, cfg.rng_seed)


def cmd_plan(args) -> int:
    raw = _read_json(args.config)
    raw.update(_overrides(args.set))
    extra = {k: raw.pop(k) for k in list(raw) if k in PLAN_KEYS}
    cfg = _scenario(raw, args)
    world, robot = _plan_world(extra, cfg)
    res = plan_st(world, robot, cfg.goal, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectory.json").write_text(json.dumps(res.trajectory.to_json(), indent=2) + "\n")
    report = json.loads(res.report.to_json())
    report["complete"] = res.complete
    report["fallback"] = res.fallback
    if not args.deterministic:
        report["front_end_ms"] = res.front_end_ms
        report["back_end_ms"] = res.back_end_ms
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    render_plan(out / "plan.svg", world, res.trajectory, tuple(cfg.goal), cfg.c_eff,
                deterministic=args.deterministic)
    print(f"plan: {'complete' if res.complete else 'partial'}, {len(res.trajectory)} waypoints, "
          f"arrival t = {res.trajectory.t_final:.2f} s")
    return 0 if res.complete else 2


def _experiment(args) -> ExperimentConfig:
    raw = _read_json(args.config)
    for key, val in _overrides(args.set).items():
        if key in SCENARIO_KEYS:
            raw.setdefault("base", {})[key] = val
        else:
            raw[key] = val
    if args.seed is not None:
        raw.setdefault("base", {})["rng_seed"] = args.seed
    if args.trials is not None:
        raw["trials"] = args.trials
    raw.pop("planners", None)
    try:
        return ExperimentConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_sim(args) -> int:
    raw = _read_json(args.config)
    exp = _experiment(args)
    planners = _planners(args.planner, ",".join(raw.get("planners", [exp.planner])))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in planners:
        e = ExperimentConfig(exp.base, name, exp.sweep, exp.values, exp.trials, exp.n_obstacles)
        trace_dir = out / "traces" if args.traces else None
        rows.extend(run_experiment(e, workers=args.workers, trace_dir=trace_dir,
                                   include_timings=not args.deterministic))
    (out / "metrics.csv").write_text(metrics_csv(rows))
    _write_trials(out / "trials.jsonl", rows)
    if not args.deterministic:
        _write_timings(out / "timings.json", rows)
    for r in rows:
        print(f"{r.planner} {exp.sweep}={r.sweep_value:g}: success {r.success_rate:.3f}, "
              f"mean time {r.mean_time_cost:.3f} s over {r.n_trials} trials")
    return 0


def _write_trials(path: Path, rows, extra: dict | None = None) -> None:
    lines = []
    for r in rows:
        for o in r.outcomes:
            rec = dict(extra or {})
            rec.update({"sweep_value": r.sweep_value, "planner": r.planner, "seed": o.seed,
                        "outcome": o.outcome, "time_cost": o.time_cost,
                        "min_clearance": o.min_clearance if np.isfinite(o.min_clearance) else None,
                        "penetrations": o.penetrations})
            lines.append(json.dumps(rec, sort_keys=True))
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def _write_timings(path: Path, rows) -> None:
    fe, be = median_timings(rows)
    path.write_text(json.dumps({"median_front_end_ms": fe, "median_back_end_ms": be},
                               indent=2) + "\n")


def cmd_bench(args) -> int:
    try:
        tracks = load(args.sequence)
    except (ParseError, OSError) as exc:
        raise CliError(f"cannot read sequence: {exc}") from exc
    seq = interpolate_10hz(tracks)
    raw = _read_json(args.config)
    raw.update(_overrides(args.set))
    base = _scenario(raw, args)
    cfg = bench_config(seq, base)
    trials = args.trials if args.trials is not None else 30
    planners = _planners(args.planner, "st")
    starts = replay_start_times(seq, trials, cfg.rng_seed, min_remaining=cfg.timeout)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in planners:
        outcomes = []
        for i, t0 in enumerate(starts):
            tr = replan_loop(ReplayWorld(seq, cfg, t0), cfg, name)
            outcomes.append(TrialOutcome(i, tr.outcome, tr.time_cost, tr.min_clearance,
                                         tr.penetrations, tuple(tr.front_end_ms),
                                         tuple(tr.back_end_ms)))
        rows.append(aggregate(0, name, outcomes, cfg.timeout))
    label = {"sequence": Path(args.sequence).stem}
    (out / "metrics.csv").write_text(metrics_csv(rows, label))
    _write_trials(out / "trials.jsonl", rows, label)
    if not args.deterministic:
        _write_timings(out / "timings.json", rows)
    for r in rows:
        print(f"{r.planner} on {label['sequence']}: success {r.success_rate:.3f}, "
              f"mean time {r.mean_time_cost:.3f} s over {r.n_trials} trials")
    return 0


def cmd_render_esdf(args) -> int:
    raw = _read_json(args.config)
    raw.update(_overrides(args.set))
    extra = {k: raw.pop(k) for k in list(raw) if k in PLAN_KEYS}
    cfg = _scenario(raw, args)
    world, _ = _plan_world(extra, cfg)
    n = max(args.slice + 1, 1)
    field = build_esdf(world, world.t_now, n * cfg.dt, cfg.dt, cfg.c_eff, cfg.epsilon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = tuple(cfg.workspace_extent)
    export_slice_csv(field, args.slice, out / f"esdf_slice{args.slice}.csv", args.resolution, ext)
    render_esdf(out / f"esdf_slice{args.slice}.svg", field, args.slice, ext, args.resolution,
                deterministic=args.deterministic)
    print(f"wrote slice {args.slice} to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory")
    common.add_argument("--seed", type=int, help="base RNG seed")
    common.add_argument("--trials", type=int, help="trials per sweep point")
    common.add_argument("--planner", help="st, vo or wg; comma-separate several for sim/bench")
    common.add_argument("--deterministic", action="store_true",
                        help="leave wall-clock timings and SVG dates out of every output")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value (JSON-parsed); repeatable")

    p = argparse.ArgumentParser(prog="stplan", description="State-time trajectory planning.")
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("plan", parents=[common], help="plan once on a seeded scenario")
    sp.set_defaults(func=cmd_plan)
    ss = sub.add_parser("sim", parents=[common], help="run a parameter sweep")
    ss.add_argument("--workers", type=int, default=1, help="worker processes")
    ss.add_argument("--traces", action="store_true", help="write per-trial JSON-lines traces")
    ss.set_defaults(func=cmd_sim)
    sb = sub.add_parser("bench", parents=[common], help="planner-in-the-loop on a replay file")
    sb.add_argument("sequence", help="trajectory file: frame_id agent_id x y rows")
    sb.set_defaults(func=cmd_bench)
    sr = sub.add_parser("render-esdf", parents=[common], help="render one Timed-ESDF slice")
    sr.add_argument("--slice", type=int, default=0, help="slice index")
    sr.add_argument("--resolution", type=float, default=0.1, help="grid step in metres")
    sr.set_defaults(func=cmd_render_esdf)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.trials is not None and args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (CliError, ConfigError, ParseError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
