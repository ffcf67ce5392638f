"""Seeded control experiments: scenario generation, world stepping, sweeps.

Obstacles are discs placed uniformly in the workspace with uniformly random
headings and speeds in ``[1.2, 1.8]`` m/s.  An obstacle that leaves the box
re-enters on the antipodal side.  Every trial starts from a random point in
time, realised as a seeded burn-in of up to 10 s.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigError, ObstacleSet, ScenarioConfig, StateTime, Vec2
from .planner import StepMotion, replan_loop
from .world import WorldSnapshot, wrap_positions

SPEED_RANGE = (1.2, 1.8)
BURN_IN = 10.0
START_MARGIN = 0.2
PLANNERS = ("st", "vo", "wg")
SWEEPS = ("obstacle_count", "safe_distance", "v_max")
DEFAULT_SWEEPS = {
    "obstacle_count": [20, 40, 60, 80],
    "safe_distance": [0.2, 0.3, 0.4, 0.5],
    "v_max": [1.2, 1.5, 1.8, 2.1, 2.4],
}
CSV_COLUMNS = ["sweep_value", "planner", "success_rate", "mean_time_cost", "n_trials"]


@dataclass(frozen=True)
class ExperimentConfig:
    base: ScenarioConfig = field(default_factory=ScenarioConfig)
    planner: str = "st"
    sweep: str = "obstacle_count"
    values: tuple = (20, 40, 60, 80)
    trials: int = 30
    n_obstacles: int = 40       # used when the sweep does not set the count

    def __post_init__(self):
        if self.planner not in PLANNERS:
            raise ConfigError(f"unknown planner {self.planner!r}; expected one of {PLANNERS}")
        if self.sweep not in SWEEPS:
            raise ConfigError(f"unknown sweep {self.sweep!r}; expected one of {SWEEPS}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values or any(not v > 0 for v in self.values):
            raise ConfigError("sweep values must be positive")
        if self.n_obstacles < 0:
            raise ConfigError("n_obstacles must be >= 0")

    def point(self, value) -> tuple[ScenarioConfig, int]:
        """Scenario config and obstacle count for one sweep value."""
        if self.sweep == "obstacle_count":
            if int(value) != value:
                raise ConfigError("obstacle counts must be integers")
            return self.base, int(value)
        if self.sweep == "safe_distance":
            return self.base.replace(safe_distance=float(value)), self.n_obstacles
        return self.base.replace(v_max=Vec2(float(value), float(value))), self.n_obstacles

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {"base", "planner", "sweep", "values", "trials", "n_obstacles"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        if "base" in data:
            data["base"] = ScenarioConfig.from_dict(data["base"])
        if "values" not in data and "sweep" in data:
            data["values"] = DEFAULT_SWEEPS.get(data["sweep"], ())
        return cls(**data)


@dataclass(frozen=True)
class TrialOutcome:
    seed: int
    outcome: str
    time_cost: float
    min_clearance: float
    penetrations: int
    front_end_ms: tuple = ()
    back_end_ms: tuple = ()

    @property
    def success(self) -> bool:
        return self.outcome == "success"


@dataclass(frozen=True)
class MetricsRow:
    sweep_value: float
    planner: str
    success_rate: float
    mean_time_cost: float
    n_trials: int
    outcomes: tuple = ()


def _sample_obstacles(rng: np.random.Generator, n: int, extent: np.ndarray):
    pos = rng.uniform(0.0, 1.0, (n, 2)) * extent
    heading = rng.uniform(0.0, 2.0 * math.pi, n)
    speed = rng.uniform(*SPEED_RANGE, n)
    vel = np.column_stack([np.cos(heading), np.sin(heading)]) * speed[:, None]
    return pos, vel


def init_scenario(cfg: ScenarioConfig, n_obstacles: int, seed: int):
    """World snapshot at the (random) start time and the robot at rest at ``cfg.start``.

    After the burn-in, any obstacle closer than ``c_eff + 0.2`` to the start
    is redrawn at a fresh uniform position until none is.
    """
    if n_obstacles < 0:
        raise ValueError("n_obstacles must be >= 0")
    rng = np.random.default_rng(seed)
    extent = np.asarray(tuple(cfg.workspace_extent), dtype=float)
    pos, vel = _sample_obstacles(rng, n_obstacles, extent)
    burn = rng.uniform(0.0, BURN_IN)
    for _ in range(int(round(burn / cfg.dt))):
        pos = wrap_positions(pos + vel * cfg.dt, extent)
    start = np.asarray(tuple(cfg.start), dtype=float)
    keep_out = cfg.c_eff + START_MARGIN
    for _ in range(10_000):
        bad = np.hypot(*(pos - start).T) < keep_out
        if not bad.any():
            break
        pos[bad] = rng.uniform(0.0, 1.0, (int(bad.sum()), 2)) * extent
    else:  # pragma: no cover - only reachable with absurd densities
        raise RuntimeError("could not clear the start region")
    obstacles = ObstacleSet.from_arrays(pos, vel, cfg.safe_distance)
    world = WorldSnapshot(obstacles, 0.0, cfg.workspace_extent)
    robot = StateTime(Vec2.of(cfg.start), Vec2(0.0, 0.0), 0.0)
    return world, robot


def step_world(world: WorldSnapshot, dt: float) -> WorldSnapshot:
    """Advance every obstacle by ``v * dt`` and wrap those that left the box."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    obs = world.obstacles
    if dt == 0 or len(obs) == 0:
        return WorldSnapshot(obs, world.t_now + dt, world.workspace_extent)
    pos = wrap_positions(obs.positions + obs.velocities * dt, world.workspace_extent)
    moved = ObstacleSet.from_arrays(pos, obs.velocities, obs.radius, ids=obs.ids)
    return WorldSnapshot(moved, world.t_now + dt, world.workspace_extent)


class SimWorld:
    """Simulator handle for :func:`replan_loop`."""

    def __init__(self, world: WorldSnapshot, robot: StateTime, goal):
        self.world = world
        self.robot = robot
        self.goal = Vec2.of(goal)

    def snapshot(self) -> WorldSnapshot:
        return self.world

    def advance(self, dt: float) -> StepMotion:
        obs = self.world.obstacles
        before = np.array(obs.positions)
        after = before + obs.velocities * dt
        self.world = step_world(self.world, dt)
        return StepMotion(before, after)


def run_trial(cfg: ScenarioConfig, planner: str, n_obstacles: int, seed: int,
              keep_trace: bool = False):
    world, robot = init_scenario(cfg, n_obstacles, seed)
    trace = replan_loop(SimWorld(world, robot, cfg.goal), cfg, planner)
    outcome = TrialOutcome(seed, trace.outcome, trace.time_cost, trace.min_clearance,
                           trace.penetrations, tuple(trace.front_end_ms), tuple(trace.back_end_ms))
    return (outcome, trace) if keep_trace else outcome


def _run_trial_args(args):
    return run_trial(*args)


def aggregate(value, planner: str, outcomes, timeout: float) -> MetricsRow:
    n = len(outcomes)
    succ = sum(o.success for o in outcomes)
    # failures count as the full timeout whatever their recorded time
    costs = [o.time_cost if o.success else timeout for o in outcomes]
    return MetricsRow(value, planner, succ / n, math.fsum(costs) / n, n, tuple(outcomes))


def run_experiment(exp: ExperimentConfig, workers: int = 1, trace_dir=None,
                   include_timings: bool = True) -> list[MetricsRow]:
    """One row per sweep value; trial ``i`` uses seed ``base.rng_seed + i``.

    ``workers > 1`` spreads trials over processes; results do not depend on it.
    With ``trace_dir`` every trial's execution trace is written as JSON lines,
    with or without the wall-clock timings.
    """
    rows = []
    for value in exp.values:
        cfg, n_obs = exp.point(value)
        seeds = [cfg.rng_seed + i for i in range(exp.trials)]
        jobs = [(cfg, exp.planner, n_obs, s, trace_dir is not None) for s in seeds]
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                results = list(pool.map(_run_trial_args, jobs))
        else:
            results = [_run_trial_args(j) for j in jobs]
        if trace_dir is not None:
            out = Path(trace_dir)
            out.mkdir(parents=True, exist_ok=True)
            for (o, trace) in results:
                name = f"trace_{exp.planner}_{exp.sweep}_{value}_seed{o.seed}.jsonl"
                (out / name).write_text(trace.to_jsonl(include_timings))
            results = [o for o, _ in results]
        rows.append(aggregate(value, exp.planner, results, cfg.timeout))
    return rows


def metrics_csv(rows, extra: dict | None = None) -> str:
    """CSV text with fixed formatting so reruns are byte-identical."""
    buf = io.StringIO()
    cols = list(extra) + CSV_COLUMNS if extra else CSV_COLUMNS
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        vals = [f"{r.sweep_value:g}", r.planner, f"{r.success_rate:.6f}",
                f"{r.mean_time_cost:.6f}", str(r.n_trials)]
        w.writerow(list(extra.values()) + vals if extra else vals)
    return buf.getvalue()


def median_timings(rows) -> tuple[float, float]:
    fe = [t for r in rows for o in r.outcomes for t in o.front_end_ms]
    be = [t for r in rows for o in r.outcomes for t in o.back_end_ms]
    return (statistics.median(fe) if fe else math.nan, statistics.median(be) if be else math.nan)
