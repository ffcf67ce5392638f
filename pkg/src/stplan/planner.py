"""Planners and the receding-horizon execution loop.

``plan_st`` chains the state-time A* front end, densification onto the
``dt`` grid and the MAP back end.  ``plan_wg`` (wait-and-go) and
``plan_vo`` (velocity obstacle) are reactive baselines that return a
single velocity command.  ``replan_loop`` drives any of them against a
simulator handle and audits every executed step at ``dt / 10``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from .core import (ObstacleSet, ScenarioConfig, StateTime, Trajectory, Vec2, clamp_velocity,
                   max_speed_along)
from .map_optimizer import FactorGraph, SolveReport, SolverFailure, optimize
from .st_graph import Expander, InadmissibleStartError, SearchParams, StPath, state_time_astar
from .timed_esdf import build as build_esdf, vo_mask
from .world import WorldSnapshot, extrapolate, segment_min_distance

GOAL_TOLERANCE = 0.2
WG_LOOKAHEAD_STEPS = 10
VO_HORIZON = 2.0

_EMPTY = ObstacleSet((), 1.0)


@dataclass
class PlanResult:
    trajectory: Trajectory
    complete: bool
    front_end_ms: float
    back_end_ms: float
    report: SolveReport
    path: Optional[StPath] = None
    fallback: bool = False      # True when the unoptimised initialisation was kept


def densify(path: StPath, dt: float, hold: float = 1.0) -> Trajectory:
    """Sample a piecewise constant-velocity path onto the ``dt`` grid.

    Each waypoint carries the velocity of the segment leaving it and the
    last one keeps its arrival velocity, so a single straight move densifies
    to the prior mean exactly.  A path with a single node becomes a wait of
    ``hold`` seconds, which leaves the back end free waypoints to dodge with.
    """
    nodes = path.nodes
    t0 = nodes[0].state.t
    if len(nodes) == 1:
        p = tuple(nodes[0].state.p)
        n = max(2, int(round(hold / dt)) + 1)
        return Trajectory([[p[0], p[1], 0.0, 0.0]] * n, t0, dt)
    rows = []
    for a, b in zip(nodes[:-1], nodes[1:]):
        k = int(round((b.state.t - a.state.t) / dt))
        pa = np.array(tuple(a.state.p))
        pb = np.array(tuple(b.state.p))
        v = (pb - pa) / (k * dt)
        for j in range(k):
            p = pa + v * (j * dt)
            rows.append([p[0], p[1], v[0], v[1]])
    last = nodes[-1].state
    rows.append([last.p.x, last.p.y, rows[-1][2], rows[-1][3]])
    return Trajectory(rows, t0, dt)


def trajectory_clearance(traj: Trajectory, world: WorldSnapshot, substeps: int = 10) -> float:
    """Smallest obstacle-centre distance along straight moves between waypoints,
    sampled every ``dt / substeps``, against constant-velocity extrapolation."""
    obs = world.obstacles
    if len(obs) == 0:
        return math.inf
    P = traj.states[:, :2]
    step = traj.dt / substeps
    starts = np.stack([extrapolate(world, t) for t in traj.times[:-1]])      # (N-1, M, 2)
    u = (P[1:] - P[:-1]) / traj.dt                                            # (N-1, 2)
    rel_p = P[:-1, None, :] - starts
    rel_v = u[:, None, :] - obs.velocities[None, :, :]
    return float(segment_min_distance(rel_p, rel_v, traj.dt, step).min())


def plan_st(snapshot: WorldSnapshot, start: StateTime, goal, cfg: ScenarioConfig,
            params: SearchParams | None = None, max_iters: int = 50) -> PlanResult:
    """Front end, densify, then MAP refinement on the Timed-ESDF.

    Falls back to the densified front-end path when the optimiser fails or
    when its result cuts closer than ``c_eff`` where the initialisation
    does not.
    """
    goal = Vec2.of(goal)
    t_a = time.perf_counter()
    path = state_time_astar(start, goal, cfg.horizon, snapshot, cfg, params)
    t_b = time.perf_counter()
    prm = params or SearchParams()
    init = densify(path, cfg.dt, prm.t_max)
    span = max(init.t_final - init.t0, cfg.dt)
    field_ = build_esdf(snapshot, init.t0, span, cfg.dt, cfg.c_eff, cfg.epsilon)
    graph = FactorGraph(len(init), field_)
    fallback = False
    try:
        traj, report = optimize(init, graph, max_iters=max_iters)
    except SolverFailure as exc:
        traj, report, fallback = init, exc.report, True
    if not fallback and len(snapshot.obstacles):
        c = cfg.c_eff
        if trajectory_clearance(traj, snapshot) <= c < trajectory_clearance(init, snapshot):
            traj, fallback = init, True
    t_c = time.perf_counter()
    return PlanResult(traj, path.complete, (t_b - t_a) * 1e3, (t_c - t_b) * 1e3, report,
                      path, fallback)


def plan_wg(snapshot: WorldSnapshot, start: StateTime, goal, cfg: ScenarioConfig) -> Vec2:
    """Go straight for the goal at full speed unless the next second is blocked."""
    p = np.array(tuple(start.p))
    rel = np.asarray(tuple(goal), dtype=float) - p
    dist = float(np.hypot(*rel))
    if dist == 0.0:
        return Vec2(0.0, 0.0)
    speed = min(max_speed_along(rel, tuple(cfg.v_max)), dist / cfg.dt)
    v = rel / dist * speed
    obs = snapshot.obstacles
    if len(obs):
        horizon = WG_LOOKAHEAD_STEPS * cfg.dt
        rel_p = p[None, :] - extrapolate(snapshot, start.t)
        rel_v = v[None, :] - obs.velocities
        d = segment_min_distance(rel_p, rel_v, horizon, cfg.dt / 10.0)
        if d.min() <= cfg.c_eff:
            return Vec2(0.0, 0.0)
    return Vec2(float(v[0]), float(v[1]))


def vo_candidates(start: StateTime, goal, cfg: ScenarioConfig,
                  params: SearchParams | None = None) -> np.ndarray:
    """The placement velocity grid around the goal direction plus standing still."""
    world = WorldSnapshot(_EMPTY, start.t, cfg.workspace_extent)
    ex = Expander(world, goal, cfg, params)
    return np.vstack([ex.velocity_candidates(tuple(start.p)), np.zeros((1, 2))])


def plan_vo(snapshot: WorldSnapshot, start: StateTime, goal, cfg: ScenarioConfig,
            params: SearchParams | None = None) -> Vec2:
    """Fastest goalward velocity outside every truncated velocity obstacle."""
    cand = vo_candidates(start, goal, cfg, params)
    p = np.array(tuple(start.p))
    obs = snapshot.obstacles
    if len(obs):
        blocked = vo_mask(cand, p, extrapolate(snapshot, start.t), obs.velocities,
                          cfg.c_eff, VO_HORIZON)
    else:
        blocked = np.zeros(len(cand), dtype=bool)
    if blocked.all():
        return Vec2(0.0, 0.0)
    rel = np.asarray(tuple(goal), dtype=float) - p
    n = float(np.hypot(*rel))
    unit = rel / n if n > 0 else np.zeros(2)
    score = np.where(blocked, -np.inf, cand @ unit)
    v = cand[int(np.argmax(score))]
    return Vec2(float(v[0]), float(v[1]))


# -- execution --------------------------------------------------------------

@dataclass(frozen=True)
class StepMotion:
    """Obstacle centres at the start and end of one tick, before any wraparound."""

    before: np.ndarray
    after: np.ndarray


class SimHandle(Protocol):
    robot: StateTime
    goal: Vec2

    def snapshot(self) -> WorldSnapshot: ...

    def advance(self, dt: float) -> StepMotion: ...


@dataclass
class ExecutionTrace:
    outcome: str = "running"            # success | collision | timeout | error
    time_cost: float = math.nan
    t_end: float = math.nan
    records: list[dict] = field(default_factory=list)
    front_end_ms: list[float] = field(default_factory=list)
    back_end_ms: list[float] = field(default_factory=list)
    min_clearance: float = math.inf
    penetrations: int = 0
    message: str = ""

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    def to_jsonl(self, include_timings: bool = True) -> str:
        """One JSON object per tick followed by a summary line.

        Wall-clock timings are the only non-deterministic fields; leave
        them out to compare traces byte for byte.
        """
        lines = []
        for rec in self.records:
            rec = dict(rec)
            if not include_timings:
                rec.pop("timings", None)
            lines.append(json.dumps(rec, sort_keys=True))
        lines.append(json.dumps({
            "summary": {"outcome": self.outcome, "time_cost": self.time_cost, "t_end": self.t_end,
                        "min_clearance": _finite_or_none(self.min_clearance),
                        "penetrations": self.penetrations, "message": self.message}},
            sort_keys=True))
        return "\n".join(lines) + "\n"


_PLANNERS = ("st", "wg", "vo")


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def audit_step(p0, u, dt: float, motion: StepMotion, c_eff: float, substeps: int = 10) -> float:
    """Closest approach during one executed tick, sampled at ``dt / substeps``.

    The robot moves from ``p0`` at velocity ``u``; obstacles move straight
    from ``motion.before`` to ``motion.after``.
    """
    if len(motion.before) == 0:
        return math.inf
    p0 = np.asarray(p0, dtype=float)
    rel_p = p0[None, :] - motion.before
    rel_v = np.asarray(u, dtype=float)[None, :] - (motion.after - motion.before) / dt
    return float(segment_min_distance(rel_p, rel_v, dt, dt / substeps).min())


def _command(planner, snapshot, state, goal, cfg) -> tuple[Vec2, dict, dict]:
    if planner == "st":
        res = plan_st(snapshot, state, goal, cfg)
        traj = res.trajectory
        step = (traj.states[1, :2] - traj.states[0, :2]) / cfg.dt
        cmd = clamp_velocity(step, tuple(cfg.v_max))
        summary = {"complete": res.complete, "n_waypoints": len(traj),
                   "t_final": traj.t_final, "iterations": res.report.iterations,
                   "fallback": res.fallback}
        return cmd, summary, {"front_end_ms": res.front_end_ms, "back_end_ms": res.back_end_ms}
    if planner == "wg":
        return plan_wg(snapshot, state, goal, cfg), {}, {}
    if planner == "vo":
        return plan_vo(snapshot, state, goal, cfg), {}, {}
    if callable(planner):
        return clamp_velocity(planner(snapshot, state, goal, cfg), tuple(cfg.v_max)), {}, {}
    raise ValueError(f"unknown planner {planner!r}; expected one of {_PLANNERS}")


def replan_loop(sim_handle: SimHandle, cfg: ScenarioConfig,
                planner: str | Callable = "st") -> ExecutionTrace:
    """Plan, execute one ``dt``, advance the world; repeat until done.

    Ends on reaching within ``GOAL_TOLERANCE`` of the goal (success), on an
    audited penetration below ``c_eff`` (collision), on ``cfg.timeout``
    (timeout) or on a planner exception (error).  Every failure records
    the timeout as its time cost.
    """
    trace = ExecutionTrace()
    dt, c_eff = cfg.dt, cfg.c_eff
    extent = np.asarray(tuple(cfg.workspace_extent), dtype=float)
    state = sim_handle.robot
    goal = Vec2.of(sim_handle.goal)
    t_start = state.t
    n_max = int(math.ceil(cfg.timeout / dt - 1e-9))

    def finish(outcome: str, t: float, message: str = "") -> ExecutionTrace:
        trace.outcome = outcome
        trace.t_end = t - t_start
        trace.time_cost = trace.t_end if outcome == "success" else cfg.timeout
        trace.message = message
        return trace

    for tick in range(n_max):
        if math.hypot(goal.x - state.p.x, goal.y - state.p.y) <= GOAL_TOLERANCE:
            return finish("success", state.t)
        snap = sim_handle.snapshot()
        try:
            cmd, summary, timings = _command(planner, snap, state, goal, cfg)
        except InadmissibleStartError as exc:
            return finish("collision", state.t, str(exc))
        except Exception as exc:  # a failing planner ends the trial, not the run
            return finish("error", state.t, f"{type(exc).__name__}: {exc}")
        u = np.array(tuple(cmd))
        p0 = np.array(tuple(state.p))
        p1 = np.clip(p0 + u * dt, 0.0, extent)
        u = (p1 - p0) / dt
        motion = sim_handle.advance(dt)
        clearance = audit_step(p0, u, dt, motion, c_eff)
        trace.min_clearance = min(trace.min_clearance, clearance)
        if "front_end_ms" in timings:
            trace.front_end_ms.append(timings["front_end_ms"])
            trace.back_end_ms.append(timings["back_end_ms"])
        trace.records.append({
            "tick": tick, "t": state.t, "p": [state.p.x, state.p.y], "v": [state.v.x, state.v.y],
            "command": [float(u[0]), float(u[1])], "clearance": _finite_or_none(clearance),
            "plan": summary, "timings": timings,
        })
        state = StateTime(Vec2(float(p1[0]), float(p1[1])), Vec2(float(u[0]), float(u[1])),
                          t_start + (tick + 1) * dt)
        sim_handle.robot = state
        if clearance < c_eff:
            trace.penetrations += 1
            return finish("collision", state.t, f"clearance {clearance:.4f} < {c_eff}")
    if math.hypot(goal.x - state.p.x, goal.y - state.p.y) <= GOAL_TOLERANCE:
        return finish("success", state.t)
    return finish("timeout", state.t)
