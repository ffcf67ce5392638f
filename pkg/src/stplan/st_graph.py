"""Front end: timed triangle graph, node placement and state-time A*.

Time is sliced at ``dt``.  Slice ``k`` triangulates the obstacle centres
extrapolated to ``t0 + k*dt`` together with the four workspace corners.
Expanding a node means: find its triangle in its own slice, and for that
triangle and each edge neighbour place one successor by scoring a grid of
constant-velocity moves (headings x speeds x durations) that stay clear of
every obstacle and end inside the same three vertices at arrival time.

Triangles are identified across slices by the labels of their vertices
(obstacle ids, negative labels for corners), so a dual-graph node is keyed
by ``(slice index, vertex-label triple)``.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ScenarioConfig, StateTime, Vec2, max_speed_along
from .triangulation import Triangulation, delaunay, locate, neighbors
from .world import (WorldSnapshot, extrapolate, min_clearance, min_sq_distance,
                    segment_min_distance)

GOAL_KEY = ("goal",)


class InadmissibleStartError(ValueError):
    pass


@dataclass(frozen=True)
class SearchParams:
    """Discretisation of the node-placement problem."""

    n_headings: int = 16
    speed_fractions: tuple[float, ...] = (0.5, 1.0)
    n_times: int = 10
    t_max: float = 1.0
    alpha: float = 1.0          # metres per unit of goal alignment in the placement score
    substeps: int = 10          # forward-simulation samples per dt
    triangulation: str = "qhull"

    @property
    def n_velocities(self) -> int:
        return self.n_headings * len(self.speed_fractions)


@dataclass(frozen=True)
class SliceGraph:
    t_index: int
    t: float
    tri: Triangulation


@dataclass
class DualNode:
    state: StateTime
    triangle: int
    g_cost: float
    h_cost: float
    parent: Optional["DualNode"] = None
    key: tuple = ()
    t_index: int = 0


@dataclass
class StPath:
    nodes: list[DualNode]
    complete: bool
    expanded: int = 0

    @property
    def states(self) -> list[StateTime]:
        return [n.state for n in self.nodes]

    @property
    def cost(self) -> float:
        return self.nodes[-1].g_cost


def build_slice(world: WorldSnapshot, t_index: int, dt: float = 0.1,
                method: str = "qhull", t0: float | None = None) -> SliceGraph:
    if t_index < 0:
        raise ValueError("t_index must be >= 0")
    base = world.t_now if t0 is None else t0
    t = base + t_index * dt
    pts = extrapolate(world, t)
    tri = delaunay(pts, extent=world.workspace_extent, labels=world.obstacles.ids, method=method)
    return SliceGraph(t_index, t, tri)


def navi_cost_from_clearance(d: float, d_obs, d0: float):
    """Segment length ``d`` inflated when the closest approach ``d_obs`` is within ``d0``."""
    d_obs = np.asarray(d_obs, dtype=float)
    out = np.where(d_obs > d0, d, d * (2.0 - d_obs / d0))
    return float(out) if out.ndim == 0 else out


def navi_cost(a: StateTime, b: StateTime, world: WorldSnapshot, C_s: float,
              step: float | None = None) -> float:
    """Edge cost of moving from ``a`` to ``b`` at constant velocity.

    ``d_obs`` is the smallest centre distance to any obstacle sampled every
    ``step`` seconds along the move (continuous minimum when ``step`` is None).
    The cost never drops below the segment length.
    """
    duration = b.t - a.t
    if not duration > 0:
        raise ValueError("navi_cost needs b.t > a.t")
    d = math.hypot(b.p.x - a.p.x, b.p.y - a.p.y)
    if len(world.obstacles) == 0:
        return d
    v = np.array([(b.p.x - a.p.x) / duration, (b.p.y - a.p.y) / duration])
    rel_p = np.asarray(tuple(a.p)) - extrapolate(world, a.t)
    rel_v = v[None, :] - world.obstacles.velocities
    d_obs = float(segment_min_distance(rel_p, rel_v, duration, step).min())
    return navi_cost_from_clearance(d, d_obs, 2.0 * C_s)


def _points_in_triangles(pts: np.ndarray, tri: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """``pts`` (..., Q, 2) against one triangle per Q entry ``tri`` (..., Q, 3, 2).

    Orientation-agnostic closed test; degenerate triangles contain nothing.
    """
    a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    area = (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
    sgn = np.sign(area)
    inside = np.abs(area) > 1e-14
    for u, w in ((a, b), (b, c), (c, a)):
        cross = ((w[..., 0] - u[..., 0]) * (pts[..., 1] - u[..., 1])
                 - (w[..., 1] - u[..., 1]) * (pts[..., 0] - u[..., 0]))
        scale = np.maximum(np.hypot(w[..., 0] - u[..., 0], w[..., 1] - u[..., 1]), 1.0)
        inside = inside & (cross * sgn >= -tol * scale)
    return inside


class Expander:
    """Successor generation shared by the A* search and by exhaustive checks.

    Holds the world, configuration and a per-search cache of slice
    triangulations.  ``t0`` is the time of slice 0.
    """

    def __init__(self, world: WorldSnapshot, goal, cfg: ScenarioConfig,
                 params: SearchParams | None = None, origin=None, t0: float | None = None):
        self.world = world
        self.goal = np.asarray(tuple(goal), dtype=float)
        self.cfg = cfg
        self.params = params or SearchParams()
        self.t0 = world.t_now if t0 is None else float(t0)
        self.dt = cfg.dt
        self.step = cfg.dt / self.params.substeps
        self.origin = None if origin is None else np.asarray(tuple(origin), dtype=float)
        self._slices: dict[int, SliceGraph] = {}
        obs = world.obstacles
        self._label_index = {int(i): k for k, i in enumerate(obs.ids)}
        self.extent = np.asarray(tuple(world.workspace_extent), dtype=float)
        self._corners = {-1: (0.0, 0.0), -2: (self.extent[0], 0.0),
                         -3: (self.extent[0], self.extent[1]), -4: (0.0, self.extent[1])}
        p = self.params
        self.t_candidates = p.t_max * np.arange(1, p.n_times + 1) / p.n_times
        self.k_offsets = np.rint(self.t_candidates / self.dt).astype(int)
        self._vmax = np.asarray(tuple(cfg.v_max), dtype=float)
        self._robot_reach = float(np.hypot(*tuple(cfg.v_max)))
        self._relevant = max(cfg.c_eff, 2.0 * cfg.safe_distance)

    # -- slices -------------------------------------------------------------
    def slice(self, k: int) -> SliceGraph:
        sg = self._slices.get(k)
        if sg is None:
            sg = build_slice(self.world, k, self.dt, self.params.triangulation, t0=self.t0)
            self._slices[k] = sg
        return sg

    def time_of(self, k: int) -> float:
        return self.t0 + k * self.dt

    def slice_of(self, t: float) -> int:
        return int(round((t - self.t0) / self.dt))

    def label_positions(self, labels, t) -> np.ndarray:
        """Positions of labelled vertices at the times ``t`` -> (len(t), len(labels), 2)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        labels = np.asarray(labels, dtype=int)
        obs = self.world.obstacles
        idx = np.array([self._label_index[int(lab)] if lab >= 0 else 0 for lab in labels], dtype=int)
        dt = (t - self.world.t_now)[:, None, None]
        out = obs.positions[idx][None] + obs.velocities[idx][None] * dt if len(obs) \
            else np.zeros((len(t), len(labels), 2))
        for j in np.flatnonzero(labels < 0):
            out[:, j] = self._corners[int(labels[j])]
        return out

    # -- candidate moves ----------------------------------------------------
    def velocity_candidates(self, p) -> np.ndarray:
        """Heading fan anchored on the goal direction, times the speed fractions."""
        prm = self.params
        rel = self.goal - np.asarray(p, dtype=float)
        base = math.atan2(rel[1], rel[0]) if np.any(rel != 0.0) else 0.0
        ang = base + 2.0 * math.pi * np.arange(prm.n_headings) / prm.n_headings
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
        ad = np.abs(dirs)
        with np.errstate(divide="ignore"):
            lim = np.where(ad > 1e-15, self._vmax / np.where(ad > 1e-15, ad, 1.0), np.inf)
        smax = lim.min(axis=1)
        frac = np.asarray(prm.speed_fractions, dtype=float)
        # heading-major order: all speeds of heading 0, then heading 1, ...
        full = dirs * smax[:, None]
        return (full[:, None, :] * frac[None, :, None]).reshape(-1, 2)

    def candidate_table(self, state: StateTime):
        """Feasibility, score, end points and closest approach for every move.

        Arrays are indexed ``[velocity, time]``; the workspace, speed,
        progress and clearance constraints are folded into ``feasible``.
        """
        p = np.array(tuple(state.p))
        vel = self.velocity_candidates(p)
        ts = self.t_candidates
        ends = p[None, None, :] + vel[:, None, :] * ts[None, :, None]
        inside_ws = np.all((ends > 0.0) & (ends < self.extent), axis=2)
        origin = p if self.origin is None else self.origin
        sg = self.goal - origin
        progress = vel @ sg > 0.0
        feasible = inside_ws & progress[:, None]
        obs = self.world.obstacles
        c_eff = self.cfg.c_eff
        d_obs = np.full((len(vel), len(ts)), np.inf)
        if len(obs):
            rel_p = p[None, :] - extrapolate(self.world, state.t)            # (M, 2)
            # obstacles that stay beyond both the clearance radius and the
            # cost threshold for every move cannot affect the table
            reach = (self._robot_reach + np.linalg.norm(obs.velocities, axis=1)) * ts[-1]
            near = np.hypot(rel_p[:, 0], rel_p[:, 1]) - reach <= self._relevant + 1e-9
            if near.any():
                rp = rel_p[near]
                rv = vel[:, None, :] - obs.velocities[near][None, :, :]      # (V, m, 2)
                pp = np.einsum("mi,mi->m", rp, rp)[None, :, None]
                pv = np.einsum("mi,vmi->vm", rp, rv)[:, :, None]
                vv = np.einsum("vmi,vmi->vm", rv, rv)[:, :, None]
                sq = min_sq_distance(pp, pv, vv, ts[None, None, :], self.step)  # (V, m, Q)
                d_obs = np.sqrt(np.maximum(sq.min(axis=1), 0.0))
            feasible &= d_obs > c_eff
        rg = self.goal - p
        nrg = np.linalg.norm(rg)
        speed = np.linalg.norm(vel, axis=1)
        align = (vel @ rg) / (speed * nrg) if nrg > 0 else np.zeros(len(vel))
        score = self.params.alpha * align[:, None] + speed[:, None] * ts[None, :]
        return {"vel": vel, "ends": ends, "feasible": feasible, "score": score, "d_obs": d_obs}

    def place(self, state: StateTime, labels, table=None) -> Optional[tuple[StateTime, int, float]]:
        """Best move ending inside the triangle ``labels`` at arrival time.

        Returns ``(child state, velocity index, closest approach)`` or None.
        """
        if table is None:
            table = self.candidate_table(state)
        arrive = state.t + self.t_candidates
        tri = self.label_positions(labels, arrive)                       # (Q, 3, 2)
        return self._best_move(state, table, _points_in_triangles(table["ends"], tri))

    def _best_move(self, state: StateTime, table, inside: np.ndarray):
        ok = table["feasible"] & inside
        if not ok.any():
            return None
        score = np.where(ok, table["score"], -np.inf)
        flat = int(np.argmax(score))                                     # first maximum wins ties
        vi, qi = divmod(flat, score.shape[1])
        end = table["ends"][vi, qi]
        v = table["vel"][vi]
        child = StateTime(Vec2(float(end[0]), float(end[1])), Vec2(float(v[0]), float(v[1])),
                          self.time_of(self.slice_of(state.t) + int(self.k_offsets[qi])))
        return child, int(self.k_offsets[qi]), float(table["d_obs"][vi, qi])

    def goal_edge(self, state: StateTime, t_limit: float = math.inf):
        """Direct constant-velocity move to the goal, or None if it is blocked.

        The duration is rounded up to whole slices so the arrival lands on
        the time grid; the speed is lowered to match.
        """
        p = np.array(tuple(state.p))
        rel = self.goal - p
        dist = float(np.hypot(rel[0], rel[1]))
        if dist == 0.0:
            n = 1
        else:
            smax = max_speed_along(rel, tuple(self.cfg.v_max))
            n = max(1, int(math.ceil(dist / (smax * self.dt) - 1e-9)))
        duration = n * self.dt
        t_arr = self.time_of(self.slice_of(state.t) + n)
        if t_arr - self.t0 > t_limit + 1e-9:
            return None
        v = rel / duration
        obs = self.world.obstacles
        d_obs = math.inf
        if len(obs):
            rel_p = p[None, :] - extrapolate(self.world, state.t)
            rel_v = v[None, :] - obs.velocities
            d_obs = float(segment_min_distance(rel_p, rel_v, duration, self.step).min())
            if not d_obs > self.cfg.c_eff:
                return None
        goal_state = StateTime(Vec2(float(self.goal[0]), float(self.goal[1])),
                               Vec2(float(v[0]), float(v[1])), t_arr)
        cost = navi_cost_from_clearance(dist, d_obs, 2.0 * self.cfg.safe_distance)
        return goal_state, n, cost

    def successors(self, state: StateTime, k: int):
        """``(key, child, k_child, edge cost, triangle id)`` for the current
        triangle and each of its edge neighbours, plus the located triangle."""
        sg = self.slice(k)
        tid = locate(sg.tri, tuple(state.p))
        targets = [tid] + neighbors(sg.tri, tid)
        table = self.candidate_table(state)
        out = []
        if not table["feasible"].any():
            return tid, out
        # one containment test for all targets: (targets, V, Q)
        all_labels = [sg.tri.triangle_labels(target) for target in targets]
        arrive = state.t + self.t_candidates
        flat_labels = [lab for labels in all_labels for lab in labels]
        pos = self.label_positions(flat_labels, arrive)                  # (Q, 3n, 2)
        tri = pos.reshape(len(arrive), len(targets), 3, 2).transpose(1, 0, 2, 3)
        inside = _points_in_triangles(table["ends"][None], tri[:, None])
        for j, target in enumerate(targets):
            labels = all_labels[j]
            placed = self._best_move(state, table, inside[j])
            if placed is None:
                continue
            child, dk, d_obs = placed
            seg = math.hypot(child.p.x - state.p.x, child.p.y - state.p.y)
            cost = navi_cost_from_clearance(seg, d_obs, 2.0 * self.cfg.safe_distance)
            out.append(((k + dk,) + labels, child, k + dk, cost, target))
        return tid, out


def place_node(current: StateTime, target_triangle: int, world: WorldSnapshot, goal,
               cfg: ScenarioConfig, *, slice_graph: SliceGraph | None = None,
               params: SearchParams | None = None, origin=None) -> Optional[StateTime]:
    """Place a successor of ``current`` inside ``target_triangle``.

    ``target_triangle`` indexes the triangulation of the slice holding
    ``current`` (built on demand when ``slice_graph`` is omitted).  Returns
    None when no discretised move satisfies every constraint.
    """
    ex = Expander(world, goal, cfg, params, origin=origin)
    if slice_graph is None:
        slice_graph = ex.slice(ex.slice_of(current.t))
    placed = ex.place(current, slice_graph.tri.triangle_labels(target_triangle))
    return None if placed is None else placed[0]


def _backtrack(node: DualNode) -> list[DualNode]:
    out = []
    while node is not None:
        out.append(node)
        node = node.parent
    return out[::-1]


def state_time_astar(start: StateTime, goal, T: float, world: WorldSnapshot,
                     cfg: ScenarioConfig, params: SearchParams | None = None,
                     origin=None, dump=None) -> StPath:
    """State-time A* over the dual graph.

    Returns a complete path once the goal node is popped.  When a popped
    node is at or past the time budget ``T`` (seconds after the start), or
    the open list runs dry, the path to the popped node nearest the goal is
    returned with ``complete=False``.  ``dump`` may be a writable text
    stream; one JSON line per expanded node is written to it.
    """
    c_eff = cfg.c_eff
    if len(world.obstacles) and min_clearance(world, start.p, start.t, c_eff) < 0.0:
        raise InadmissibleStartError(f"start {tuple(start.p)} is inside an obstacle")
    goal = np.asarray(tuple(goal), dtype=float)
    ex = Expander(world, goal, cfg, params, origin=start.p if origin is None else origin,
                  t0=start.t)

    def h(s: StateTime) -> float:
        return float(math.hypot(goal[0] - s.p.x, goal[1] - s.p.y))

    sg0 = ex.slice(0)
    tid0 = locate(sg0.tri, tuple(start.p))
    root = DualNode(start, tid0, 0.0, h(start), None, (0,) + sg0.tri.triangle_labels(tid0), 0)
    best: dict[tuple, DualNode] = {root.key: root}
    closed: set[tuple] = set()
    counter = itertools.count()
    heap = [(root.h_cost, root.h_cost, next(counter), root)]
    nearest: DualNode | None = None
    expanded = 0

    while heap:
        _, _, _, node = heapq.heappop(heap)
        if node.key in closed or best.get(node.key) is not node:
            continue
        if node.key == GOAL_KEY:
            return StPath(_backtrack(node), True, expanded)
        if nearest is None or node.h_cost < nearest.h_cost:
            nearest = node
        if node.state.t - start.t >= T - 1e-9:
            return StPath(_backtrack(nearest), False, expanded)
        closed.add(node.key)
        expanded += 1

        goal_edge = ex.goal_edge(node.state, T)
        if goal_edge is not None:
            gstate, dk, cost = goal_edge
            _relax(best, closed, heap, counter, GOAL_KEY, gstate, node.t_index + dk, node,
                   node.g_cost + cost, 0.0, -1)
        tid, succ = ex.successors(node.state, node.t_index)
        node.triangle = tid
        for key, child, kc, cost, _target in succ:
            _relax(best, closed, heap, counter, key, child, kc, node, node.g_cost + cost,
                   h(child), -1)
        if dump is not None:
            dump.write(json.dumps({
                "t": node.state.t, "p": list(node.state.p), "v": list(node.state.v),
                "g": node.g_cost, "h": node.h_cost, "triangle": tid,
                "key": list(node.key),
                "parent": None if node.parent is None else list(node.parent.key),
            }) + "\n")

    return StPath(_backtrack(nearest if nearest is not None else root), False, expanded)


def _relax(best, closed, heap, counter, key, state, k, parent, g, hval, tid) -> None:
    if key in closed:
        return
    cur = best.get(key)
    if cur is not None and cur.g_cost <= g:
        return
    node = DualNode(state, tid, g, hval, parent, key, k)
    best[key] = node
    heapq.heappush(heap, (g + hval, hval, next(counter), node))
