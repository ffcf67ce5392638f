"""Independent reference computations used by the tests.

Each oracle takes the slow, obvious route (dense sampling, explicit loops,
finite differences, exhaustive search) so it shares as little code as
possible with the implementation it checks.
"""

from __future__ import annotations

import heapq
import itertools
import math

import numpy as np

from stplan.core import StateTime, Vec2
from stplan.sim_harness import init_scenario, step_world
from stplan.st_graph import Expander, SearchParams


def dense_tau_distance(p, v, a, va, dt, c_eff, n=10_001):
    """min over tau in linspace(0, dt, n) and obstacles of |p + v tau - (a + va tau)| - c_eff."""
    tau = np.linspace(0.0, dt, n)
    best = math.inf
    for ak, vk in zip(np.atleast_2d(a), np.atleast_2d(va)):
        rel = (np.asarray(p) - ak)[None, :] + (np.asarray(v) - vk)[None, :] * tau[:, None]
        best = min(best, float(np.hypot(rel[:, 0], rel[:, 1]).min()))
    return best - c_eff


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(f(x))
    out = np.zeros((len(f0), len(x)))
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        out[:, j] = (np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * h)
    return out


def point_in_triangle(p, a, b, c, tol=1e-12):
    def cross(o, u, w):
        return (u[0] - o[0]) * (w[1] - o[1]) - (u[1] - o[1]) * (w[0] - o[0])

    area = cross(a, b, c)
    if abs(area) <= 1e-14:
        return False
    s = 1.0 if area > 0 else -1.0
    for u, w in ((a, b), (b, c), (c, a)):
        scale = max(math.hypot(w[0] - u[0], w[1] - u[1]), 1.0)
        if s * cross(u, w, p) < -tol * scale:
            return False
    return True


def vertex_position(world, label, t):
    ext = world.workspace_extent
    corners = {-1: (0.0, 0.0), -2: (ext.x, 0.0), -3: (ext.x, ext.y), -4: (0.0, ext.y)}
    if label < 0:
        return corners[label]
    for o in world.obstacles.obstacles:
        if o.id == label:
            dt = t - world.t_now
            return (o.p.x + o.v.x * dt, o.p.y + o.v.y * dt)
    raise KeyError(label)


def place_node_bruteforce(current: StateTime, labels, world, goal, cfg, params=None, origin=None):
    """Explicit enumeration of the placement grid with a literal forward simulation.

    Returns ``(best state, best score)`` or ``(None, None)``.
    """
    prm = params or SearchParams()
    goal = (float(goal[0]), float(goal[1]))
    px, py = current.p.x, current.p.y
    gx, gy = goal[0] - px, goal[1] - py
    base = math.atan2(gy, gx) if (gx or gy) else 0.0
    ox, oy = (px, py) if origin is None else (origin[0], origin[1])
    sgx, sgy = goal[0] - ox, goal[1] - oy
    ngoal = math.hypot(gx, gy)
    step = cfg.dt / prm.substeps
    best, best_score = None, -math.inf
    for h in range(prm.n_headings):
        ang = base + 2.0 * math.pi * h / prm.n_headings
        dx, dy = math.cos(ang), math.sin(ang)
        lim = []
        if abs(dx) > 1e-15:
            lim.append(cfg.v_max.x / abs(dx))
        if abs(dy) > 1e-15:
            lim.append(cfg.v_max.y / abs(dy))
        smax = min(lim)
        for frac in prm.speed_fractions:
            vx, vy = dx * smax * frac, dy * smax * frac
            if abs(vx) > cfg.v_max.x + 1e-12 or abs(vy) > cfg.v_max.y + 1e-12:
                continue
            if sgx * vx + sgy * vy <= 0.0:
                continue
            speed = math.hypot(vx, vy)
            align = (vx * gx + vy * gy) / (speed * ngoal) if ngoal > 0 else 0.0
            for q in range(1, prm.n_times + 1):
                t = prm.t_max * q / prm.n_times
                ex, ey = px + vx * t, py + vy * t
                if not (0.0 < ex < world.workspace_extent.x and 0.0 < ey < world.workspace_extent.y):
                    continue
                ok = True
                n_sub = int(round(t / step))
                for k in range(n_sub + 1):
                    tau = min(k * step, t)
                    rx, ry = px + vx * tau, py + vy * tau
                    for o in world.obstacles.obstacles:
                        ot = current.t - world.t_now + tau
                        if math.hypot(rx - (o.p.x + o.v.x * ot), ry - (o.p.y + o.v.y * ot)) <= cfg.c_eff:
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    continue
                tri = [vertex_position(world, lab, current.t + t) for lab in labels]
                if not point_in_triangle((ex, ey), *tri):
                    continue
                score = prm.alpha * align + speed * t
                if score > best_score:
                    best_score = score
                    best = StateTime(Vec2(ex, ey), Vec2(vx, vy), current.t + round(t / cfg.dt) * cfg.dt)
    return (best, best_score) if best is not None else (None, None)


def dijkstra_cost(start: StateTime, goal, T: float, world, cfg, params=None):
    """Uniform-cost search over the same successor rules as the A* front end.

    Expands everything in cost order (no heuristic, no early budget stop);
    nodes at or past the budget are not expanded.  Returns the cheapest
    goal cost or ``None``.
    """
    ex = Expander(world, goal, cfg, params, origin=start.p, t0=start.t)
    sg0 = ex.slice(0)
    from stplan.triangulation import locate
    root_key = (0,) + sg0.tri.triangle_labels(locate(sg0.tri, tuple(start.p)))
    best = {root_key: 0.0}
    states = {root_key: (start, 0)}
    done = set()
    tie = itertools.count()
    heap = [(0.0, next(tie), root_key)]
    while heap:
        g, _, key = heapq.heappop(heap)
        if key in done or g > best.get(key, math.inf):
            continue
        if key == "goal":
            return g
        done.add(key)
        state, k = states[key]
        if state.t - start.t >= T - 1e-9:
            continue
        edge = ex.goal_edge(state, T)
        if edge is not None:
            _, _, cost = edge
            if g + cost < best.get("goal", math.inf):
                best["goal"] = g + cost
                heapq.heappush(heap, (g + cost, next(tie), "goal"))
        _, succ = ex.successors(state, k)
        for ckey, child, kc, cost, _ in succ:
            if ckey in done:
                continue
            if g + cost < best.get(ckey, math.inf):
                best[ckey] = g + cost
                states[ckey] = (child, kc)
                heapq.heappush(heap, (g + cost, next(tie), ckey))
    return None


def reaudit_trial(cfg, n_obstacles: int, seed: int, records, substeps: int = 10) -> float:
    """Replay a sim trial's executed commands against a fresh copy of the world
    and return the smallest robot-obstacle distance over all substeps."""
    world, _ = init_scenario(cfg, n_obstacles, seed)
    dt = cfg.dt
    worst = math.inf
    for rec in records:
        p0 = np.array(rec["p"], dtype=float)
        u = np.array(rec["command"], dtype=float)
        pos, vel = world.obstacles.positions, world.obstacles.velocities
        for k in range(substeps + 1):
            tau = dt * k / substeps
            r = p0 + u * tau
            if len(pos):
                d = np.hypot(*(pos + vel * tau - r).T).min()
                worst = min(worst, float(d))
        world = step_world(world, dt)
    return worst
