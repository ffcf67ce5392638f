"""Moving-obstacle kinematics under constant-velocity extrapolation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InvalidTimeError, ObstacleSet, Vec2

# returned by min_clearance when there is nothing to collide with
NO_OBSTACLE_CLEARANCE = math.inf


@dataclass(frozen=True)
class WorldSnapshot:
    obstacles: ObstacleSet
    t_now: float
    workspace_extent: Vec2

    def __post_init__(self):
        object.__setattr__(self, "workspace_extent", Vec2.of(self.workspace_extent))
        object.__setattr__(self, "t_now", float(self.t_now))

    @property
    def radius(self) -> float:
        return self.obstacles.radius

    def __len__(self) -> int:
        return len(self.obstacles)


def extrapolate(snapshot: WorldSnapshot, t: float) -> np.ndarray:
    """Obstacle centres at time ``t`` as an ``(M, 2)`` array (no wraparound)."""
    dt = t - snapshot.t_now
    if dt < -1e-12:
        raise InvalidTimeError(f"t={t} is before snapshot time {snapshot.t_now}")
    dt = max(dt, 0.0)
    obs = snapshot.obstacles
    return obs.positions + obs.velocities * dt


def min_clearance(snapshot: WorldSnapshot, p, t: float, c_eff: float) -> float:
    """Distance from ``p`` to the nearest extrapolated obstacle centre minus ``c_eff``.

    Negative values mean the state-time lies in the obstacle region.
    """
    if len(snapshot.obstacles) == 0:
        if t < snapshot.t_now - 1e-12:
            raise InvalidTimeError(f"t={t} is before snapshot time {snapshot.t_now}")
        return NO_OBSTACLE_CLEARANCE
    centres = extrapolate(snapshot, t)
    d = np.hypot(centres[:, 0] - p[0], centres[:, 1] - p[1])
    return float(d.min() - c_eff)


def wrap_positions(positions: np.ndarray, extent) -> np.ndarray:
    """Antipodal teleport of every centre that left the closed box ``[0, extent]``."""
    pos = np.array(positions, dtype=float).reshape(-1, 2)
    ext = np.asarray(tuple(extent), dtype=float)
    outside = (pos < 0.0) | (pos > ext)
    rows = outside.any(axis=1)
    if not rows.any():
        return pos
    mapped = ext - pos[rows]
    out_rows = outside[rows]
    hi = pos[rows] > ext  # exited through the far side, re-enters at 0
    mapped = np.where(out_rows & hi, 0.0, mapped)
    mapped = np.where(out_rows & ~hi, ext, mapped)
    pos[rows] = mapped
    return pos


def wrap_obstacles(snapshot: WorldSnapshot) -> WorldSnapshot:
    obs = snapshot.obstacles
    if len(obs) == 0:
        return snapshot
    pos = wrap_positions(obs.positions, snapshot.workspace_extent)
    moved = ObstacleSet.from_arrays(pos, obs.velocities, obs.radius, ids=obs.ids)
    return WorldSnapshot(moved, snapshot.t_now, snapshot.workspace_extent)


def segment_min_distance(rel_p: np.ndarray, rel_v: np.ndarray, duration, step: float | None = None):
    """Minimum of ``|rel_p + rel_v * tau|`` over ``tau`` in ``[0, duration]``.

    Broadcasts over leading axes; the last axis holds x/y.  With ``step`` the
    minimum is taken over the sample grid ``0, step, 2*step, ...`` truncated
    at ``duration`` (plus the end point), which equals a forward simulation
    at that step without visiting every sample: the squared distance is a
    convex quadratic in ``tau`` so the grid minimum sits next to the
    continuous minimiser.
    """
    rel_p = np.asarray(rel_p, dtype=float)
    rel_v = np.asarray(rel_v, dtype=float)
    pp = np.einsum("...i,...i->...", rel_p, rel_p)
    vv = np.einsum("...i,...i->...", rel_v, rel_v)
    pv = np.einsum("...i,...i->...", rel_p, rel_v)
    return np.sqrt(np.maximum(min_sq_distance(pp, pv, vv, duration, step), 0.0))


def min_sq_distance(pp, pv, vv, duration, step: float | None = None):
    """Squared-distance form of :func:`segment_min_distance`.

    Takes the coefficients of ``|p + v tau|^2 = pp + 2 pv tau + vv tau^2``
    so callers can reuse them across many durations.
    """
    pp, pv, vv = (np.asarray(a, dtype=float) for a in (pp, pv, vv))
    duration = np.asarray(duration, dtype=float)
    moving = vv > 0.0
    tau = -pv / np.where(moving, vv, 1.0)
    tau = np.where(moving, tau, 0.0)
    tau = np.minimum(np.maximum(tau, 0.0), duration)
    if step is None:
        cands = [tau]
    else:
        lo = np.floor(tau / step + 1e-9) * step
        hi = np.minimum(lo + step, duration)
        lo = np.minimum(lo, duration)
        cands = [lo, hi, duration]
    two_pv = 2.0 * pv
    best = None
    for c in cands:
        d = pp + c * (two_pv + c * vv)
        best = d if best is None else np.minimum(best, d)
    return best
