"""Timed-ESDF: state-time distance and gradient queries against swept obstacles.

Every time slice ``[t0 + i*dt, t0 + (i+1)*dt]`` stores, per obstacle, the
segment its centre sweeps during the slice.  A query with robot position
``p`` and velocity ``v`` measures how close the robot, moving at ``v`` for
up to one slice, comes to the obstacle moving along its segment.  The
distance is evaluated in closed form, so no voxel grid is involved.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Obstacle, OutOfRangeError, StateTime, Vec2
from .world import WorldSnapshot, extrapolate


@dataclass(frozen=True)
class ObstacleSegment:
    a: Vec2
    b: Vec2
    radius: float


@dataclass(frozen=True)
class DistanceResult:
    d: float
    grad_p: Vec2
    grad_v: Vec2
    tau_star: float
    obstacle: int = -1  # index of the nearest obstacle, -1 when there is none


@dataclass(frozen=True)
class TimedEsdf:
    """Slice start positions ``starts[i, k]`` and shared velocities ``velocities[k]``."""

    starts: np.ndarray
    velocities: np.ndarray
    ids: np.ndarray
    t0: float
    dt: float
    c_eff: float
    epsilon: float

    def __post_init__(self):
        for a in (self.starts, self.velocities, self.ids):
            a.setflags(write=False)

    @property
    def n_slices(self) -> int:
        return self.starts.shape[0]

    @property
    def horizon(self) -> float:
        return self.n_slices * self.dt

    def segments(self, i: int) -> list[ObstacleSegment]:
        a = self.starts[i]
        b = a + self.velocities * self.dt
        return [ObstacleSegment(Vec2(*map(float, pa)), Vec2(*map(float, pb)), self.c_eff)
                for pa, pb in zip(a, b)]

    def slice_index(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        u = (t - self.t0) / self.dt
        idx = np.floor(u + 1e-9).astype(int)
        bad = (idx < 0) | (idx >= self.n_slices)
        if np.any(bad):
            first = float(np.atleast_1d(t)[np.flatnonzero(np.atleast_1d(bad))[0]])
            raise OutOfRangeError(
                f"t={first} outside field horizon [{self.t0}, {self.t0 + self.horizon})")
        return idx


def build(world: WorldSnapshot, t0: float, horizon: float, dt: float,
          c_eff: float, epsilon: float) -> TimedEsdf:
    if horizon < dt - 1e-12:
        raise ValueError("horizon must be >= dt")
    n = int(math.ceil(horizon / dt - 1e-9))
    obs = world.obstacles
    order = np.argsort(obs.ids, kind="stable")
    base = extrapolate(world, t0)[order]
    vel = obs.velocities[order]
    starts = base[None, :, :] + (np.arange(n) * dt)[:, None, None] * vel[None, :, :]
    return TimedEsdf(starts, vel.copy(), obs.ids[order].copy(), float(t0), float(dt),
                     float(c_eff), float(epsilon))


def query_many(field: TimedEsdf, p, v, t):
    """Vectorised query for ``N`` states.

    Returns ``(d, grad_p, grad_v, tau_star, nearest)`` with shapes
    ``(N,), (N, 2), (N, 2), (N,), (N,)``.
    """
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(p),))
    idx = field.slice_index(t)
    n = len(p)
    m = field.velocities.shape[0]
    if m == 0:
        return (np.full(n, np.inf), np.zeros((n, 2)), np.zeros((n, 2)),
                np.zeros(n), -np.ones(n, dtype=int))
    r = p[:, None, :] - field.starts[idx]                     # (N, M, 2)
    w = v[:, None, :] - field.velocities[None, :, :]          # (N, M, 2)
    ww = np.einsum("nmi,nmi->nm", w, w)
    rw = np.einsum("nmi,nmi->nm", r, w)
    safe = np.where(ww > 0.0, ww, 1.0)
    tau = np.where(ww > 0.0, np.clip(-rw / safe, 0.0, field.dt), 0.0)
    q = r + w * tau[..., None]
    dist = np.hypot(q[..., 0], q[..., 1])
    k = np.argmin(dist, axis=1)                                 # first minimum = lowest id
    rows = np.arange(n)
    dk = dist[rows, k]
    qk = q[rows, k]
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(dk[:, None] > 0.0, qk / np.where(dk > 0.0, dk, 1.0)[:, None], 0.0)
    tk = tau[rows, k]
    return dk - field.c_eff, unit, unit * tk[:, None], tk, k


def query(field: TimedEsdf, s: StateTime) -> DistanceResult:
    d, gp, gv, tau, k = query_many(field, [tuple(s.p)], [tuple(s.v)], [s.t])
    return DistanceResult(float(d[0]), Vec2(*map(float, gp[0])), Vec2(*map(float, gv[0])),
                          float(tau[0]), int(k[0]))


def hinge(d, epsilon: float):
    """Obstacle cost ``max(epsilon - d, 0)``; zero on and beyond the margin."""
    val = np.maximum(epsilon - np.asarray(d, dtype=float), 0.0)
    return float(val) if np.ndim(val) == 0 else val


def in_velocity_obstacle(v, p_r, obstacle: Obstacle, c_eff: float,
                         horizon: float = math.inf) -> bool:
    """True if some ``t`` in ``(0, horizon]`` brings the robot within ``c_eff``.

    Robot and obstacle both hold their velocity, so this is a ray-against-disc
    test in the obstacle's frame.
    """
    rx, ry = p_r[0] - obstacle.p[0], p_r[1] - obstacle.p[1]
    wx, wy = v[0] - obstacle.v[0], v[1] - obstacle.v[1]
    rr = rx * rx + ry * ry
    c2 = c_eff * c_eff
    ww = wx * wx + wy * wy
    rw = rx * wx + ry * wy
    if ww == 0.0:
        return rr <= c2
    t_star = min(max(-rw / ww, 0.0), horizon)
    qx, qy = rx + wx * t_star, ry + wy * t_star
    return qx * qx + qy * qy <= c2


def vo_mask(candidates: np.ndarray, p_r, positions: np.ndarray, velocities: np.ndarray,
            c_eff: float, horizon: float = math.inf) -> np.ndarray:
    """Vectorised :func:`in_velocity_obstacle`: ``mask[c]`` is true if candidate
    velocity ``c`` lies in the (truncated) velocity obstacle of any obstacle."""
    cand = np.asarray(candidates, dtype=float).reshape(-1, 2)
    if len(positions) == 0:
        return np.zeros(len(cand), dtype=bool)
    r = np.asarray(p_r, dtype=float)[None, None, :] - positions[None, :, :]
    w = cand[:, None, :] - velocities[None, :, :]
    ww = np.einsum("cmi,cmi->cm", w, w)
    rw = np.einsum("cmi,cmi->cm", r, w)
    tau = np.where(ww > 0.0, np.clip(-rw / np.where(ww > 0.0, ww, 1.0), 0.0, horizon), 0.0)
    q = r + w * tau[..., None]
    return np.any(np.einsum("cmi,cmi->cm", q, q) <= c_eff * c_eff, axis=1)


def sample_slice(field: TimedEsdf, i: int, resolution: float, extent, velocity=(0.0, 0.0)):
    """Distance samples on a regular grid for slice ``i``: ``(xs, ys, D)``."""
    xs = np.arange(0.0, float(extent[0]) + 1e-9, resolution)
    ys = np.arange(0.0, float(extent[1]) + 1e-9, resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    t = field.t0 + i * field.dt
    d, *_ = query_many(field, pts, np.broadcast_to(np.asarray(velocity, float), pts.shape), t)
    return xs, ys, d.reshape(gy.shape)


def export_slice_csv(field: TimedEsdf, i: int, path, resolution: float, extent,
                     velocity=(0.0, 0.0)) -> Path:
    xs, ys, dist = sample_slice(field, i, resolution, extent, velocity)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "d"])
        for r, y in enumerate(ys):
            for c, x in enumerate(xs):
                writer.writerow([f"{x:.6g}", f"{y:.6g}", f"{dist[r, c]:.9g}"])
    return path
