"""Pedestrian-trajectory replay: load tracks, resample at 10 Hz, take snapshots.

Input is a whitespace-separated text file with rows ``frame_id agent_id x y``
and a ``# source_fps: <rate>`` header.  Other ``#`` lines are comments.
Agents are replayed open loop; they do not react to the robot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ObstacleSet, OutOfRangeError, ScenarioConfig, StateTime, Vec2
from .planner import StepMotion
from .world import WorldSnapshot

GRID_DT = 0.1
BOUNDS_MARGIN = 1.0
# replay benchmark settings
BENCH_V_MAX = 1.5
BENCH_SAFE_DISTANCE = 0.4


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class AgentTrack:
    agent_id: int
    t: np.ndarray       # (K,) strictly increasing seconds
    p: np.ndarray       # (K, 2)

    def __post_init__(self):
        if len(self.t) != len(self.p):
            raise ValueError("times and positions differ in length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError(f"agent {self.agent_id}: times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class ReplaySequence:
    """Tracks on the shared 0.1 s grid; ``k0[i]`` is the grid index of track i's first sample."""

    tracks: tuple[AgentTrack, ...]
    k0: tuple[int, ...]
    bounds: tuple[float, float, float, float]     # xmin, ymin, xmax, ymax
    dropped: int = 0
    frame_rate: float = 1.0 / GRID_DT

    @property
    def t_start(self) -> float:
        return min(self.k0) * GRID_DT if self.k0 else 0.0

    @property
    def t_end(self) -> float:
        if not self.tracks:
            return 0.0
        return max((k + len(tr) - 1) for k, tr in zip(self.k0, self.tracks)) * GRID_DT

    @property
    def extent(self) -> Vec2:
        x0, y0, x1, y1 = self.bounds
        return Vec2(x1 - x0, y1 - y0)


def parse(text: str, name: str = "<string>") -> list[AgentTrack]:
    fps = None
    rows: dict[int, list[tuple[float, float, float]]] = {}
    seen_data = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.lower().startswith("source_fps:"):
                try:
                    fps = float(body.split(":", 1)[1])
                except ValueError:
                    raise ParseError("bad source_fps value", lineno) from None
                if not (fps > 0 and math.isfinite(fps)):
                    raise ParseError("source_fps must be positive", lineno)
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"expected 4 fields (frame_id agent_id x y), got {len(parts)}", lineno)
        if fps is None:
            raise ParseError("data before the '# source_fps:' header", lineno)
        try:
            frame, agent = float(parts[0]), int(parts[1])
            x, y = float(parts[2]), float(parts[3])
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", lineno) from None
        if not all(math.isfinite(v) for v in (frame, x, y)):
            raise ParseError("non-finite value", lineno)
        rows.setdefault(agent, []).append((frame / fps, x, y))
        seen_data = True
    if not seen_data:
        raise ParseError(f"{name}: no data rows")
    tracks = []
    for agent in sorted(rows):
        arr = np.array(sorted(rows[agent]))     # out-of-order frames are sorted by time
        if np.any(np.diff(arr[:, 0]) == 0):
            raise ParseError(f"agent {agent} has two rows for the same frame")
        tracks.append(AgentTrack(agent, arr[:, 0], arr[:, 1:]))
    return tracks


def load(path) -> list[AgentTrack]:
    path = Path(path)
    return parse(path.read_text(), str(path))


def write(path, tracks, source_fps: float) -> Path:
    """Inverse of :func:`load` for tracks whose times are whole source frames."""
    path = Path(path)
    lines = [f"# source_fps: {source_fps:g}"]
    for tr in tracks:
        for t, (x, y) in zip(tr.t, tr.p):
            frame = t * source_fps
            lines.append(f"{round(frame):d}\t{tr.agent_id:d}\t{float(x)!r}\t{float(y)!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def interpolate_10hz(tracks, margin: float = BOUNDS_MARGIN) -> ReplaySequence:
    """Linear resampling of every track on its own span of the global 0.1 s grid.

    Tracks with fewer than two samples, or spanning no grid point, are
    dropped and counted in ``dropped``.
    """
    out, k0s, dropped = [], [], 0
    for tr in tracks:
        if len(tr) < 2:
            dropped += 1
            continue
        k_first = int(math.ceil(tr.t[0] / GRID_DT - 1e-9))
        k_last = int(math.floor(tr.t[-1] / GRID_DT + 1e-9))
        if k_last < k_first:
            dropped += 1
            continue
        grid = np.arange(k_first, k_last + 1) * GRID_DT
        grid = np.clip(grid, tr.t[0], tr.t[-1])
        p = np.column_stack([np.interp(grid, tr.t, tr.p[:, 0]), np.interp(grid, tr.t, tr.p[:, 1])])
        out.append(AgentTrack(tr.agent_id, np.arange(k_first, k_last + 1) * GRID_DT, p))
        k0s.append(k_first)
    if out:
        allp = np.vstack([tr.p for tr in out])
        lo, hi = allp.min(axis=0) - margin, allp.max(axis=0) + margin
        bounds = (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
    else:
        bounds = (0.0, 0.0, 2 * margin, 2 * margin)
    return ReplaySequence(tuple(out), tuple(k0s), bounds, dropped)


def _alive_state(seq: ReplaySequence, k: int):
    """Ids, positions and finite-difference velocities of agents alive at grid index ``k``."""
    ids, pos, vel = [], [], []
    for tr, k0 in zip(seq.tracks, seq.k0):
        j = k - k0
        if j < 0 or j >= len(tr):
            continue
        if 0 < j < len(tr) - 1:
            v = (tr.p[j + 1] - tr.p[j - 1]) / (2 * GRID_DT)
        elif j == 0:
            v = (tr.p[1] - tr.p[0]) / GRID_DT
        else:
            v = (tr.p[j] - tr.p[j - 1]) / GRID_DT
        ids.append(tr.agent_id)
        pos.append(tr.p[j])
        vel.append(v)
    return ids, np.array(pos).reshape(-1, 2), np.array(vel).reshape(-1, 2)


def grid_index(seq: ReplaySequence, t: float) -> int:
    k = int(round(t / GRID_DT))
    if abs(k * GRID_DT - t) > 1e-6:
        raise OutOfRangeError(f"t={t} is not on the 0.1 s grid")
    if t < seq.t_start - 1e-9 or t > seq.t_end + 1e-9:
        raise OutOfRangeError(f"t={t} outside sequence span [{seq.t_start}, {seq.t_end}]")
    return k


def snapshot(seq: ReplaySequence, t: float, radius: float = BENCH_SAFE_DISTANCE,
             shift: bool = True) -> WorldSnapshot:
    """Agents alive at ``t`` as obstacles; coordinates shifted so the bounds start at the origin."""
    k = grid_index(seq, t)
    ids, pos, vel = _alive_state(seq, k)
    if shift:
        pos = pos - np.array(seq.bounds[:2])
    obs = ObstacleSet.from_arrays(pos, vel, radius, ids=ids)
    return WorldSnapshot(obs, t, seq.extent)


def bench_config(seq: ReplaySequence, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Replay benchmark settings: start and goal at the mid-left and mid-right of the bounds."""
    base = base or ScenarioConfig()
    ext = seq.extent
    return base.replace(workspace_extent=ext, v_max=Vec2(BENCH_V_MAX, BENCH_V_MAX),
                        safe_distance=BENCH_SAFE_DISTANCE,
                        start=Vec2(0.0, ext.y / 2.0), goal=Vec2(ext.x, ext.y / 2.0))


class ReplayWorld:
    """Simulator handle over a recorded sequence; the robot starts at time ``t_start``."""

    def __init__(self, seq: ReplaySequence, cfg: ScenarioConfig, t_start: float):
        self.seq = seq
        self.k = grid_index(seq, t_start)
        self.radius = cfg.safe_distance
        self.robot = StateTime(Vec2.of(cfg.start), Vec2(0.0, 0.0), self.k * GRID_DT)
        self.goal = Vec2.of(cfg.goal)
        self._offset = np.array(seq.bounds[:2])

    def snapshot(self) -> WorldSnapshot:
        if self.k * GRID_DT > self.seq.t_end + 1e-9:
            return WorldSnapshot(ObstacleSet((), self.radius), self.k * GRID_DT, self.seq.extent)
        return snapshot(self.seq, self.k * GRID_DT, self.radius)

    def advance(self, dt: float) -> StepMotion:
        steps = int(round(dt / GRID_DT))
        if steps != 1:
            raise ValueError("replay advances one 0.1 s grid step at a time")
        ids0, p0, _ = _alive_state(self.seq, self.k)
        ids1, p1, _ = _alive_state(self.seq, self.k + 1)
        self.k += 1
        # agents present at both ends of the tick move straight between samples
        where = {a: i for i, a in enumerate(ids1)}
        both = [(i, where[a]) for i, a in enumerate(ids0) if a in where]
        if not both:
            empty = np.zeros((0, 2))
            return StepMotion(empty, empty)
        i0, i1 = map(list, zip(*both))
        return StepMotion(p0[i0] - self._offset, p1[i1] - self._offset)


def replay_start_times(seq: ReplaySequence, trials: int, seed: int, min_remaining: float = 30.0):
    """Seeded random grid start times, leaving ``min_remaining`` seconds when possible."""
    rng = np.random.default_rng(seed)
    k_lo = int(round(seq.t_start / GRID_DT))
    k_hi = int(round(max(seq.t_start, seq.t_end - min_remaining) / GRID_DT))
    return [int(k) * GRID_DT for k in rng.integers(k_lo, k_hi + 1, size=trials)]


# -- synthetic fixtures ------------------------------------------------------

def synthetic_sparse(duration: float = 60.0, fps: float = 2.5) -> list[AgentTrack]:
    """A few pedestrians walking along the top and bottom edges; the middle row stays open."""
    t = np.arange(0.0, duration + 1e-9, 1.0 / fps)
    tracks = []
    lanes = [(0.5, 1.0), (1.5, -0.8), (8.5, 0.9), (9.5, -1.1)]
    for i, (y, speed) in enumerate(lanes):
        x = (speed * t + 2.0 * i) % 10.0
        # keep each lap a separate agent so wraparound never shows as a jump
        lap = np.floor((speed * t + 2.0 * i) / 10.0).astype(int)
        for j, l in enumerate(np.unique(lap)):
            m = lap == l
            if m.sum() >= 2:
                tracks.append(AgentTrack(100 * i + j, t[m], np.column_stack([x[m], np.full(m.sum(), y)])))
    tracks.extend(_corner_markers(duration))
    return tracks


def synthetic_dense(duration: float = 60.0, fps: float = 2.5, spacing: float = 0.7,
                    speed: float = 1.2) -> list[AgentTrack]:
    """A tight stream of pedestrians crossing the robot's corridor top to bottom."""
    t = np.arange(0.0, duration + 1e-9, 1.0 / fps)
    tracks = []
    n_agents = int((speed * duration + 10.0) / spacing) + 1
    for a in range(n_agents):
        y = a * spacing - speed * t        # agent a starts a*spacing above the bottom edge
        m = (y >= 0.0) & (y <= 10.0)
        if m.sum() >= 2:
            tracks.append(AgentTrack(a, t[m], np.column_stack([np.full(m.sum(), 5.0), y[m]])))
    tracks.extend(_corner_markers(duration))
    return tracks


def _corner_markers(duration: float) -> list[AgentTrack]:
    # two standing agents pin the fitted bounds to the same 10 x 10 area
    return [AgentTrack(10_000, np.array([0.0, duration]), np.zeros((2, 2))),
            AgentTrack(10_001, np.array([0.0, duration]), np.full((2, 2), 10.0))]
