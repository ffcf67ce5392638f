"""Shared domain types: states, trajectories, obstacles and scenario configuration."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class OutOfRangeError(ValueError):
    """A time or position query fell outside the domain of an object."""


class InvalidTimeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class Vec2(NamedTuple):
    x: float
    y: float

    @classmethod
    def of(cls, value) -> "Vec2":
        if isinstance(value, Vec2):
            return value
        x, y = value
        return cls(float(x), float(y))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def __add__(self, other):  # type: ignore[override]
        return Vec2(self.x + other[0], self.y + other[1])

    def __sub__(self, other):
        return Vec2(self.x - other[0], self.y - other[1])

    def scale(self, k: float) -> "Vec2":
        return Vec2(self.x * k, self.y * k)


def _check_finite(*vectors: Sequence[float]) -> None:
    for v in vectors:
        if not all(math.isfinite(c) for c in v):
            raise ValueError(f"non-finite component in {tuple(v)}")


@dataclass(frozen=True)
class StateTime:
    """Position and velocity of the robot stamped with a time."""

    p: Vec2
    v: Vec2
    t: float

    def __post_init__(self):
        object.__setattr__(self, "p", Vec2.of(self.p))
        object.__setattr__(self, "v", Vec2.of(self.v))
        object.__setattr__(self, "t", float(self.t))
        _check_finite(self.p, self.v, (self.t,))

    def as_array(self) -> np.ndarray:
        return np.array([self.p.x, self.p.y, self.v.x, self.v.y])

    @classmethod
    def from_array(cls, x, t: float) -> "StateTime":
        return cls(Vec2(float(x[0]), float(x[1])), Vec2(float(x[2]), float(x[3])), t)


class Trajectory:
    """Waypoints ``[px, py, vx, vy]`` on the uniform time grid ``t0 + i*dt``.

    Times are always regenerated from ``t0``, the index and ``dt`` so the
    spacing is exact.  Instances are immutable; the state array is read-only.
    """

    __slots__ = ("_states", "t0", "dt")

    def __init__(self, states, t0: float, dt: float):
        arr = np.array(states, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError("trajectory states must have shape (N, 4)")
        if arr.shape[0] < 2:
            raise ValueError("trajectory needs at least 2 waypoints")
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite trajectory state")
        if not dt > 0:
            raise ValueError("dt must be positive")
        arr.setflags(write=False)
        self._states = arr
        self.t0 = float(t0)
        self.dt = float(dt)

    @classmethod
    def from_waypoints(cls, waypoints: Sequence[StateTime], dt: float) -> "Trajectory":
        if len(waypoints) < 2:
            raise ValueError("trajectory needs at least 2 waypoints")
        t0 = waypoints[0].t
        for i, w in enumerate(waypoints):
            if abs(w.t - (t0 + i * dt)) > 1e-9:
                raise ValueError(f"waypoint {i} at t={w.t} is off the dt grid")
        return cls([w.as_array() for w in waypoints], t0, dt)

    @property
    def states(self) -> np.ndarray:
        return self._states

    def __len__(self) -> int:
        return self._states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) * self.dt

    def time(self, i: int) -> float:
        if i < 0:
            i += len(self)
        return self.t0 + i * self.dt

    @property
    def t_final(self) -> float:
        return self.time(len(self) - 1)

    @property
    def waypoints(self) -> list[StateTime]:
        return [StateTime.from_array(x, self.time(i)) for i, x in enumerate(self._states)]

    def __getitem__(self, i: int) -> StateTime:
        return StateTime.from_array(self._states[i], self.time(i if i >= 0 else len(self) + i))

    def with_states(self, states) -> "Trajectory":
        return Trajectory(states, self.t0, self.dt)

    def to_json(self) -> dict:
        return {
            "t0": self.t0,
            "dt": self.dt,
            "waypoints": [
                {"t": self.time(i), "p": list(map(float, x[:2])), "v": list(map(float, x[2:]))}
                for i, x in enumerate(self._states)
            ],
        }


def sample_trajectory(traj: Trajectory, t: float) -> StateTime:
    """State at time ``t``: the knot itself on a knot, else linear interpolation."""
    t0, tf = traj.t0, traj.t_final
    tol = 1e-12 * max(1.0, abs(tf))
    if t < t0 - tol or t > tf + tol:
        raise OutOfRangeError(f"t={t} outside trajectory span [{t0}, {tf}]")
    u = (t - t0) / traj.dt
    i = int(round(u))
    if abs(u - i) < 1e-9:
        i = min(max(i, 0), len(traj) - 1)
        return StateTime.from_array(traj.states[i], t)
    i = min(int(math.floor(u)), len(traj) - 2)
    w = u - i
    x = (1.0 - w) * traj.states[i] + w * traj.states[i + 1]
    return StateTime.from_array(x, t)


def clamp_velocity(v, v_max) -> Vec2:
    v = Vec2.of(v)
    vm = Vec2.of(v_max)
    return Vec2(min(max(v.x, -vm.x), vm.x), min(max(v.y, -vm.y), vm.y))


def max_speed_along(direction, v_max) -> float:
    """Largest speed along ``direction`` that respects the per-axis bound."""
    dx, dy = abs(direction[0]), abs(direction[1])
    n = math.hypot(dx, dy)
    if n == 0.0:
        return 0.0
    dx, dy = dx / n, dy / n
    limits = [vm / d for vm, d in ((v_max[0], dx), (v_max[1], dy)) if d > 1e-15]
    return min(limits)


@dataclass(frozen=True)
class Obstacle:
    id: int
    p: Vec2
    v: Vec2

    def __post_init__(self):
        object.__setattr__(self, "p", Vec2.of(self.p))
        object.__setattr__(self, "v", Vec2.of(self.v))
        _check_finite(self.p, self.v)


@dataclass(frozen=True)
class ObstacleSet:
    """Disc obstacles sharing one radius.

    ``positions`` and ``velocities`` are read-only ``(M, 2)`` arrays kept in
    step with ``obstacles`` for vectorised queries.
    """

    obstacles: tuple[Obstacle, ...]
    radius: float
    positions: np.ndarray = field(init=False, repr=False, compare=False)
    velocities: np.ndarray = field(init=False, repr=False, compare=False)
    ids: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        obs = tuple(self.obstacles)
        object.__setattr__(self, "obstacles", obs)
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")
        ids = [o.id for o in obs]
        if len(set(ids)) != len(ids):
            raise ValueError("obstacle ids must be unique")
        pos = np.array([o.p for o in obs], dtype=float).reshape(-1, 2)
        vel = np.array([o.v for o in obs], dtype=float).reshape(-1, 2)
        idarr = np.array(ids, dtype=int)
        for a in (pos, vel, idarr):
            a.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)
        object.__setattr__(self, "ids", idarr)

    @classmethod
    def from_arrays(cls, positions, velocities, radius: float, ids=None) -> "ObstacleSet":
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        velocities = np.asarray(velocities, dtype=float).reshape(-1, 2)
        if ids is None:
            ids = range(len(positions))
        return cls(
            tuple(Obstacle(int(i), Vec2(*map(float, p)), Vec2(*map(float, v)))
                  for i, p, v in zip(ids, positions, velocities)),
            radius,
        )

    def __len__(self) -> int:
        return len(self.obstacles)


@dataclass(frozen=True)
class ScenarioConfig:
    """Planning and simulation parameters; serialises to JSON with these names."""

    workspace_extent: Vec2 = Vec2(10.0, 10.0)
    v_max: Vec2 = Vec2(1.8, 1.8)
    safe_distance: float = 0.3
    robot_radius: float = 0.0
    epsilon: float = 0.2
    dt: float = 0.1
    horizon: float = 10.0
    timeout: float = 30.0
    start: Vec2 = Vec2(0.0, 5.0)
    goal: Vec2 = Vec2(10.0, 5.0)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("workspace_extent", "v_max", "start", "goal"):
            object.__setattr__(self, name, Vec2.of(getattr(self, name)))
        for name in ("safe_distance", "robot_radius", "epsilon", "dt", "horizon", "timeout"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "rng_seed", int(self.rng_seed))
        _check_finite(self.workspace_extent, self.v_max, self.start, self.goal)
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.horizon < self.dt:
            raise ConfigError("horizon must be >= dt")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if not self.timeout > 0:
            raise ConfigError("timeout must be > 0")
        if not self.safe_distance > 0:
            raise ConfigError("safe_distance must be > 0")
        if self.robot_radius < 0:
            raise ConfigError("robot_radius must be >= 0")
        if min(self.v_max) <= 0 or min(self.workspace_extent) <= 0:
            raise ConfigError("v_max and workspace_extent must be positive")

    @property
    def c_eff(self) -> float:
        """Centre-to-centre clearance radius of the disc robot."""
        return self.safe_distance + self.robot_radius

    def replace(self, **changes) -> "ScenarioConfig":
        data = asdict(self)
        data.update(changes)
        return ScenarioConfig(**data)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            out[f.name] = [val.x, val.y] if isinstance(val, Vec2) else val
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_json(Path(path).read_text())


def check_state(state: StateTime, cfg: ScenarioConfig, tol: float = 1e-9) -> None:
    """Raise ``ValueError`` if ``state`` breaks the speed or workspace bounds."""
    if abs(state.v.x) > cfg.v_max.x + tol or abs(state.v.y) > cfg.v_max.y + tol:
        raise ValueError(f"velocity {tuple(state.v)} exceeds v_max {tuple(cfg.v_max)}")
    ext = cfg.workspace_extent
    if not (-tol <= state.p.x <= ext.x + tol and -tol <= state.p.y <= ext.y + tol):
        raise ValueError(f"position {tuple(state.p)} outside the workspace")


def as_points(values: Iterable) -> np.ndarray:
    return np.asarray([tuple(v) for v in values], dtype=float).reshape(-1, 2)
