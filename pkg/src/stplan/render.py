"""SVG figures: planned trajectory over swept obstacles, Timed-ESDF slices."""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Circle, Rectangle  # noqa: E402

from .core import Trajectory  # noqa: E402
from .timed_esdf import TimedEsdf, sample_slice  # noqa: E402
from .world import WorldSnapshot  # noqa: E402

TRAJECTORY_GID = "trajectory"


@contextmanager
def _svg_settings(deterministic: bool):
    with matplotlib.rc_context({"svg.hashsalt": "stplan" if deterministic else None,
                                "svg.fonttype": "none"}):
        yield


def _save(fig, path, deterministic: bool) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Date": None} if deterministic else {}
    fig.savefig(path, format="svg", metadata=meta)
    plt.close(fig)
    return path


def render_plan(path, world: WorldSnapshot, trajectory: Trajectory, goal=None,
                c_eff: float | None = None, deterministic: bool = False) -> Path:
    """Obstacles at plan time, the segments they sweep over the plan, and the plan itself."""
    with _svg_settings(deterministic):
        fig, ax = plt.subplots(figsize=(5, 5))
        ext = tuple(world.workspace_extent)
        ax.add_patch(Rectangle((0, 0), ext[0], ext[1], fill=False, lw=0.8, color="0.4"))
        obs = world.obstacles
        span = trajectory.t_final - world.t_now
        r = world.radius if c_eff is None else c_eff
        for p, v in zip(obs.positions, obs.velocities):
            q = p + v * span
            ax.plot([p[0], q[0]], [p[1], q[1]], color="tab:red", lw=0.6, alpha=0.5)
            ax.add_patch(Circle(tuple(p), r, color="tab:red", alpha=0.25, lw=0))
        xy = trajectory.states[:, :2]
        (line,) = ax.plot(xy[:, 0], xy[:, 1], color="tab:blue", lw=1.5)
        line.set_gid(TRAJECTORY_GID)
        ax.plot(xy[0, 0], xy[0, 1], "o", color="tab:blue", ms=4)
        if goal is not None:
            ax.plot(goal[0], goal[1], "*", color="tab:green", ms=9)
        ax.set_xlim(-0.5, ext[0] + 0.5)
        ax.set_ylim(-0.5, ext[1] + 0.5)
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_title(f"plan from t = {world.t_now:.1f} s, {len(obs)} obstacles")
        return _save(fig, path, deterministic)


def render_esdf(path, field: TimedEsdf, i: int, extent, resolution: float = 0.1,
                velocity=(0.0, 0.0), deterministic: bool = False) -> Path:
    """Filled contours of the Timed-ESDF distance on slice ``i`` for a fixed robot velocity."""
    xs, ys, dist = sample_slice(field, i, resolution, extent, velocity)
    with _svg_settings(deterministic):
        fig, ax = plt.subplots(figsize=(5.6, 5))
        finite = np.where(np.isfinite(dist), dist, np.nan)
        cs = ax.contourf(xs, ys, finite, levels=20, cmap="viridis")
        ax.contour(xs, ys, finite, levels=[0.0], colors="white", linewidths=1.0)
        fig.colorbar(cs, ax=ax, label="d [m]")
        for a in field.starts[i]:
            ax.plot(a[0], a[1], ".", color="tab:red", ms=3)
        ax.set_aspect("equal")
        ax.set_title(f"Timed-ESDF slice {i} (t = {field.t0 + i * field.dt:.1f} s)")
        return _save(fig, path, deterministic)
