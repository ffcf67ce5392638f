"""State-time trajectory planning among moving obstacles.

A triangulation-based state-time A* finds a near-time-optimal path, which
then seeds a MAP trajectory optimisation under a Gaussian-process
smoothness prior and a Timed-ESDF collision likelihood.
"""

from .core import (ConfigError, InvalidTimeError, Obstacle, ObstacleSet, OutOfRangeError,
                   ScenarioConfig, StateTime, Trajectory, Vec2, sample_trajectory)
from .planner import PlanResult, plan_st, plan_vo, plan_wg, replan_loop
from .world import WorldSnapshot, extrapolate, min_clearance

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "InvalidTimeError", "Obstacle", "ObstacleSet", "OutOfRangeError",
    "PlanResult", "ScenarioConfig", "StateTime", "Trajectory", "Vec2", "WorldSnapshot",
    "extrapolate", "min_clearance", "plan_st", "plan_vo", "plan_wg", "replan_loop",
    "sample_trajectory",
]
