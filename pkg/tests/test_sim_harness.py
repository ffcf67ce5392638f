import math

import numpy as np
import pytest

from stplan.core import ConfigError, ObstacleSet, ScenarioConfig
from stplan.planner import replan_loop
from stplan.sim_harness import (BURN_IN, ExperimentConfig, MetricsRow, SimWorld, TrialOutcome,
                                aggregate, init_scenario, metrics_csv, run_experiment, run_trial,
                                step_world)
from stplan.world import WorldSnapshot

CFG = ScenarioConfig()


def test_empty_scenario():
    w, r = init_scenario(CFG, 0, 3)
    assert len(w.obstacles) == 0
    assert tuple(r.p) == (0, 5) and tuple(CFG.goal) == (10, 5)


def test_scenario_is_seeded():
    a, _ = init_scenario(CFG, 40, 9)
    b, _ = init_scenario(CFG, 40, 9)
    c, _ = init_scenario(CFG, 40, 10)
    assert np.array_equal(a.obstacles.positions, b.obstacles.positions)
    assert not np.array_equal(a.obstacles.positions, c.obstacles.positions)


def test_scenario_obstacle_statistics():
    w, r = init_scenario(CFG, 40, 0)
    assert len(w.obstacles) == 40
    speed = np.hypot(*w.obstacles.velocities.T)
    assert np.all((speed >= 1.2) & (speed <= 1.8))
    pos = w.obstacles.positions
    assert np.all((pos >= 0) & (pos <= 10))
    assert np.hypot(*(pos - (0, 5)).T).min() >= CFG.c_eff + 0.2


def test_step_world_interior_and_wrap():
    w = WorldSnapshot(ObstacleSet.from_arrays([[5, 5], [9.95, 4.0]], [[1, 0], [1, 0]], 0.3),
                      0.0, (10, 10))
    s = step_world(w, 0.1)
    assert s.obstacles.positions[0].tolist() == pytest.approx([5.1, 5.0])
    # 9.95 + 0.1 leaves through x = 10, re-enters at x = 0 mirrored in y
    assert s.obstacles.positions[1].tolist() == pytest.approx([0.0, 6.0])
    assert s.t_now == pytest.approx(0.1)
    same = step_world(w, 0.0)
    assert np.array_equal(same.obstacles.positions, w.obstacles.positions)


def test_sim_world_motion_is_pre_wrap():
    w = WorldSnapshot(ObstacleSet.from_arrays([[9.95, 4.0]], [[1, 0]], 0.3), 0.0, (10, 10))
    m = SimWorld(w, init_scenario(CFG, 0, 0)[1], (10, 5)).advance(0.1)
    assert m.after[0].tolist() == pytest.approx([10.05, 4.0])


def test_aggregate_counts_failures_as_timeout():
    outs = [TrialOutcome(0, "success", 6.0, 1.0, 0), TrialOutcome(1, "collision", 12.0, 0.1, 1),
            TrialOutcome(2, "timeout", 30.0, 1.0, 0)]
    row = aggregate(20, "st", outs, 30.0)
    assert row.success_rate == pytest.approx(1 / 3)
    assert row.mean_time_cost == pytest.approx((6 + 30 + 30) / 3)
    assert row.mean_time_cost <= 30.0 and row.n_trials == 3


def test_experiment_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(planner="xx")
    with pytest.raises(ConfigError):
        ExperimentConfig(trials=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(values=(20, -1))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    exp = ExperimentConfig.from_dict({"sweep": "v_max"})
    assert exp.values == (1.2, 1.5, 1.8, 2.1, 2.4)
    cfg, n = exp.point(2.1)
    assert tuple(cfg.v_max) == (2.1, 2.1) and n == 40
    cfg, n = ExperimentConfig(sweep="safe_distance", values=(0.5,)).point(0.5)
    assert cfg.c_eff == 0.5


def test_st_empty_world_experiment():
    rows = run_experiment(ExperimentConfig(planner="st", values=(1,), trials=3))
    # one obstacle is nearly empty; check the zero-obstacle case directly too
    assert len(rows) == 1 and len(rows[0].outcomes) == 3
    times = [run_trial(CFG, "st", 0, s).time_cost for s in range(3)]
    assert all(5.4 <= t <= 6.5 for t in times)


def test_wg_impassable_fixture():
    # a static wall of obstacles across the whole corridor
    ys = np.arange(0.0, 10.01, 0.4)
    pos = np.column_stack([np.full(len(ys), 5.0), ys])
    w = WorldSnapshot(ObstacleSet.from_arrays(pos, np.zeros_like(pos), 0.3), 0.0, (10, 10))
    _, robot = init_scenario(CFG, 0, 0)
    tr = replan_loop(SimWorld(w, robot, (10, 5)), CFG, "wg")
    row = aggregate(0, "wg", [TrialOutcome(0, tr.outcome, tr.time_cost, tr.min_clearance, 0)], 30)
    assert row.success_rate == 0.0 and row.mean_time_cost == 30.0


def test_run_experiment_is_deterministic_and_row_per_value():
    exp = ExperimentConfig(planner="vo", values=(5, 10), trials=4)
    a, b = run_experiment(exp), run_experiment(exp)
    assert len(a) == 2 and all(len(r.outcomes) == 4 for r in a)
    assert metrics_csv(a) == metrics_csv(b)


def test_metrics_csv_format():
    rows = [MetricsRow(20, "st", 0.9, 7.25, 30)]
    assert metrics_csv(rows) == ("sweep_value,planner,success_rate,mean_time_cost,n_trials\n"
                                 "20,st,0.900000,7.250000,30\n")
    assert metrics_csv(rows, {"sequence": "x"}).startswith("sequence,sweep_value")


def test_traces_written(tmp_path):
    run_experiment(ExperimentConfig(planner="wg", values=(5,), trials=2), trace_dir=tmp_path)
    files = sorted(tmp_path.glob("*.jsonl"))
    assert len(files) == 2
