import math
from dataclasses import replace

import numpy as np
import pytest

from anglecov import simulator
from anglecov.config import ScenarioConfig, loads_config
from anglecov.controller import ControllerParams
from anglecov.engine import Engine
from anglecov.field import CellArrays, GridSpec, grid_arrays
from anglecov.geometry import CameraParams, Cell, DroneState, perf
from anglecov.qpsolve import QpError
from anglecov.simulator import (
    BASELINE_PHI_V, CoverageLedger, SimulationError, baseline_fixed_camera_step, make_world,
    metrics_header, record_covered, run, step,
)

BOUNDS = {"x": (-1.0, 1.0), "y": (-1.0, 1.0), "z": (0.0, 0.5),
          "theta_h": (-math.pi, math.pi), "theta_v": (math.pi / 6, math.pi / 2)}
DRONES = (DroneState(1.0, 0.2, 0.0, math.pi / 2), DroneState(-1.0, -0.2, 0.0, math.pi / 2),
          DroneState(0.0, 0.5, 0.0, math.pi / 2))


def small_grid(res_xy=0.25, res_z=0.25, res_h=math.pi / 4, res_v=math.pi / 6, bounds=BOUNDS):
    return GridSpec(bounds, {"x": res_xy, "y": res_xy, "z": res_z, "theta_h": res_h, "theta_v": res_v})


def scenario(grid=None, rate=0.3, **kw):
    grid = grid or small_grid()
    gamma = rate * grid.m / grid.volume
    kw.setdefault("controller", ControllerParams(gamma=gamma))
    kw.setdefault("duration", 6.0)
    return ScenarioConfig(grid=grid, drones=DRONES, **kw)


def test_one_step_by_hand():
    # ten cells, a tiny decay gain, both drones mirror images of each other
    grid = GridSpec({"x": (-0.5, 0.5), "y": (-0.05, 0.05), "z": (0.0, 0.1),
                     "theta_h": (-math.pi, math.pi), "theta_v": (1.4, 1.5)},
                    {"x": 0.1, "y": 0.1, "z": 0.1, "theta_h": 2 * math.pi, "theta_v": 0.1})
    assert grid.m == 10
    drones = (DroneState(0.3, 0.0, math.pi, 1.3), DroneState(-0.3, 0.0, 0.0, 1.3))
    delta = 1e-3
    cfg = ScenarioConfig(grid=grid, drones=drones, duration=0.1,
                         controller=ControllerParams(gamma=1e-9, delta=delta))
    cells = grid_arrays(grid).to_cells()
    hmax = np.array([max(perf(s, q, cfg.camera) for s in drones) for q in cells])
    expected = 10.0 - delta * cfg.dt * math.fsum(hmax)
    res = run(cfg)
    assert res.J[0] == 10.0
    assert res.final_J == pytest.approx(expected, rel=1e-14)
    # nothing asks the drones to move
    assert res.final_states == list(drones)


def test_zero_input_keeps_states_and_decays_psi():
    cfg = scenario(controller=ControllerParams(gamma=1e-12), duration=1.0)
    world = make_world(cfg)
    try:
        hmax0 = world.engine.max_argmax(world.states)[0].copy()
        for _ in range(3):
            step(world)
        assert world.states == list(cfg.drones)
        seen = hmax0 > 1e-12
        assert seen.any()
        assert np.all(world.field.psi[seen] < 1.0)
        assert np.all(world.field.psi[hmax0 == 0] == 1.0)
    finally:
        world.close()


@pytest.fixture(scope="module")
def gimbal_run():
    return run(scenario(duration=12.0))


@pytest.fixture(scope="module")
def baseline_run():
    return run(scenario(duration=12.0, mode="baseline"))


def test_monotone_objective_and_coverage(gimbal_run, baseline_run):
    for res in (gimbal_run, baseline_run):
        assert np.all(np.diff(res.J) <= 0)
        assert np.all(np.diff(res.ledger.uncovered) <= 0)
        assert np.all(np.diff(res.stack("uncovered")) <= 0)


def test_drones_move_and_cover(gimbal_run):
    assert gimbal_run.final_states != list(DRONES)
    assert gimbal_run.ledger.uncovered[-1] < gimbal_run.ledger.uncovered[0]


def test_containment(gimbal_run, baseline_run):
    cfg = gimbal_run.config
    x0, x1, y0, y1 = cfg.workspace
    for res in (gimbal_run, baseline_run):
        for rec in res.records:
            for s in rec.states:
                assert x0 <= s.x <= x1 and y0 <= s.y <= y1
                assert 0.0 <= s.phi_h < 2 * math.pi
    pv = gimbal_run.phi_v()
    assert np.all(pv >= cfg.controller.phi_min - 1e-6) and np.all(pv <= cfg.controller.phi_max + 1e-6)


def test_baseline_keeps_gimbal_fixed(baseline_run):
    assert np.all(baseline_run.phi_v() == BASELINE_PHI_V)
    for rec in baseline_run.records:
        assert all(s.phi_h == 0.0 for s in rec.states)


def test_rate_when_slack_nonnegative(gimbal_run):
    cfg = gimbal_run.config
    gamma = cfg.controller.gamma
    J = gimbal_run.J
    w = gimbal_run.stack("w")
    box = gimbal_run.stack("box_active")
    ok = np.all(w >= 0, axis=1) & ~np.any(box, axis=1)
    assert ok.any()
    slopes = np.diff(J) / cfg.dt
    assert np.all(slopes[ok] <= -gamma * (1 - 1e-9))


def test_record_covered_examples():
    thr = math.pi / 16
    down = DroneState(0.0, 0.0, 0.0, math.pi / 2)
    cells = CellArrays.from_cells([
        Cell(0.0, 0.0, 0.0, 0.0, math.pi / 2),
        Cell(0.9, 0.0, 0.0, 0.0, math.pi / 2),
        Cell(0.0, 0.0, 0.0, 0.0, math.pi / 2 - thr),
        Cell(0.0, 0.0, 0.0, 0.0, math.pi / 2 - thr - 1e-6),
    ])
    ledger = CoverageLedger.empty(len(cells))
    with Engine(cells, CameraParams()) as eng:
        record_covered(ledger, [down], eng, thr, math.pi / 6, t=0.0)
    assert ledger.covered.tolist() == [True, False, True, False]
    assert ledger.uncovered == [2]


def test_covered_is_sticky():
    cells = CellArrays.from_cells([Cell(0.0, 0.0, 0.0, 0.0, math.pi / 2)])
    ledger = CoverageLedger.empty(1)
    with Engine(cells, CameraParams()) as eng:
        record_covered(ledger, [DroneState(0, 0, 0, math.pi / 2)], eng, 0.1, math.pi / 6)
        record_covered(ledger, [DroneState(5, 5, 0, math.pi / 2)], eng, 0.1, math.pi / 6)
    assert ledger.covered[0]


def test_shots_follow_shooting_rate(gimbal_run):
    times = np.array(gimbal_run.ledger.times)
    np.testing.assert_allclose(np.diff(times), 0.2, atol=1e-12)
    assert times[0] == 0.0 and times[-1] == pytest.approx(12.0)


def test_metrics_header():
    cols = metrics_header(2)
    assert cols[:4] == ["t", "J", "x_0", "y_0"]
    assert cols[-1] == "uncovered_count"
    assert len(cols) == 2 + 2 * 8 + 1


def test_solver_failure_reports_step(monkeypatch):
    calls = {"n": 0}
    real = simulator.control_step

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] > 7:
            raise QpError("boom")
        return real(*a, **k)

    monkeypatch.setattr(simulator, "control_step", flaky)
    with pytest.raises(SimulationError) as info:
        run(scenario(duration=1.0))
    assert info.value.step == 2
    assert "step 2" in str(info.value)


def test_baseline_step_requires_baseline_world():
    world = make_world(scenario())
    try:
        with pytest.raises(ValueError):
            baseline_fixed_camera_step(world)
    finally:
        world.close()


def test_run_is_deterministic(tmp_path):
    cfg = scenario(duration=2.0)
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert len(a.splitlines()) == 21


def test_zenith_only_field_gimbal_gives_no_edge():
    bounds = dict(BOUNDS, theta_v=(math.pi / 2 - math.pi / 12, math.pi / 2))
    grid = small_grid(res_xy=0.2, res_z=0.25, res_h=math.pi / 6, res_v=math.pi / 12, bounds=bounds)
    g = run(scenario(grid, duration=40.0))
    b = run(scenario(grid, duration=40.0, mode="baseline"))
    ratio = g.ledger.uncovered_count / b.ledger.uncovered_count
    assert ratio == pytest.approx(1.0, abs=0.15)
