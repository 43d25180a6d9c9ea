"""Closed-loop coverage simulation.

Each control period runs, on start-of-step snapshots:

1. the best-observer partition and per-cell ``hmax``,
2. one barrier QP per drone,
3. an Euler step of the drone states,
4. the importance update with the snapshot ``hmax``,
5. metrics.

Covered points are recorded at the shooting rate from the start-of-step
states. In ``baseline`` mode the gimbal is frozen pointing straight down and
only the planar velocity is controlled.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ScenarioConfig
from .controller import ControlResult, control_step, terms_from_sums
from .engine import Engine
from .field import CellArrays, ImportanceField, export_point_cloud, grid_arrays, objective
from .geometry import DroneState, wrap_angle
from .qpsolve import QpError

log = logging.getLogger(__name__)

BASELINE_PHI_V = math.pi / 2


class SimulationError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class CoverageLedger:
    covered: np.ndarray
    times: list = field(default_factory=list)
    uncovered: list = field(default_factory=list)

    @classmethod
    def empty(cls, m: int) -> "CoverageLedger":
        return cls(np.zeros(m, dtype=bool))

    @property
    def uncovered_count(self) -> int:
        return int(self.covered.size - np.count_nonzero(self.covered))


@dataclass
class StepRecord:
    t: float
    J: float
    states: list
    b_I: np.ndarray
    b_phi: np.ndarray
    w: np.ndarray
    kkt: np.ndarray
    box_active: np.ndarray
    uncovered: int


@dataclass
class World:
    config: ScenarioConfig
    cells: CellArrays
    engine: Engine
    states: list
    field: ImportanceField
    ledger: CoverageLedger
    k: int = 0
    records: list = field(default_factory=list)
    clamp_warnings: int = 0

    @property
    def t(self) -> float:
        return self.k * self.config.dt

    @property
    def frozen(self) -> bool:
        return self.config.mode == "baseline"

    def close(self) -> None:
        self.engine.close()


def make_world(cfg: ScenarioConfig, cells: CellArrays | None = None, deterministic: bool = True) -> World:
    cells = grid_arrays(cfg.grid) if cells is None else cells
    states = list(cfg.drones)
    if cfg.mode == "baseline":
        states = [replace(s, phi_v=BASELINE_PHI_V) for s in states]
    engine = Engine(cells, cfg.camera, workers=cfg.workers, deterministic=deterministic)
    return World(
        config=cfg, cells=cells, engine=engine, states=states,
        field=ImportanceField.uniform(len(cells), cfg.psi0),
        ledger=CoverageLedger.empty(len(cells)),
    )


def record_covered(ledger: CoverageLedger, states, engine: Engine, cover_threshold: float,
                   fov: float, t: float | None = None) -> CoverageLedger:
    """Mark cells seen inside some FOV within ``cover_threshold`` of their view angle."""
    engine.visible(states, fov, cover_threshold, out=ledger.covered)
    if t is not None:
        ledger.times.append(t)
        ledger.uncovered.append(ledger.uncovered_count)
    return ledger


def integrate(s: DroneState, u: np.ndarray, world: World) -> DroneState:
    cfg = world.config
    dt = cfg.dt
    x0, x1, y0, y1 = cfg.workspace
    x = min(max(s.x + u[0] * dt, x0), x1)
    y = min(max(s.y + u[1] * dt, y0), y1)
    phi_h = wrap_angle(s.phi_h + u[2] * dt)
    phi_v = s.phi_v + u[3] * dt
    lo, hi = cfg.controller.phi_min, cfg.controller.phi_max
    if not lo <= phi_v <= hi:
        # the barrier's zero set lies outside the physical range, so this is expected
        world.clamp_warnings += 1
        level = logging.WARNING if world.clamp_warnings == 1 else logging.DEBUG
        log.log(level, "step %d: phi_v %.6g clamped to [%.6g, %.6g]", world.k, phi_v, lo, hi)
        phi_v = min(max(phi_v, lo), hi)
    return DroneState(float(x), float(y), float(phi_h), float(phi_v), s.z_c)


def _controls(world: World, owner: np.ndarray) -> list[ControlResult]:
    cfg = world.config
    params = cfg.controller
    sums = world.engine.accumulate(world.states, world.field.psi, owner,
                                   weight_by_perf=params.xi1_variant == "perf_weighted")
    out = []
    for i, s in enumerate(world.states):
        terms = terms_from_sums(s, sums[i], params, cfg.n)
        try:
            out.append(control_step(s, terms, params, frozen_gimbal=world.frozen))
        except QpError as exc:
            raise SimulationError(world.k, f"drone {i}: {exc}") from exc
    return out


def step(world: World, record: bool = True) -> World:
    """Advance ``world`` by one control period in place and return it."""
    cfg = world.config
    if record and world.k % cfg.shot_every == 0:
        record_covered(world.ledger, world.states, world.engine, cfg.cover_threshold,
                       cfg.camera.fov, world.t)
    J = objective(world.field)
    hmax, owner = world.engine.max_argmax(world.states)
    results = _controls(world, owner)
    rec = StepRecord(
        t=world.t, J=J, states=list(world.states),
        b_I=np.array([r.diagnostics.b_I for r in results]),
        b_phi=np.array([r.diagnostics.b_phi for r in results]),
        w=np.array([r.w for r in results]),
        kkt=np.array([r.diagnostics.kkt_residual for r in results]),
        box_active=np.array([r.diagnostics.box_active for r in results]),
        uncovered=world.ledger.uncovered_count,
    )
    world.states = [integrate(s, r.u, world) for s, r in zip(world.states, results)]
    psi = world.field.psi
    # in-place Euler decay with the start-of-step hmax
    np.multiply(hmax, -cfg.controller.delta * cfg.dt, out=hmax)
    hmax += 1.0
    psi *= hmax
    np.maximum(psi, 0.0, out=psi)
    world.k += 1
    world.records.append(rec)
    return world


def baseline_fixed_camera_step(world: World, record: bool = True) -> World:
    if not world.frozen:
        raise ValueError("world is not configured for the fixed-camera baseline")
    return step(world, record)


def metrics_header(n: int) -> list[str]:
    cols = ["t", "J"]
    for i in range(n):
        cols += [f"{c}_{i}" for c in ("x", "y", "phi_h", "phi_v", "b_I", "b_phi", "w", "kkt")]
    return cols + ["uncovered_count"]


def metrics_row(rec: StepRecord) -> list[str]:
    vals = [rec.t, rec.J]
    for i, s in enumerate(rec.states):
        vals += [s.x, s.y, s.phi_h, s.phi_v, rec.b_I[i], rec.b_phi[i], rec.w[i], rec.kkt[i]]
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite metric at t={rec.t}")
    return [repr(float(v)) for v in vals] + [str(rec.uncovered)]


@dataclass
class RunResult:
    config: ScenarioConfig
    records: list
    ledger: CoverageLedger
    final_states: list
    final_J: float
    clamp_warnings: int
    snapshots: list = field(default_factory=list)

    @property
    def J(self) -> np.ndarray:
        return np.array([r.J for r in self.records] + [self.final_J])

    @property
    def times(self) -> np.ndarray:
        dt = self.config.dt
        return np.arange(len(self.records) + 1) * dt

    def phi_v(self) -> np.ndarray:
        """``(steps + 1, n)`` vertical gimbal angles including the final state."""
        rows = [[s.phi_v for s in r.states] for r in self.records]
        rows.append([s.phi_v for s in self.final_states])
        return np.array(rows)

    def stack(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def run(cfg: ScenarioConfig, out_dir: str | Path | None = None,
        progress: Callable[[World], None] | None = None, steps: int | None = None) -> RunResult:
    """Simulate ``cfg`` for its full duration.

    With ``out_dir`` the metrics CSV and periodic psi snapshots are written
    there as the run progresses.
    """
    steps = cfg.steps if steps is None else steps
    snap_every = max(1, int(round(cfg.snapshot_every / cfg.dt)))
    out = Path(out_dir) if out_dir is not None else None
    snapshots = []
    world = make_world(cfg)
    fh = writer = None
    try:
        if out is not None:
            (out / "snapshots").mkdir(parents=True, exist_ok=True)
            fh = (out / "metrics.csv").open("w", newline="")
            writer = csv.writer(fh)
            writer.writerow(metrics_header(cfg.n))
        for _ in range(steps):
            if out is not None and world.k % snap_every == 0:
                snapshots.append(_snapshot(out, world))
            step(world)
            if writer is not None:
                writer.writerow(metrics_row(world.records[-1]))
            if progress is not None:
                progress(world)
        # closing shot and snapshot at the final time
        if world.k % cfg.shot_every == 0:
            record_covered(world.ledger, world.states, world.engine, cfg.cover_threshold,
                           cfg.camera.fov, world.t)
        if out is not None:
            snapshots.append(_snapshot(out, world))
        return RunResult(cfg, world.records, world.ledger, list(world.states),
                         objective(world.field), world.clamp_warnings, snapshots)
    finally:
        if fh is not None:
            fh.close()
        world.close()


def _snapshot(out: Path, world: World) -> Path:
    name = f"psi_t{world.t:08.2f}.csv"
    return export_point_cloud(out / "snapshots" / name, world.field, world.config.grid)


def uncovered_series(result: RunResult) -> tuple[np.ndarray, np.ndarray]:
    return np.array(result.ledger.times), np.array(result.ledger.uncovered)
