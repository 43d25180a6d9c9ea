"""Discretized 5D observation space and the importance field over it.

Cells are ordered row-major with ``x`` slowest and ``theta_v`` fastest, so a
flat cell index ``j`` decomposes as::

    j = (((ix * ny + iy) * nz + iz) * nh + ih) * nv + iv

The order is part of the public contract; snapshot files and cell indices
depend on it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Cell

AXES = ("x", "y", "z", "theta_h", "theta_v")

# fractional slack when deciding how many whole cells fit on an axis
_COUNT_SLACK = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Bounds and cell edge lengths for each of the five axes.

    ``bounds`` maps axis name to ``(lo, hi)``; ``resolution`` maps axis name
    to the cell edge length. The number of cells on an axis is the number of
    whole cells that fit in the span, so every cell center lies inside the
    bounds.
    """

    bounds: dict
    resolution: dict

    def __post_init__(self) -> None:
        for axis in AXES:
            if axis not in self.bounds or axis not in self.resolution:
                raise ValueError(f"grid spec is missing axis {axis!r}")
            lo, hi = self.bounds[axis]
            res = self.resolution[axis]
            if not lo < hi:
                raise ValueError(f"axis {axis}: lower bound {lo} must be below upper bound {hi}")
            if res <= 0:
                raise ValueError(f"axis {axis}: resolution must be positive, got {res}")
            if res > (hi - lo) * (1.0 + _COUNT_SLACK):
                raise ValueError(f"axis {axis}: resolution {res} exceeds span {hi - lo}")
        if self.bounds["theta_v"][0] + 0.5 * self.resolution["theta_v"] <= 0.0:
            raise ValueError("theta_v cell centers must be strictly positive")

    @property
    def counts(self) -> tuple[int, ...]:
        out = []
        for axis in AXES:
            lo, hi = self.bounds[axis]
            out.append(max(1, int(math.floor((hi - lo) / self.resolution[axis] + _COUNT_SLACK))))
        return tuple(out)

    @property
    def m(self) -> int:
        return math.prod(self.counts)

    def axis_centers(self, axis: str) -> np.ndarray:
        k = AXES.index(axis)
        lo = self.bounds[axis][0]
        res = self.resolution[axis]
        return lo + (np.arange(self.counts[k]) + 0.5) * res

    @property
    def cell_volume(self) -> float:
        return math.prod(self.resolution[a] for a in AXES)

    @property
    def volume(self) -> float:
        return math.prod(hi - lo for lo, hi in (self.bounds[a] for a in AXES))


@dataclass
class CellArrays:
    """Structure-of-arrays view of all cell representative points."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    theta_h: np.ndarray
    theta_v: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, idx) -> "CellArrays":
        return CellArrays(*(np.ascontiguousarray(np.atleast_1d(a[idx])) for a in self.columns()))

    def columns(self) -> tuple[np.ndarray, ...]:
        return (self.x, self.y, self.z, self.theta_h, self.theta_v)

    def cell(self, j: int) -> Cell:
        return Cell(float(self.x[j]), float(self.y[j]), float(self.z[j]),
                    float(self.theta_h[j]), float(self.theta_v[j]), int(j))

    def to_cells(self) -> list[Cell]:
        return [self.cell(j) for j in range(len(self))]

    @classmethod
    def from_cells(cls, cells: Sequence[Cell]) -> "CellArrays":
        cols = np.array([[q.x, q.y, q.z, q.theta_h, q.theta_v] for q in cells], dtype=float)
        cols = cols.reshape(-1, 5)
        return cls(*(np.ascontiguousarray(cols[:, k]) for k in range(5)))


def grid_arrays(spec: GridSpec) -> CellArrays:
    centers = [spec.axis_centers(a) for a in AXES]
    mesh = np.meshgrid(*centers, indexing="ij")
    return CellArrays(*(np.ascontiguousarray(g.ravel()) for g in mesh))


def build_grid(spec: GridSpec) -> list[Cell]:
    """All cells of ``spec`` as :class:`Cell` objects, in canonical order.

    Use :func:`grid_arrays` for anything beyond a few hundred thousand cells.
    """
    return grid_arrays(spec).to_cells()


@dataclass
class ImportanceField:
    psi: np.ndarray
    psi0: float = 1.0

    @classmethod
    def uniform(cls, m: int, psi0: float = 1.0) -> "ImportanceField":
        if psi0 < 0:
            raise ValueError("psi0 must be nonnegative")
        return cls(np.full(m, float(psi0)), float(psi0))

    def __len__(self) -> int:
        return len(self.psi)


def check_step(delta: float, dt: float) -> None:
    if delta <= 0 or dt <= 0:
        raise ValueError(f"delta and dt must be positive (delta={delta}, dt={dt})")
    if delta * dt >= 1.0:
        raise ValueError(f"delta*dt must be < 1 for a stable update, got {delta * dt}")


def update_importance(field: ImportanceField, hmax: np.ndarray, delta: float, dt: float) -> ImportanceField:
    """One explicit Euler step of ``psi' = -delta * hmax * psi``."""
    check_step(delta, dt)
    hmax = np.asarray(hmax, dtype=float)
    if hmax.shape != field.psi.shape:
        raise ValueError(f"hmax has shape {hmax.shape}, expected {field.psi.shape}")
    psi = field.psi * (1.0 - (delta * dt) * hmax)
    np.maximum(psi, 0.0, out=psi)
    return ImportanceField(psi, field.psi0)


def objective(field: ImportanceField) -> float:
    """Sum of all importance indices, reduced in a fixed block order."""
    from .engine import block_sum

    return block_sum(field.psi)


def angular_mean(psi: np.ndarray, spec: GridSpec) -> np.ndarray:
    nx, ny, nz, nh, nv = spec.counts
    return psi.reshape(nx * ny * nz, nh * nv).mean(axis=1)


def export_point_cloud(path: str | Path, field: ImportanceField, spec: GridSpec) -> Path:
    """Write ``x,y,z,psi_mean`` rows, averaging psi over both view angles."""
    path = Path(path)
    xs, ys, zs = (spec.axis_centers(a) for a in ("x", "y", "z"))
    gx, gy, gz = (g.ravel() for g in np.meshgrid(xs, ys, zs, indexing="ij"))
    mean = angular_mean(field.psi, spec)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z", "psi_mean"])
        for row in zip(gx, gy, gz, mean):
            writer.writerow([repr(float(v)) for v in row])
    return path


def desk_grid_spec() -> GridSpec:
    """The coarse desk-scale grid: 0.1 m spatial and pi/15 angular cells."""
    return GridSpec(
        bounds={"x": (-1.0, 1.0), "y": (-1.0, 1.0), "z": (0.0, 0.5),
                "theta_h": (-math.pi, math.pi), "theta_v": (math.pi / 6, math.pi / 2)},
        resolution={"x": 0.1, "y": 0.1, "z": 0.1,
                    "theta_h": math.pi / 15, "theta_v": math.pi / 15},
    )
