"""Per-drone barrier constraints and the QP control step.

Each drone keeps its coverage contribution

    I_i = sum over owned cells of delta * h(p_i, q_j) * psi_j

above ``gamma / n`` and its gimbal vertical angle inside ``[phi_min, phi_max]``
by solving, every control period,

    minimize    eps * |u|^2 + w^2
    subject to  xi1 . u + xi2 >= w
                chi1 . u + chi2 >= 0
                u inside the velocity box.

Linear class-K functions ``alpha(b) = a * b`` are used for both barriers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import ACC_GH, ACC_GV, ACC_GX, ACC_GY, ACC_H, ACC_H2, Engine
from .field import CellArrays
from .geometry import CameraParams, Cell, DroneState
from .qpsolve import QpError, QpProblem, solve

XI1_VARIANTS = ("chain_rule", "perf_weighted")


@dataclass(frozen=True)
class ControllerParams:
    """Gains and limits of the per-drone QP.

    ``xi1_variant`` picks the gradient term of the coverage constraint:
    ``"chain_rule"`` is the chain-rule derivative of I_i, ``"perf_weighted"`` carries
    an extra factor h per cell.
    """

    gamma: float = 0.05
    a1: float = 5.0
    a2: float = 1.0
    delta: float = 5.0
    epsilon: float = 1e-4
    phi_min: float = 0.0
    phi_max: float = math.pi / 2
    v_xy: float = 0.5
    v_angle: float = 1.0
    xi1_variant: str = "chain_rule"

    def __post_init__(self) -> None:
        for name in ("gamma", "a1", "a2", "delta", "epsilon", "v_xy", "v_angle"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.phi_min < self.phi_max <= math.pi / 2:
            raise ValueError("need 0 <= phi_min < phi_max <= pi/2")
        if self.xi1_variant not in XI1_VARIANTS:
            raise ValueError(f"xi1_variant must be one of {XI1_VARIANTS}")

    @property
    def phi_mid(self) -> float:
        return 0.5 * (self.phi_min + self.phi_max)


@dataclass
class CbfTerms:
    xi1: np.ndarray
    xi2: float
    chi1: np.ndarray
    chi2: float
    I_i: float
    b_I: float
    b_phi: float


@dataclass
class ControlDiagnostics:
    b_I: float
    b_phi: float
    kkt_residual: float
    active: list = field(default_factory=list)
    box_active: bool = False
    violating: bool = False
    degenerate: bool = False


@dataclass
class ControlResult:
    u: np.ndarray
    w: float
    diagnostics: ControlDiagnostics


def _as_arrays(cells) -> CellArrays:
    if isinstance(cells, CellArrays):
        return cells
    return CellArrays.from_cells(list(cells))


def _sums(s: DroneState, cells, psi, c: CameraParams, weight_by_perf: bool = False) -> np.ndarray:
    arrays = _as_arrays(cells)
    psi = np.asarray(psi, dtype=float)
    if len(arrays) == 0:
        return np.zeros(6)
    with Engine(arrays, c) as eng:
        return eng.accumulate([s], psi, owner=np.zeros(len(arrays), dtype=np.intp),
                              weight_by_perf=weight_by_perf)[0]


def coverage_contribution(s: DroneState, cells_owned: Sequence[Cell] | CellArrays, psi,
                          delta: float, c: CameraParams) -> float:
    """``I_i``: delta times the perf-weighted importance of the owned cells."""
    return delta * float(_sums(s, cells_owned, psi, c)[ACC_H])


def gimbal_barrier(phi_v: float, params: ControllerParams) -> float:
    span = params.phi_max - params.phi_min
    return span * span - (phi_v - params.phi_mid) ** 2


def terms_from_sums(s: DroneState, sums: np.ndarray, params: ControllerParams, n: int) -> CbfTerms:
    """Assemble the constraint data from per-drone accumulator sums.

    ``sums`` is one row of :meth:`Engine.accumulate`; the gradient columns
    must already match ``params.xi1_variant``.
    """
    d = params.delta
    I_i = d * float(sums[ACC_H])
    xi1 = d * np.array([sums[ACC_GX], sums[ACC_GY], sums[ACC_GH], sums[ACC_GV]], dtype=float)
    xi2 = -params.a1 * params.gamma / n + (-d * d * float(sums[ACC_H2]) + params.a1 * I_i)
    off = s.phi_v - params.phi_mid
    chi1 = np.array([0.0, 0.0, 0.0, -2.0 * off])
    b_phi = gimbal_barrier(s.phi_v, params)
    return CbfTerms(xi1=xi1, xi2=xi2, chi1=chi1, chi2=params.a2 * b_phi,
                    I_i=I_i, b_I=I_i - params.gamma / n, b_phi=b_phi)


def cbf_terms(s: DroneState, cells_owned: Sequence[Cell] | CellArrays, psi,
              params: ControllerParams, c: CameraParams, n: int = 1) -> CbfTerms:
    """Barrier constraint data for drone ``s`` over the cells it owns.

    ``n`` is the total number of drones, which splits the decay target
    ``gamma`` evenly among them.
    """
    sums = _sums(s, cells_owned, psi, c, weight_by_perf=params.xi1_variant == "perf_weighted")
    return terms_from_sums(s, sums, params, n)


def velocity_box(params: ControllerParams, frozen_gimbal: bool = False) -> tuple[np.ndarray, np.ndarray]:
    va = 0.0 if frozen_gimbal else params.v_angle
    upper = np.array([params.v_xy, params.v_xy, va, va])
    return -upper, upper


def build_problem(terms: CbfTerms, params: ControllerParams, frozen_gimbal: bool = False) -> QpProblem:
    """QP over ``(u, w)``; with ``frozen_gimbal`` only ``(u_x, u_y, w)`` are variables."""
    lo, hi = velocity_box(params)
    if frozen_gimbal:
        return QpProblem(
            diag=np.array([params.epsilon] * 2 + [1.0]),
            rows=np.array([np.append(terms.xi1[:2], -1.0)]),
            offsets=np.array([terms.xi2]),
            lower=np.append(lo[:2], -np.inf),
            upper=np.append(hi[:2], np.inf),
        )
    return QpProblem(
        diag=np.array([params.epsilon] * 4 + [1.0]),
        rows=np.array([np.append(terms.xi1, -1.0), np.append(terms.chi1, 0.0)]),
        offsets=np.array([terms.xi2, terms.chi2]),
        lower=np.append(lo, -np.inf),
        upper=np.append(hi, np.inf),
    )


def control_step(s: DroneState, terms: CbfTerms, params: ControllerParams,
                 frozen_gimbal: bool = False, kkt_tol: float = 1e-6) -> ControlResult:
    """Solve the drone's QP for velocity command ``u`` and slack ``w``.

    With ``frozen_gimbal`` both angular inputs are held at zero and the
    gimbal constraint is dropped, which leaves a planar-only controller.
    Raises :class:`QpError` when the solver does not certify its answer.
    """
    if not (np.all(np.isfinite(terms.xi1)) and np.all(np.isfinite(terms.chi1))
            and math.isfinite(terms.xi2) and math.isfinite(terms.chi2)):
        raise QpError("non-finite constraint data")
    res = solve(build_problem(terms, params, frozen_gimbal))
    if not res.ok or res.kkt_residual > kkt_tol:
        raise QpError(f"QP solve failed: status={res.status}, kkt={res.kkt_residual:.3e}")
    nu = 2 if frozen_gimbal else 4
    u = np.zeros(4)
    u[:nu] = res.x[:nu]
    w = float(res.x[nu])
    active = [("coverage", "gimbal")[k] for k in res.active_rows]
    active += [f"lower{k}" for k in res.active_lower if k < nu]
    active += [f"upper{k}" for k in res.active_upper if k < nu]
    lo, hi = velocity_box(params)
    tol = 1e-9 * hi[:nu]
    box_active = bool(np.any(u[:nu] <= lo[:nu] + tol) or np.any(u[:nu] >= hi[:nu] - tol))
    diag = ControlDiagnostics(
        b_I=terms.b_I, b_phi=terms.b_phi, kkt_residual=res.kkt_residual, active=active,
        box_active=box_active, violating=w < 0.0, degenerate=res.degenerate,
    )
    return ControlResult(u, w, diag)
