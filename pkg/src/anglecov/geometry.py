"""Camera and viewpoint geometry for a single (drone, cell) pair.

These are the scalar reference routines. They favour clarity over speed;
:mod:`anglecov.engine` holds the vectorized versions used in simulation and
is tested against the functions here.

Conventions
-----------
* The gimbal vertical angle ``phi_v`` is measured downward from the horizon,
  so ``phi_v = pi/2`` points the camera straight down.
* The drone body rotation is the identity; yaw is carried by ``phi_h``.
* ``view_direction`` points from the cell toward its ideal observer, and the
  angle-match term compares it against the cell-to-drone direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi

# arccos arguments are clamped to this band when evaluating angles
ACOS_CLAMP = 1.0 - 1e-12
# derivative of arccos is evaluated no closer to +-1 than this
GUARD_BAND = 1.0 - 1e-7
GUARD_SIN = math.sqrt(1.0 - GUARD_BAND * GUARD_BAND)
# drone-to-cell vectors shorter than this are treated as degenerate
DEGENERATE_DIST = 1e-9

H1_MODES = ("literal", "clamped")


def wrap_angle(angle: float) -> float:
    """Wrap an angle into ``[0, 2*pi)``."""
    wrapped = math.fmod(angle, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    # fmod of a tiny negative number can round back up to 2*pi
    if wrapped >= TWO_PI:
        wrapped = 0.0
    return wrapped


@dataclass(frozen=True)
class DroneState:
    x: float
    y: float
    phi_h: float
    phi_v: float
    z_c: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "phi_h", wrap_angle(float(self.phi_h)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi_h, self.phi_v], dtype=float)

    @classmethod
    def from_array(cls, p, z_c: float = 1.0) -> "DroneState":
        return cls(float(p[0]), float(p[1]), float(p[2]), float(p[3]), z_c)


@dataclass(frozen=True)
class Cell:
    x: float
    y: float
    z: float
    theta_h: float
    theta_v: float
    index: int = 0


@dataclass(frozen=True)
class CameraParams:
    """Field of view half-angle and the two Gaussian widths of ``perf``.

    ``h1_mode`` selects between the FOV term as written, which peaks on the
    FOV boundary ring, and a clamped variant that is zero anywhere inside
    the cone.
    """

    fov: float = math.pi / 6
    sigma1: float = 0.13
    sigma2: float = 0.18
    h1_mode: str = "literal"

    def __post_init__(self) -> None:
        if not 0.0 < self.fov < math.pi / 2:
            raise ValueError(f"fov must lie in (0, pi/2), got {self.fov}")
        if self.sigma1 <= 0.0 or self.sigma2 <= 0.0:
            raise ValueError("sigma1 and sigma2 must be positive")
        if self.h1_mode not in H1_MODES:
            raise ValueError(f"h1_mode must be one of {H1_MODES}, got {self.h1_mode!r}")


class CellOffset(NamedTuple):
    vector: np.ndarray
    degenerate: bool


def optical_axis(s: DroneState) -> np.ndarray:
    cv = math.cos(s.phi_v)
    return np.array([math.cos(s.phi_h) * cv, math.sin(s.phi_h) * cv, -math.sin(s.phi_v)])


def drone_to_cell_vector(s: DroneState, q: Cell) -> CellOffset:
    v = np.array([q.x - s.x, q.y - s.y, q.z - s.z_c])
    return CellOffset(v, bool(np.linalg.norm(v) < DEGENERATE_DIST))


def view_direction(q: Cell) -> np.ndarray:
    cv = math.cos(q.theta_v)
    return np.array([math.cos(q.theta_h) * cv, math.sin(q.theta_h) * cv, math.sin(q.theta_v)])


def _clamped_acos(c: float) -> float:
    return math.acos(min(max(c, -ACOS_CLAMP), ACOS_CLAMP))


def _unit_offset(s: DroneState, q: Cell) -> tuple[np.ndarray, float] | None:
    v, degenerate = drone_to_cell_vector(s, q)
    if degenerate:
        return None
    r = float(np.linalg.norm(v))
    return v / r, r


def fov_angle(s: DroneState, q: Cell) -> float:
    """Angle between the optical axis and the line of sight to ``q``."""
    unit = _unit_offset(s, q)
    if unit is None:
        return math.inf
    return _clamped_acos(float(optical_axis(s) @ unit[0]))


def view_mismatch(s: DroneState, q: Cell) -> float:
    """Angle between the cell's desired view direction and the cell-to-drone direction."""
    unit = _unit_offset(s, q)
    if unit is None:
        return math.inf
    return _clamped_acos(float(-(view_direction(q) @ unit[0])))


def h1(s: DroneState, q: Cell, c: CameraParams) -> float:
    angle = fov_angle(s, q)
    if math.isinf(angle):
        return math.inf
    if c.h1_mode == "clamped":
        return max(0.0, angle - c.fov) ** 2
    return (c.fov - angle) ** 2


def h2(s: DroneState, q: Cell) -> float:
    angle = view_mismatch(s, q)
    if math.isinf(angle):
        return math.inf
    return angle**2


def perf(s: DroneState, q: Cell, c: CameraParams) -> float:
    """Observation quality of ``q`` from ``s``, in ``[0, 1]``."""
    a = h1(s, q, c)
    b = h2(s, q)
    if math.isinf(a) or math.isinf(b):
        return 0.0
    return math.exp(-a / (2.0 * c.sigma1**2)) * math.exp(-b / (2.0 * c.sigma2**2))


def _inv_sin_acos(c: float) -> tuple[float, bool]:
    """Return ``1/sqrt(1-c^2)`` evaluated inside the guard band, and whether it was hit."""
    guarded = abs(c) > GUARD_BAND
    cg = min(max(c, -GUARD_BAND), GUARD_BAND)
    return 1.0 / math.sqrt(1.0 - cg * cg), guarded


def perf_gradient_full(s: DroneState, q: Cell, c: CameraParams) -> tuple[np.ndarray, bool]:
    """Gradient of :func:`perf` with respect to ``(x, y, phi_h, phi_v)``.

    Returns the gradient and a flag telling whether either arccos argument
    fell inside the guard band, where the derivative is evaluated at the
    clamped argument instead of the true one.
    """
    unit = _unit_offset(s, q)
    if unit is None:
        return np.zeros(4), False
    d, r = unit
    eta = optical_axis(s)
    sh, ch = math.sin(s.phi_h), math.cos(s.phi_h)
    sv, cv = math.sin(s.phi_v), math.cos(s.phi_v)
    deta_h = np.array([-sh * cv, ch * cv, 0.0])
    deta_v = np.array([-ch * sv, -sh * sv, -cv])

    # moving the drone by +e_x moves the offset by -e_x
    c1 = float(eta @ d)
    dc1 = np.array(
        [
            -(eta[0] - c1 * d[0]) / r,
            -(eta[1] - c1 * d[1]) / r,
            float(deta_h @ d),
            float(deta_v @ d),
        ]
    )
    vj = view_direction(q)
    c2 = -float(vj @ d)
    dc2 = np.array([(vj[0] + c2 * d[0]) / r, (vj[1] + c2 * d[1]) / r, 0.0, 0.0])

    a1 = _clamped_acos(c1)
    a2 = _clamped_acos(c2)
    inv1, g1 = _inv_sin_acos(c1)

    # d(acos c) = -dc / sin(acos c)
    da1 = -dc1 * inv1
    if c.h1_mode == "clamped":
        dh1 = 2.0 * max(0.0, a1 - c.fov) * da1
        h1v = max(0.0, a1 - c.fov) ** 2
    else:
        dh1 = -2.0 * (c.fov - a1) * da1
        h1v = (c.fov - a1) ** 2
    # a2/sin(a2) stays bounded as a2 -> 0; only the a2 -> pi end needs a floor
    sin2 = math.sin(a2)
    g2 = c2 < 0.0 and sin2 < GUARD_SIN
    if c2 < 0.0:
        sin2 = max(sin2, GUARD_SIN)
    ratio2 = a2 / sin2
    dh2 = -2.0 * ratio2 * dc2
    h2v = a2 * a2

    val = math.exp(-h1v / (2.0 * c.sigma1**2)) * math.exp(-h2v / (2.0 * c.sigma2**2))
    grad = -val * (dh1 / (2.0 * c.sigma1**2) + dh2 / (2.0 * c.sigma2**2))
    return grad, bool(g1 or g2)


def perf_gradient(s: DroneState, q: Cell, c: CameraParams) -> np.ndarray:
    return perf_gradient_full(s, q, c)[0]
