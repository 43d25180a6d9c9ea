import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from anglecov.geometry import Cell, DroneState  # noqa: E402


def random_state(rng, spread=1.5) -> DroneState:
    return DroneState(rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                      rng.uniform(0, 2 * math.pi), rng.uniform(0.2, math.pi / 2 - 0.05))


def random_cell(rng, j=0) -> Cell:
    return Cell(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 0.5),
                rng.uniform(-math.pi, math.pi), rng.uniform(math.pi / 6, math.pi / 2), j)


def looking_pair(rng, fov=math.pi / 6):
    """A state and a cell the camera actually sees, with a roughly matching view angle.

    Cells picked uniformly at random are almost never in view, which would
    make gradient checks compare vanishing numbers.
    """
    s = random_state(rng, spread=1.0)
    cv, sv = math.cos(s.phi_v), math.sin(s.phi_v)
    eta = np.array([math.cos(s.phi_h) * cv, math.sin(s.phi_h) * cv, -sv])
    # direction within about fov of the optical axis
    for _ in range(1000):
        d = eta + rng.normal(scale=0.4, size=3)
        d /= np.linalg.norm(d)
        if d[2] < -0.2 and math.acos(np.clip(d @ eta, -1, 1)) < 1.3 * fov:
            break
    r = (s.z_c - rng.uniform(0.0, 0.5)) / -d[2]
    pos = np.array([s.x, s.y, s.z_c]) + r * d
    back = -d + rng.normal(scale=0.15, size=3)
    back /= np.linalg.norm(back)
    tv = math.asin(np.clip(back[2], 0.05, 1.0))
    th = math.atan2(back[1], back[0])
    return s, Cell(pos[0], pos[1], pos[2], th, tv)


def cell_rows(cells):
    return np.array([[c.x, c.y, c.z, c.theta_h, c.theta_v] for c in cells])


def state_tuple(s: DroneState):
    return (s.x, s.y, s.phi_h, s.phi_v, s.z_c)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one status line per acceptance criterion, shown in the terminal summary."""
    def record(n: int, status: str, detail: str) -> None:
        ACCEPTANCE[n] = f"criterion {n:>2}: {status} {detail}"
        print(ACCEPTANCE[n])
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
