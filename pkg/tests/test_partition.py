import math

import numpy as np
import pytest

from anglecov.engine import Engine, random_cells
from anglecov.field import CellArrays
from anglecov.geometry import CameraParams, Cell, DroneState
from anglecov.partition import assign_cells
from conftest import random_state, state_tuple
from oracles import argmax_owner

CAM = CameraParams()


def rows(cells: CellArrays):
    return np.stack(cells.columns(), axis=1)


def test_single_drone_owns_everything():
    cells = random_cells(500, seed=1)
    part = assign_cells([DroneState(0.3, 0.1, 1.0, 1.0)], cells, CAM)
    assert np.all(part.owner == 0)
    assert part.sizes().tolist() == [500]


def test_mirror_tie_goes_to_lower_index():
    q = Cell(0.0, 0.0, 0.0, 0.0, math.pi / 2)
    a = DroneState(0.3, 0.0, math.pi, 1.2)
    b = DroneState(-0.3, 0.0, 0.0, 1.2)
    part = assign_cells([b, a], [q], CAM)
    assert part.owner[0] == 0
    part = assign_cells([a, b], [q], CAM)
    assert part.owner[0] == 0


def test_matches_bruteforce(rng):
    cells = random_cells(1000, seed=2)
    states = [random_state(rng) for _ in range(3)]
    part = assign_cells(states, cells, CAM)
    ref, _ = argmax_owner([state_tuple(s) for s in states], rows(cells))
    np.testing.assert_array_equal(part.owner, ref)


def test_partition_invariants(rng):
    cells = random_cells(3000, seed=4)
    states = [random_state(rng) for _ in range(4)]
    with Engine(cells, CAM) as eng:
        part = assign_cells(states, cells, CAM, engine=eng)
        P = eng.perf_matrix(states)
    members = part.members
    assert sum(len(v) for v in members) == len(cells)
    assert len(np.unique(np.concatenate(members))) == len(cells)
    best = P[part.owner, np.arange(len(cells))]
    assert np.all(best[None, :] >= P)


def test_permuting_drones_permutes_owners(rng):
    cells = random_cells(2000, seed=5)
    states = [random_state(rng) for _ in range(3)]
    perm = [2, 0, 1]
    a = assign_cells(states, cells, CAM).owner
    b = assign_cells([states[k] for k in perm], cells, CAM).owner
    np.testing.assert_array_equal(np.array(perm)[b], a)


def test_needs_a_drone():
    with pytest.raises(ValueError):
        assign_cells([], random_cells(3), CAM)
