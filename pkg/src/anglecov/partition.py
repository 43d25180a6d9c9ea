"""Best-observer partition of the cells among drones."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import Engine
from .field import CellArrays
from .geometry import CameraParams, Cell, DroneState


@dataclass
class Partition:
    """``owner[j]`` is the drone with the highest perf on cell ``j``.

    Ties go to the lowest drone index.
    """

    owner: np.ndarray
    n: int

    def cells_of(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.owner == i)

    @property
    def members(self) -> list[np.ndarray]:
        return [self.cells_of(i) for i in range(self.n)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.n)


def assign_cells(states: Sequence[DroneState], cells: Sequence[Cell] | CellArrays,
                 c: CameraParams, engine: Engine | None = None) -> Partition:
    if not states:
        raise ValueError("need at least one drone")
    if engine is None:
        arrays = cells if isinstance(cells, CellArrays) else CellArrays.from_cells(list(cells))
        with Engine(arrays, c) as eng:
            _, owner = eng.max_argmax(states)
            return Partition(owner.copy(), len(states))
    _, owner = engine.max_argmax(states)
    return Partition(owner.copy(), len(states))
