"""Positions and heightmap terrain shared by every layer of the simulator."""

from __future__ import annotations

import math
from functools import cached_property

import numpy as np
from pydantic import BaseModel, ConfigDict


class StrictModel(BaseModel):
    """Immutable config record that rejects unknown keys."""

    model_config = ConfigDict(extra="forbid", frozen=True)


class Position(StrictModel):
    x: float
    y: float
    z_agl: float = 0.0

    def with_height(self, z_agl: float) -> Position:
        return Position(x=self.x, y=self.y, z_agl=z_agl)


class OutOfBounds(ValueError):
    pass


class Terrain(StrictModel):
    """Row-major heightmap; cell (col, row) covers [col*cs, (col+1)*cs) x [row*cs, (row+1)*cs).

    Elevation is piecewise constant per cell. Row 0 is y = 0.
    """

    width_cells: int
    height_cells: int
    cell_size_m: float
    elevation: tuple[float, ...]

    @property
    def width_m(self) -> float:
        return self.width_cells * self.cell_size_m

    @property
    def height_m(self) -> float:
        return self.height_cells * self.cell_size_m

    @cached_property
    def grid(self) -> np.ndarray:
        return np.asarray(self.elevation, dtype=float).reshape(self.height_cells, self.width_cells)

    @cached_property
    def is_flat(self) -> bool:
        # nothing above ground level can be blocked by a level plane
        return bool(self.grid.min() == self.grid.max()) if self.elevation else True

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width_m and 0.0 <= y <= self.height_m

    def ground(self, x: float, y: float) -> float:
        if not self.contains(x, y):
            raise OutOfBounds(f"({x}, {y}) outside terrain {self.width_m} x {self.height_m} m")
        col = min(int(x // self.cell_size_m), self.width_cells - 1)
        row = min(int(y // self.cell_size_m), self.height_cells - 1)
        return self.elevation[row * self.width_cells + col]

    def ground_many(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Vectorised ground lookup; callers guarantee the points are in bounds."""
        cols = np.minimum((xs // self.cell_size_m).astype(int), self.width_cells - 1)
        rows = np.minimum((ys // self.cell_size_m).astype(int), self.height_cells - 1)
        return self.grid[rows, cols]

    @classmethod
    def flat(cls, width_cells: int, height_cells: int, cell_size_m: float, level: float = 0.0) -> Terrain:
        return cls(
            width_cells=width_cells,
            height_cells=height_cells,
            cell_size_m=cell_size_m,
            elevation=(level,) * (width_cells * height_cells),
        )


def ground_at(terrain: Terrain | None, x: float, y: float) -> float:
    """Ground elevation; a missing terrain means flat ground at 0 m everywhere."""
    if terrain is None:
        return 0.0
    return terrain.ground(x, y)


def altitude(p: Position, terrain: Terrain | None) -> float:
    return ground_at(terrain, p.x, p.y) + p.z_agl


def distance_3d(a: Position, b: Position, terrain: Terrain | None) -> float:
    dz = altitude(a, terrain) - altitude(b, terrain)
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + dz * dz)


def horizontal_distance(a: Position, b: Position) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)
