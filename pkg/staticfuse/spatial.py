#
# License:          This module is released under the terms of the LICENSE file
#                   contained within this applications INSTALL directory

"""
Fixed-radius neighbour index over potential-object centers.

Points are hashed into a uniform grid whose cell size equals the
clustering radius, so every query inspects the 3x3 block of cells around
the query point and its cost does not depend on the size of the region.
"""

from __future__ import annotations

import logging
import math

from staticfuse.core import ContractViolationError, IndexConsistencyError, InvalidParameterError

logger = logging.getLogger(__name__)

Cell = tuple[int, int]
Point = tuple[float, float]

_NEIGHBOUR_OFFSETS = tuple((dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1))


def _as_point(point) -> Point:
    return float(point[0]), float(point[1])


class RadiusIndex:
    """
    Grid hash from integer cell coordinates to the ``{id: point}`` entries
    falling into that cell.

    :param cell_size: edge length of a grid cell [m], also the largest
        radius a query may use
    """

    def __init__(self, cell_size: float):
        if not (cell_size > 0 and math.isfinite(cell_size)):
            raise InvalidParameterError(f"cell_size must be a positive finite number, got {cell_size!r}")
        self.cell_size = float(cell_size)
        self._cells: dict[Cell, dict[int, Point]] = {}
        self._where: dict[int, Cell] = {}

    def cell_of(self, point) -> Cell:
        return (math.floor(point[0] / self.cell_size), math.floor(point[1] / self.cell_size))

    def __len__(self) -> int:
        return len(self._where)

    def __contains__(self, id_) -> bool:
        return id_ in self._where

    def ids(self) -> list[int]:
        return sorted(self._where)

    def point_of(self, id_: int) -> Point:
        try:
            return self._cells[self._where[id_]][id_]
        except KeyError:
            raise IndexConsistencyError(f"id {id_} is not indexed") from None

    @property
    def n_cells(self) -> int:
        return len(self._cells)

    def insert(self, id_: int, point) -> None:
        if id_ in self._where:
            raise IndexConsistencyError(f"id {id_} is already indexed")
        p = _as_point(point)
        cell = self.cell_of(p)
        self._cells.setdefault(cell, {})[id_] = p
        self._where[id_] = cell

    def _check_present(self, id_: int, point) -> Cell:
        p = _as_point(point)
        cell = self._where.get(id_)
        if cell is None:
            raise IndexConsistencyError(f"id {id_} is not indexed")
        if cell != self.cell_of(p) or self._cells[cell][id_] != p:
            raise IndexConsistencyError(
                f"id {id_} is indexed at {self._cells[cell][id_]}, not at {p}"
            )
        return cell

    def remove(self, id_: int, point) -> None:
        cell = self._check_present(id_, point)
        bucket = self._cells[cell]
        del bucket[id_]
        if not bucket:
            del self._cells[cell]
        del self._where[id_]

    def relocate(self, id_: int, old_point, new_point) -> None:
        """Move an id; validation happens before the index is touched."""
        self._check_present(id_, old_point)
        self.remove(id_, old_point)
        self.insert(id_, new_point)

    def query_within(self, point, radius: float) -> list[int]:
        """
        Ids whose point lies strictly closer than ``radius`` to ``point``,
        in ascending order.

        :raises ContractViolationError: if ``radius`` exceeds the cell size
        """
        if radius > self.cell_size:
            raise ContractViolationError(
                f"query radius {radius} exceeds the index cell size {self.cell_size}"
            )
        x, y = float(point[0]), float(point[1])
        cx, cy = self.cell_of((x, y))
        found = []
        for dx, dy in _NEIGHBOUR_OFFSETS:
            bucket = self._cells.get((cx + dx, cy + dy))
            if not bucket:
                continue
            for id_, (px, py) in bucket.items():
                if math.hypot(px - x, py - y) < radius:
                    found.append(id_)
        found.sort()
        return found

    def copy(self) -> RadiusIndex:
        other = RadiusIndex(self.cell_size)
        other._cells = {cell: dict(bucket) for cell, bucket in self._cells.items()}
        other._where = dict(self._where)
        return other
