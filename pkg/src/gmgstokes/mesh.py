"""Nested hierarchies of uniformly refined Cartesian grids on the unit box.

Level 0 is a single cell covering [0,1]^dim; every refinement halves the
cell side, so level ``l`` holds ``2**(dim*l)`` cube cells of side
``2**-l``.  Cells are addressed by integer lattice coordinates and
enumerated lexicographically with the x-axis fastest.  The finest level
is the active mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CellId:
    """A cell addressed by level and per-axis lattice coordinates."""

    level: int
    lattice: tuple[int, ...]


@dataclass(frozen=True)
class MeshHierarchy:
    dim: int
    n_levels: int

    @property
    def active_level(self) -> int:
        return self.n_levels - 1

    def cells_per_axis(self, level: int) -> int:
        self._check_level(level)
        return 2**level

    def n_cells(self, level: int) -> int:
        return 2 ** (self.dim * level)

    def h(self, level: int) -> float:
        self._check_level(level)
        return 2.0 ** (-level)

    def cell_lattices(self, level: int) -> np.ndarray:
        """Integer lattice coordinates of every cell, shape (n_cells, dim)."""
        n = self.cells_per_axis(level)
        k = np.arange(self.n_cells(level))
        return np.stack([(k // n**a) % n for a in range(self.dim)], axis=1)

    def cell_centers(self, level: int) -> np.ndarray:
        return (self.cell_lattices(level) + 0.5) * self.h(level)

    def cell_index(self, lattice, level: int) -> int:
        n = self.cells_per_axis(level)
        lattice = np.asarray(lattice)
        if np.any(lattice < 0) or np.any(lattice >= n):
            raise ValueError(f"lattice {lattice} out of range on level {level}")
        return int(sum(int(lattice[a]) * n**a for a in range(self.dim)))

    def _check_level(self, level: int) -> None:
        if not 0 <= level < self.n_levels:
            raise ValueError(f"level {level} not in hierarchy of {self.n_levels} levels")


def build_hierarchy(dim: int, n_levels: int) -> MeshHierarchy:
    """Build the uniformly refined hierarchy on [0,1]^dim.

    Rejects ``dim`` outside {2, 3} and ``n_levels < 1``.
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if not isinstance(n_levels, (int, np.integer)) or n_levels < 1:
        raise ValueError(f"n_levels must be a positive integer, got {n_levels}")
    return MeshHierarchy(dim=int(dim), n_levels=int(n_levels))


def children(mesh: MeshHierarchy, cell: CellId) -> list[CellId]:
    """The 2**dim children obtained by bisecting ``cell`` once.

    Child lattices double the parent lattice and add a 0/1 offset per
    axis; only defined below the finest level.
    """
    if cell.level >= mesh.active_level:
        raise ValueError("cells on the finest level have no children")
    mesh._check_level(cell.level)
    offs = mesh_child_offsets(mesh.dim)
    base = 2 * np.asarray(cell.lattice)
    return [CellId(cell.level + 1, tuple(int(v) for v in base + o)) for o in offs]


def parent(mesh: MeshHierarchy, cell: CellId) -> CellId:
    if cell.level == 0:
        raise ValueError("the root cell has no parent")
    return CellId(cell.level - 1, tuple(int(v) // 2 for v in cell.lattice))


def cell_center(mesh: MeshHierarchy, cell: CellId) -> np.ndarray:
    mesh._check_level(cell.level)
    lat = np.asarray(cell.lattice, dtype=float)
    if np.any(lat < 0) or np.any(lat >= 2**cell.level):
        raise ValueError(f"invalid lattice {cell.lattice} on level {cell.level}")
    return (lat + 0.5) * mesh.h(cell.level)


def mesh_child_offsets(dim: int) -> np.ndarray:
    """0/1 offset tuples of the children within a parent, x fastest."""
    k = np.arange(2**dim)
    return np.stack([(k >> a) & 1 for a in range(dim)], axis=1)
