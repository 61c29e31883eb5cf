"""Conforming triangular meshes with oriented edges.

Local edge ``i`` of a cell is the edge opposite its vertex ``i`` and runs
from vertex ``(i+1) % 3`` to vertex ``(i+2) % 3``.  A global facet stores its
vertices in increasing order; that order fixes the facet parameter direction.
The global facet normal points from the lower-numbered adjacent cell into the
higher-numbered one, and outward on the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SingularGeometryError(ValueError):
    """Raised for degenerate cells or singular reference maps."""


LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True)
class AffineMap:
    """Map ``x = v0 + J xhat`` from the reference triangle onto a cell."""

    jac: np.ndarray
    det: float
    inv_t: np.ndarray
    translation: np.ndarray

    def __call__(self, xhat):
        xhat = np.atleast_2d(xhat)
        return xhat @ self.jac.T + self.translation


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray = field(init=False)
    cell_facets: np.ndarray = field(init=False)
    cell_facet_signs: np.ndarray = field(init=False)
    facet_cells: np.ndarray = field(init=False)
    boundary_flags: np.ndarray = field(init=False)
    h_per_cell: np.ndarray = field(init=False)
    h_per_facet: np.ndarray = field(init=False)

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        cells = np.asarray(self.cells, dtype=np.int64)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "cells", cells)

        areas = self._signed_areas(verts, cells)
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise SingularGeometryError(
                f"cell {bad} has non-positive signed area {areas[bad]:.3e}")

        edges = cells[:, LOCAL_EDGES]                      # (nc, 3, 2)
        keys = np.sort(edges.reshape(-1, 2), axis=1)
        facets, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        cell_facets = inverse.reshape(-1, 3)

        nf = len(facets)
        facet_cells = -np.ones((nf, 2), dtype=np.int64)
        counts = np.zeros(nf, dtype=np.int64)
        # cells are visited in increasing order, so slot 0 holds the lower id
        for c in range(len(cells)):
            for f in cell_facets[c]:
                if counts[f] >= 2:
                    raise ValueError(f"facet {f} shared by more than two cells")
                facet_cells[f, counts[f]] = c
                counts[f] += 1
        signs = np.where(facet_cells[cell_facets, 0]
                         == np.arange(len(cells))[:, None], 1, -1)

        lengths = np.linalg.norm(verts[facets[:, 1]] - verts[facets[:, 0]], axis=1)
        h_cell = lengths[cell_facets].max(axis=1)

        object.__setattr__(self, "facets", facets)
        object.__setattr__(self, "cell_facets", cell_facets)
        object.__setattr__(self, "cell_facet_signs", signs.astype(np.int64))
        object.__setattr__(self, "facet_cells", facet_cells)
        object.__setattr__(self, "boundary_flags", counts == 1)
        object.__setattr__(self, "h_per_cell", h_cell)
        object.__setattr__(self, "h_per_facet", lengths)

    @staticmethod
    def _signed_areas(verts, cells):
        a, b, c = (verts[cells[:, i]] for i in range(3))
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_facets(self):
        return len(self.facets)

    @property
    def num_interior_facets(self):
        return int(np.count_nonzero(~self.boundary_flags))

    @property
    def areas(self):
        return self._signed_areas(self.vertices, self.cells)

    def jacobians(self):
        """Return ``(J, detJ, J^{-1})`` stacked over cells."""
        v = self.vertices[self.cells]
        jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv /= det[:, None, None]
        return jac, det, inv

    def facet_normals(self):
        """Unit global normals and tangents, ``t = rot90(n)``."""
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        n = np.stack([d[:, 1], -d[:, 0]], axis=1) / self.h_per_facet[:, None]
        # orient n away from the first adjacent cell
        c0 = self.facet_cells[:, 0]
        centroid = self.vertices[self.cells[c0]].mean(axis=1)
        mid = 0.5 * (self.vertices[self.facets[:, 0]] + self.vertices[self.facets[:, 1]])
        flip = np.einsum("ij,ij->i", n, mid - centroid, optimize=True) < 0
        n[flip] *= -1.0
        t = np.stack([-n[:, 1], n[:, 0]], axis=1)
        return n, t

    def edge_reversed(self):
        """``True`` where a cell's local edge runs against the facet direction."""
        e = self.cells[:, LOCAL_EDGES]
        return e[:, :, 0] > e[:, :, 1]

    def dump(self, path):
        """Write plain-text node and element lists (debugging aid)."""
        with open(path, "w") as fh:
            fh.write(f"{len(self.vertices)} nodes\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g} {y:.17g}\n")
            fh.write(f"{len(self.cells)} elements\n")
            for a, b, c in self.cells:
                fh.write(f"{a} {b} {c}\n")


def affine_map(mesh: Mesh, cell: int) -> AffineMap:
    if not 0 <= cell < mesh.num_cells:
        raise IndexError(f"cell id {cell} out of range")
    v = mesh.vertices[mesh.cells[cell]]
    jac = np.column_stack([v[1] - v[0], v[2] - v[0]])
    det = float(np.linalg.det(jac))
    if abs(det) <= 1e-14 * max(1.0, np.abs(jac).max() ** 2):
        raise SingularGeometryError(f"cell {cell} is degenerate (det J = {det:.3e})")
    return AffineMap(jac=jac, det=det, inv_t=np.linalg.inv(jac).T, translation=v[0].copy())


def unit_square_mesh(n: int) -> Mesh:
    """Structured mesh of (0,1)^2: n x n squares cut along the same diagonal."""
    if int(n) != n or n < 1:
        raise ValueError(f"need n >= 1 subdivisions, got {n}")
    n = int(n)
    x = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(x, x)
    verts = np.column_stack([xx.ravel(), yy.ravel()])
    cells = []
    for j in range(n):
        for i in range(n):
            k = j * (n + 1) + i
            v00, v10, v01, v11 = k, k + 1, k + n + 1, k + n + 2
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return Mesh(verts, np.array(cells))


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four congruent children via edge midpoints."""
    nv = len(mesh.vertices)
    mids = 0.5 * (mesh.vertices[mesh.facets[:, 0]] + mesh.vertices[mesh.facets[:, 1]])
    verts = np.vstack([mesh.vertices, mids])
    m = nv + mesh.cell_facets        # midpoint opposite local vertex i
    a, b, c = mesh.cells.T
    ma, mb, mc = m.T
    children = np.stack([
        np.column_stack([a, mc, mb]),
        np.column_stack([mc, b, ma]),
        np.column_stack([mb, ma, c]),
        np.column_stack([ma, mb, mc]),
    ], axis=1).reshape(-1, 3)
    return Mesh(verts, children)


def refinement_sequence(n0: int, levels: int):
    mesh = unit_square_mesh(n0)
    out = [mesh]
    for _ in range(levels - 1):
        mesh = refine_uniform(mesh)
        out.append(mesh)
    return out
