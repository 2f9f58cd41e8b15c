"""Uniform axis-aligned quadrilateral meshes of a rectangle.

Vertices are numbered row by row (x fastest), cells likewise.  Edges are
numbered with all horizontal edges first, then all vertical ones, each
group again row by row.  Every edge stores the two adjacent cells in the
order (minus side, plus side) so that its unit normal points from the
minus cell into the plus cell; boundary edges carry -1 on the missing
side and an outward normal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CellGeometry:
    """Affine geometry of a single axis-aligned cell."""

    vertices: np.ndarray  # (4, 2), counterclockwise from the lower-left corner
    center: np.ndarray  # (2,)
    extents: np.ndarray  # (2,) widths (hx, hy)
    jacobian: np.ndarray  # (2, 2) diagonal Jacobian of the reference map
    det_jacobian: float
    measure: float

    def map_to_physical(self, ref_points: np.ndarray) -> np.ndarray:
        """Map points from the reference square [-1,1]^2 into the cell."""
        pts = np.asarray(ref_points, dtype=float)
        return self.center + pts * (self.extents / 2.0)


@dataclass(frozen=True)
class Mesh:
    """Tensor-product quadrilateral mesh with full connectivity."""

    n_x: int
    n_y: int
    lo: np.ndarray  # (2,)
    hi: np.ndarray  # (2,)
    vertices: np.ndarray  # (n_vertices, 2)
    cells: np.ndarray  # (n_cells, 4) vertex ids, counterclockwise
    edge_vertices: np.ndarray  # (n_edges, 2) vertex ids
    edge_cells: np.ndarray  # (n_edges, 2) cell ids, -1 for exterior
    edge_normals: np.ndarray  # (n_edges, 2) unit normals, minus -> plus
    cell_edges: np.ndarray  # (n_cells, 4) edge ids: bottom, right, top, left
    boundary_edges: np.ndarray  # sorted ids of edges on the boundary

    @property
    def n_cells(self) -> int:
        return self.n_x * self.n_y

    @property
    def n_vertices(self) -> int:
        return (self.n_x + 1) * (self.n_y + 1)

    @property
    def n_edges(self) -> int:
        return self.edge_vertices.shape[0]

    @property
    def extents(self) -> np.ndarray:
        """Cell widths (hx, hy); all cells are congruent."""
        return (self.hi - self.lo) / np.array([self.n_x, self.n_y])


def build_uniform_mesh(n_x: int, n_y: int, lo=(-1.0, -1.0), hi=(1.0, 1.0)) -> Mesh:
    """Build an n_x-by-n_y uniform mesh of the rectangle [lo, hi].

    Raises ValueError for non-positive subdivision counts or an empty box.
    """
    if int(n_x) != n_x or int(n_y) != n_y:
        raise ValueError("subdivision counts must be integers")
    n_x, n_y = int(n_x), int(n_y)
    if n_x < 1 or n_y < 1:
        raise ValueError("mesh needs at least one cell per direction")
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (2,) or hi.shape != (2,):
        raise ValueError("lo and hi must be 2-vectors")
    if not np.all(hi > lo):
        raise ValueError("box must have positive extents")

    xs = np.linspace(lo[0], hi[0], n_x + 1)
    ys = np.linspace(lo[1], hi[1], n_y + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n_x + 1) + i

    def cid(i, j):
        return j * n_x + i

    cells = np.empty((n_x * n_y, 4), dtype=np.int64)
    for j in range(n_y):
        for i in range(n_x):
            cells[cid(i, j)] = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))

    n_h = (n_y + 1) * n_x  # horizontal edges
    n_v = (n_x + 1) * n_y  # vertical edges
    edge_vertices = np.empty((n_h + n_v, 2), dtype=np.int64)
    edge_cells = np.full((n_h + n_v, 2), -1, dtype=np.int64)
    edge_normals = np.zeros((n_h + n_v, 2))

    def hid(i, j):
        return j * n_x + i

    def vvid(i, j):
        return n_h + j * (n_x + 1) + i

    for j in range(n_y + 1):
        for i in range(n_x):
            e = hid(i, j)
            edge_vertices[e] = (vid(i, j), vid(i + 1, j))
            below = cid(i, j - 1) if j > 0 else -1
            above = cid(i, j) if j < n_y else -1
            if below < 0:  # bottom boundary, outward normal
                edge_cells[e] = (above, -1)
                edge_normals[e] = (0.0, -1.0)
            else:
                edge_cells[e] = (below, above)
                edge_normals[e] = (0.0, 1.0)

    for j in range(n_y):
        for i in range(n_x + 1):
            e = vvid(i, j)
            edge_vertices[e] = (vid(i, j), vid(i, j + 1))
            left = cid(i - 1, j) if i > 0 else -1
            right = cid(i, j) if i < n_x else -1
            if left < 0:  # left boundary, outward normal
                edge_cells[e] = (right, -1)
                edge_normals[e] = (-1.0, 0.0)
            else:
                edge_cells[e] = (left, right)
                edge_normals[e] = (1.0, 0.0)

    cell_edges = np.empty((n_x * n_y, 4), dtype=np.int64)
    for j in range(n_y):
        for i in range(n_x):
            cell_edges[cid(i, j)] = (hid(i, j), vvid(i + 1, j), hid(i, j + 1), vvid(i, j))

    boundary = np.flatnonzero(edge_cells[:, 1] == -1)
    return Mesh(
        n_x=n_x,
        n_y=n_y,
        lo=lo,
        hi=hi,
        vertices=vertices,
        cells=cells,
        edge_vertices=edge_vertices,
        edge_cells=edge_cells,
        edge_normals=edge_normals,
        cell_edges=cell_edges,
        boundary_edges=boundary,
    )


def cell_geometry(mesh: Mesh, cell: int) -> CellGeometry:
    """Return the affine geometry of one cell; raises IndexError if out of range."""
    if cell < 0 or cell >= mesh.n_cells:
        raise IndexError(f"cell id {cell} out of range [0, {mesh.n_cells})")
    verts = mesh.vertices[mesh.cells[cell]]
    ext = mesh.extents
    center = verts[0] + ext / 2.0
    jac = np.diag(ext / 2.0)
    det = float(ext[0] * ext[1] / 4.0)
    return CellGeometry(
        vertices=verts,
        center=center,
        extents=ext.copy(),
        jacobian=jac,
        det_jacobian=det,
        measure=float(ext[0] * ext[1]),
    )
