"""Global degree-of-freedom maps for the mixed velocity/pressure pair.

Velocity: continuous vector-valued biquadratics.  The scalar nodes form a
(2*n_x+1) x (2*n_y+1) grid; the two components of node k occupy dofs 2k
and 2k+1.  Pressure: discontinuous linears, three modal dofs per cell,
numbered 3c, 3c+1, 3c+2 in a separate block.  The control field uses the
same space as the velocity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from gradrobust.mesh import Mesh


@dataclass(frozen=True)
class MixedDofMap:
    """Connectivity between cells and global velocity/pressure dofs."""

    mesh: Mesh
    n_vel: int
    n_press: int
    cell_vel_dofs: np.ndarray  # (n_cells, 18)
    cell_press_dofs: np.ndarray  # (n_cells, 3)
    vel_node_coords: np.ndarray  # (n_nodes, 2)
    boundary_nodes: np.ndarray  # sorted scalar node ids on the boundary
    boundary_vel_dofs: np.ndarray  # sorted velocity dof ids on the boundary

    @property
    def n_total(self) -> int:
        """State-space size: velocity plus pressure dofs."""
        return self.n_vel + self.n_press


@dataclass(frozen=True)
class ConstraintSet:
    """Fixed velocity dofs plus the zero-mean pressure gauge."""

    dofs: np.ndarray  # sorted constrained velocity dof ids
    values: np.ndarray  # prescribed values, aligned with dofs
    gauge: str = "zero-mean-pressure"

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """Overwrite the constrained entries; idempotent."""
        out = np.array(vec, dtype=float, copy=True)
        out[self.dofs] = self.values
        return out


def build_dof_map(mesh: Mesh) -> MixedDofMap:
    """Number the velocity and pressure dofs of a mesh."""
    nx, ny = mesh.n_x, mesh.n_y
    gx, gy = 2 * nx + 1, 2 * ny + 1
    xs = np.linspace(mesh.lo[0], mesh.hi[0], gx)
    ys = np.linspace(mesh.lo[1], mesh.hi[1], gy)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    coords = np.column_stack([X.ravel(), Y.ravel()])

    cell_vel = np.empty((mesh.n_cells, 18), dtype=np.int64)
    for j in range(ny):
        for i in range(nx):
            c = j * nx + i
            local = 0
            for b in range(3):
                for a in range(3):
                    node = (2 * j + b) * gx + (2 * i + a)
                    cell_vel[c, 2 * local] = 2 * node
                    cell_vel[c, 2 * local + 1] = 2 * node + 1
                    local += 1

    cell_press = 3 * np.arange(mesh.n_cells, dtype=np.int64)[:, None] + np.arange(3)

    I, J = np.meshgrid(np.arange(gx), np.arange(gy), indexing="xy")
    on_bnd = (I == 0) | (I == gx - 1) | (J == 0) | (J == gy - 1)
    bnodes = np.flatnonzero(on_bnd.ravel())
    bdofs = np.sort(np.concatenate([2 * bnodes, 2 * bnodes + 1]))

    return MixedDofMap(
        mesh=mesh,
        n_vel=2 * gx * gy,
        n_press=3 * mesh.n_cells,
        cell_vel_dofs=cell_vel,
        cell_press_dofs=cell_press,
        vel_node_coords=coords,
        boundary_nodes=bnodes,
        boundary_vel_dofs=bdofs,
    )


def interpolate_velocity(dofs: MixedDofMap, f: Callable) -> np.ndarray:
    """Nodal interpolant of a vector field; f maps (n,2) points to (n,2)."""
    vals = np.asarray(f(dofs.vel_node_coords), dtype=float)
    if vals.shape != dofs.vel_node_coords.shape:
        raise ValueError("field must return one 2-vector per node")
    return vals.ravel()


def dirichlet_constraints(dofs: MixedDofMap, g: Callable) -> ConstraintSet:
    """Constrain all boundary velocity dofs to the trace of g."""
    vals = np.asarray(g(dofs.vel_node_coords[dofs.boundary_nodes]), dtype=float)
    if vals.shape != (len(dofs.boundary_nodes), 2):
        raise ValueError("boundary data must return one 2-vector per node")
    n = len(dofs.boundary_nodes)
    ids = np.empty(2 * n, dtype=np.int64)
    ids[0::2] = 2 * dofs.boundary_nodes
    ids[1::2] = 2 * dofs.boundary_nodes + 1
    values = vals.ravel()  # (vx0, vy0, vx1, vy1, ...)
    order = np.argsort(ids)
    return ConstraintSet(dofs=ids[order], values=values[order])


def homogeneous_constraints(dofs: MixedDofMap) -> ConstraintSet:
    """Zero Dirichlet data on the whole boundary."""
    ids = dofs.boundary_vel_dofs
    return ConstraintSet(dofs=ids, values=np.zeros(len(ids)))
