"""Divergence-conforming reconstruction of biquadratic velocity fields.

The reconstruction space on the reference square is the 14-dimensional
span of all vector fields with components of total degree <= 2 plus the
two divergence-free fields curl(x^3 y) and curl(x y^3).  Its degrees of
freedom are, per edge, the first three Legendre moments of the normal
component (12 functionals) and the two interior moments against the
constant vector fields.  Interpolating a velocity field cell by cell
through these functionals preserves cell averages and edge normal
moments, which makes the result H(div)-conforming with a piecewise-linear
divergence that vanishes identically whenever the input is discretely
divergence-free.

Fields are pulled back to the reference cell with the contravariant
Piola transform; on the axis-aligned congruent cells used here all
per-cell interpolation matrices coincide, so one matrix serves the whole
mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gradrobust.elements import QuadratureRule, scalar_element
from gradrobust.mesh import Mesh
from gradrobust.spaces import MixedDofMap

#: edge order: bottom, right, top, left; outward unit normals
EDGE_NORMALS = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])


class ReconstructionError(RuntimeError):
    """Raised when the reconstruction basis cannot be constructed."""


def _edge_points(edge: int, t: np.ndarray) -> np.ndarray:
    """Reference coordinates of edge points; t runs with increasing x or y."""
    t = np.asarray(t, dtype=float)
    one = np.ones_like(t)
    if edge == 0:
        return np.column_stack([t, -one])
    if edge == 1:
        return np.column_stack([one, t])
    if edge == 2:
        return np.column_stack([t, one])
    if edge == 3:
        return np.column_stack([-one, t])
    raise ValueError("edge index must be 0..3")


def _legendre_012(t: np.ndarray) -> np.ndarray:
    return np.stack([np.ones_like(t), t, 0.5 * (3.0 * t * t - 1.0)])


def _eval_generating_fields(pts: np.ndarray):
    """Values (14, n, 2) and divergences (14, n) of the generating fields."""
    x, y = pts[:, 0], pts[:, 1]
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    monos = [one, x, y, x * x, x * y, y * y]
    dmono_dx = [zero, one, zero, 2 * x, y, zero]
    dmono_dy = [zero, zero, one, zero, x, 2 * y]

    n = len(x)
    vals = np.zeros((14, n, 2))
    divs = np.zeros((14, n))
    for k in range(6):
        vals[2 * k, :, 0] = monos[k]
        divs[2 * k] = dmono_dx[k]
        vals[2 * k + 1, :, 1] = monos[k]
        divs[2 * k + 1] = dmono_dy[k]
    # curl(x^3 y) and curl(x y^3); both divergence-free
    vals[12, :, 0] = x**3
    vals[12, :, 1] = -3.0 * x * x * y
    vals[13, :, 0] = 3.0 * x * y * y
    vals[13, :, 1] = -(y**3)
    return vals, divs


class Bdm2Element:
    """Reference reconstruction element with a dual (nodal) basis."""

    n_basis = 14

    def __init__(self, cell_rule: QuadratureRule):
        if cell_rule.points_per_axis < 2:
            raise ReconstructionError("cell rule too weak for interior moments")
        self._cell_rule = cell_rule
        self._edge_t, self._edge_w = np.polynomial.legendre.leggauss(3)

        dof_matrix = np.array(
            [self.dof_functionals(lambda p, f=f: self._field(f, p))
             for f in range(14)]
        ).T
        cond = np.linalg.cond(dof_matrix)
        if not np.isfinite(cond) or cond > 1e10:
            raise ReconstructionError(
                f"singular degree-of-freedom matrix (cond {cond:.2e})"
            )
        self._coeff = np.linalg.solve(dof_matrix, np.eye(14))

    @staticmethod
    def _field(index: int, pts: np.ndarray) -> np.ndarray:
        vals, _ = _eval_generating_fields(np.atleast_2d(pts))
        return vals[index]

    def dof_functionals(self, field) -> np.ndarray:
        """Apply the 14 functionals to a callable pts -> (n, 2) values."""
        out = np.empty(14)
        leg = _legendre_012(self._edge_t)
        for e in range(4):
            vals = field(_edge_points(e, self._edge_t))
            vn = vals @ EDGE_NORMALS[e]
            out[3 * e: 3 * e + 3] = leg @ (self._edge_w * vn)
        cell_vals = field(self._cell_rule.points)
        out[12] = np.sum(self._cell_rule.weights * cell_vals[:, 0])
        out[13] = np.sum(self._cell_rule.weights * cell_vals[:, 1])
        return out

    def tabulate(self, pts: np.ndarray):
        """Nodal basis values (14, n, 2) and divergences (14, n)."""
        f_vals, f_divs = _eval_generating_fields(np.atleast_2d(pts))
        vals = np.einsum("ji,jnc->inc", self._coeff, f_vals)
        divs = np.einsum("ji,jn->in", self._coeff, f_divs)
        return vals, divs


@dataclass(frozen=True)
class ReconstructionTable:
    """Cell-local interpolation data shared by all congruent cells.

    ``matrix`` maps the 18 local velocity coefficients to the 14 dual
    coefficients of the reconstructed field.  ``pi_at_quad`` and
    ``div_at_quad`` compose that map with the nodal basis evaluated at
    the cell quadrature points, in physical coordinates.
    """

    mesh: Mesh
    element: Bdm2Element
    quad: QuadratureRule
    matrix: np.ndarray  # (14, 18)
    pi_at_quad: np.ndarray  # (n_q, 2, 18)
    div_at_quad: np.ndarray  # (n_q, 18)

    def cell_matrix(self, cell: int) -> np.ndarray:
        if cell < 0 or cell >= self.mesh.n_cells:
            raise IndexError(f"cell id {cell} out of range")
        return self.matrix

    def eval_pi_at(self, ref_pts: np.ndarray, local_coeffs: np.ndarray) -> np.ndarray:
        """Reconstructed field at arbitrary reference points, physical frame."""
        hx, hy = self.mesh.extents
        dual = self.matrix @ np.asarray(local_coeffs, dtype=float)
        vals, _ = self.element.tabulate(ref_pts)
        out = np.einsum("a,anc->nc", dual, vals)
        out[:, 0] *= 2.0 / hy
        out[:, 1] *= 2.0 / hx
        return out

    def eval_div_pi_at(self, ref_pts: np.ndarray, local_coeffs: np.ndarray) -> np.ndarray:
        hx, hy = self.mesh.extents
        dual = self.matrix @ np.asarray(local_coeffs, dtype=float)
        _, divs = self.element.tabulate(ref_pts)
        return np.einsum("a,an->n", dual, divs) / (hx * hy / 4.0)


def build_reconstruction(
    mesh: Mesh, dofs: MixedDofMap, quad: QuadratureRule
) -> ReconstructionTable:
    """Precompute the interpolation matrix and quadrature-point tables."""
    element = Bdm2Element(quad)
    hx, hy = mesh.extents
    det = hx * hy / 4.0
    # Piola pullback of a unit velocity component: x gains hy/2, y gains hx/2
    scale = np.array([hy / 2.0, hx / 2.0])

    q2 = scalar_element("q2")
    matrix = np.empty((14, 18))
    for m in range(9):
        for c in range(2):
            def field(pts, m=m, c=c):
                vals, _ = q2.tabulate(pts)
                out = np.zeros((np.atleast_2d(pts).shape[0], 2))
                out[:, c] = scale[c] * vals[m]
                return out

            matrix[:, 2 * m + c] = element.dof_functionals(field)

    basis_vals, basis_divs = element.tabulate(quad.points)
    phys_vals = basis_vals.copy()
    phys_vals[:, :, 0] *= 2.0 / hy
    phys_vals[:, :, 1] *= 2.0 / hx
    phys_divs = basis_divs / det

    pi_at_quad = np.einsum("aj,aqc->qcj", matrix, phys_vals)
    div_at_quad = np.einsum("aj,aq->qj", matrix, phys_divs)
    return ReconstructionTable(
        mesh=mesh,
        element=element,
        quad=quad,
        matrix=matrix,
        pi_at_quad=pi_at_quad,
        div_at_quad=div_at_quad,
    )


def eval_pi(table: ReconstructionTable, cell: int, local_coeffs: np.ndarray) -> np.ndarray:
    """Reconstructed velocity at the cell quadrature points, (n_q, 2)."""
    table.cell_matrix(cell)  # range check
    return np.einsum("qcj,j->qc", table.pi_at_quad, np.asarray(local_coeffs, dtype=float))


def eval_div_pi(table: ReconstructionTable, cell: int, local_coeffs: np.ndarray) -> np.ndarray:
    """Divergence of the reconstruction at the cell quadrature points."""
    table.cell_matrix(cell)
    return table.div_at_quad @ np.asarray(local_coeffs, dtype=float)
