"""Direct solution of the constrained saddle-point systems.

The velocity-pressure block system is bordered with a single scalar
multiplier enforcing the zero-mean pressure gauge:

    [ A  -B^T  0 ] [u]   [b_u]
    [ B   0    g ] [p] = [b_p]
    [ 0  g^T   0 ] [l]   [m]

Dirichlet velocity values are eliminated symmetrically (rows and columns
zeroed, unit diagonal), which keeps the transpose factorisation usable
for adjoint solves: the transposed operator is exactly the symmetric
elimination of the transposed block system with homogeneous constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from gradrobust.assembly import SparseSystem
from gradrobust.spaces import ConstraintSet


class LinearSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearSolveReport:
    n_total: int
    residual: float


def bordered_matrix(system: SparseSystem) -> sp.csr_matrix:
    """Assemble the full bordered matrix from the block system."""
    g_col = sp.csr_matrix(system.gauge[:, None])
    g_row = sp.csr_matrix(system.gauge[None, :])
    return sp.bmat(
        [
            [system.A, -system.B.T, None],
            [system.B, None, g_col],
            [None, g_row, None],
        ],
        format="csr",
    )


class SaddleOperator:
    """Constrained bordered operator with a reusable LU factorisation.

    One factorisation serves both the forward solve and the transpose
    (adjoint) solve at the same linearisation point.
    """

    def __init__(self, system: SparseSystem, constraints: ConstraintSet):
        self.n_vel = system.A.shape[0]
        self.n_press = system.B.shape[0]
        self.n_total = self.n_vel + self.n_press + 1
        if constraints.dofs.size and constraints.dofs.max() >= self.n_vel:
            raise LinearSolverError("constraint indices exceed the velocity block")

        raw = bordered_matrix(system)
        self._lift = np.zeros(self.n_total)
        self._lift[constraints.dofs] = constraints.values
        self._keep = np.ones(self.n_total)
        self._keep[constraints.dofs] = 0.0
        self._lift_correction = raw @ self._lift

        d_keep = sp.diags(self._keep)
        d_fix = sp.diags(1.0 - self._keep)
        self._matrix = (d_keep @ raw @ d_keep + d_fix).tocsc()
        try:
            self._lu = spla.splu(self._matrix)
        except RuntimeError as exc:
            raise LinearSolverError(
                "saddle-point factorisation failed; check that boundary "
                "constraints and the pressure gauge remove all null modes"
            ) from exc

    def _split(self, x: np.ndarray):
        return (
            x[: self.n_vel],
            x[self.n_vel : self.n_vel + self.n_press],
            float(x[-1]),
        )

    def _check(self, x: np.ndarray, rhs: np.ndarray, tol: float) -> LinearSolveReport:
        if not np.all(np.isfinite(x)):
            raise LinearSolverError("solver produced non-finite values")
        res = np.linalg.norm(self._matrix @ x - rhs)
        rel = res / max(1.0, np.linalg.norm(rhs))
        if rel > tol:
            raise LinearSolverError(
                f"linear solve residual {rel:.3e} exceeds tolerance {tol:.1e}"
            )
        return LinearSolveReport(n_total=self.n_total, residual=rel)

    def solve(
        self,
        rhs_vel: np.ndarray,
        rhs_div: np.ndarray,
        mean_target: float = 0.0,
        tol: float = 1e-8,
    ):
        """Forward solve; constrained dofs take their prescribed values."""
        rhs = np.concatenate([rhs_vel, rhs_div, [mean_target]])
        rhs = self._keep * (rhs - self._lift_correction) + self._lift
        x = self._lu.solve(rhs)
        report = self._check(x, rhs, tol)
        u, p, lam = self._split(x)
        return u, p, lam, report

    def solve_transpose(
        self,
        rhs_vel: np.ndarray,
        rhs_div: np.ndarray,
        mean_rhs: float = 0.0,
        tol: float = 1e-8,
    ):
        """Transpose solve with homogeneous values at constrained dofs."""
        rhs = self._keep * np.concatenate([rhs_vel, rhs_div, [mean_rhs]])
        x = self._lu.solve(rhs, trans="T")
        if not np.all(np.isfinite(x)):
            raise LinearSolverError("transpose solve produced non-finite values")
        res = np.linalg.norm(self._matrix.T @ x - rhs)
        if res / max(1.0, np.linalg.norm(rhs)) > tol:
            raise LinearSolverError("transpose solve residual exceeds tolerance")
        return self._split(x)


def solve_saddle(
    system: SparseSystem,
    constraints: ConstraintSet,
    mean_target: float = 0.0,
    tol: float = 1e-8,
):
    """One-shot factor-and-solve of the constrained block system."""
    op = SaddleOperator(system, constraints)
    return op.solve(system.rhs_vel, system.rhs_div, mean_target, tol)
