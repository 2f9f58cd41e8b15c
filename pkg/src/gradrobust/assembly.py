"""Assembly of the mixed discrete operators on uniform quad meshes.

All cells are congruent, so the bilinear cell matrices are computed once
and scattered.  Nonlinear (convection) terms are evaluated cell-batched
with precomputed quadrature tables.  Assembly is serial and runs over
cells in a fixed order, so repeated runs produce bitwise-identical
matrices and vectors.

Conventions.  The momentum residual is

    nu (grad u, grad v) + c(u, u, v) - (p, div v) - (f + q, T v) = 0

with T the identity in the plain (non-robust) setting and the
divergence-conforming reconstruction in the robust one.  The convection
form c is one of

    convective:  ((u . grad) u, T v)
    divergence:  ((u . grad) u + (div u) u / 2, T v)
    rotational:  ((curl u) x S u, T v)

where S is again the reconstruction in the robust setting (both slots
are reconstructed there) and the identity otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from gradrobust.elements import QuadratureRule, gauss_rule, scalar_element
from gradrobust.mesh import Mesh, cell_geometry
from gradrobust.reconstruction import ReconstructionTable, build_reconstruction
from gradrobust.spaces import MixedDofMap

FORMS = ("convective", "divergence", "rotational")

_CHUNK = 4096  # cells per assembly batch, keeps peak memory flat


@dataclass(frozen=True)
class FormConfig:
    """Which convection form to use, whether reconstructed, and viscosity."""

    form: str
    robust: bool
    nu: float

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}, got {self.form!r}")
        if not self.nu > 0:
            raise ValueError("viscosity must be positive")


@dataclass
class SparseSystem:
    """Block form of the lin(earized) saddle-point system.

    Rows of B pair the velocity divergence with the pressure test
    functions; ``gauge`` holds the pressure means used to pin the
    zero-mean gauge.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    gauge: np.ndarray
    rhs_vel: np.ndarray
    rhs_div: np.ndarray


@dataclass
class AssemblyContext:
    """Precomputed quadrature tables shared by all assembly routines."""

    mesh: Mesh
    dofs: MixedDofMap
    quad: QuadratureRule
    recon: ReconstructionTable
    w_phys: np.ndarray  # (n_q,) physical quadrature weights
    trial_vals: np.ndarray  # (n_q, 2, 18) vector basis values
    trial_grads: np.ndarray  # (n_q, 2, 2, 18) physical gradients [comp, deriv]
    pi_vals: np.ndarray  # (n_q, 2, 18) reconstructed basis values
    pi_divs: np.ndarray  # (n_q, 18)
    press_vals: np.ndarray  # (3, n_q)
    phys_points: np.ndarray  # (n_cells, n_q, 2)
    visc_loc: np.ndarray = field(repr=False, default=None)
    div_loc: np.ndarray = field(repr=False, default=None)
    mass_loc: np.ndarray = field(repr=False, default=None)
    pi_pair_loc: np.ndarray = field(repr=False, default=None)
    pi_pi_loc: np.ndarray = field(repr=False, default=None)

    @property
    def n_q(self) -> int:
        return len(self.w_phys)


def make_context(
    mesh: Mesh,
    dofs: MixedDofMap,
    quad: QuadratureRule | None = None,
    recon: ReconstructionTable | None = None,
) -> AssemblyContext:
    """Tabulate bases at quadrature points and build the local matrices."""
    if quad is None:
        quad = gauss_rule(4)
    if recon is None:
        recon = build_reconstruction(mesh, dofs, quad)
    hx, hy = mesh.extents
    det = hx * hy / 4.0
    w_phys = quad.weights * det

    vals, grads = scalar_element("q2").tabulate(quad.points)
    gphys = grads.copy()
    gphys[:, :, 0] *= 2.0 / hx
    gphys[:, :, 1] *= 2.0 / hy

    n_q = quad.points.shape[0]
    trial_vals = np.zeros((n_q, 2, 18))
    trial_grads = np.zeros((n_q, 2, 2, 18))
    for m in range(9):
        for c in range(2):
            trial_vals[:, c, 2 * m + c] = vals[m]
            trial_grads[:, c, :, 2 * m + c] = gphys[m]

    press_vals, _ = scalar_element("p1").tabulate(quad.points)

    centers = np.array(
        [cell_geometry(mesh, c).center for c in range(mesh.n_cells)]
    )
    phys = centers[:, None, :] + quad.points[None, :, :] * (mesh.extents / 2.0)

    ctx = AssemblyContext(
        mesh=mesh,
        dofs=dofs,
        quad=quad,
        recon=recon,
        w_phys=w_phys,
        trial_vals=trial_vals,
        trial_grads=trial_grads,
        pi_vals=recon.pi_at_quad,
        pi_divs=recon.div_at_quad,
        press_vals=press_vals,
        phys_points=phys,
    )

    w = w_phys
    ctx.visc_loc = np.einsum("q,qcdj,qcdi->ij", w, trial_grads, trial_grads)
    div_t = trial_grads[:, 0, 0, :] + trial_grads[:, 1, 1, :]
    ctx.div_loc = np.einsum("q,qj,kq->kj", w, div_t, press_vals)
    ctx.mass_loc = np.einsum("q,qcj,qci->ij", w, trial_vals, trial_vals)
    ctx.pi_pair_loc = np.einsum("q,qcj,qci->ij", w, trial_vals, ctx.pi_vals)
    ctx.pi_pi_loc = np.einsum("q,qcj,qci->ij", w, ctx.pi_vals, ctx.pi_vals)
    return ctx


# ---------------------------------------------------------------------------
# scatter helpers


def _scatter_vel_matrix(ctx: AssemblyContext, loc: np.ndarray) -> sp.csr_matrix:
    """Scatter one shared (18,18) local matrix into the global pattern."""
    conn = ctx.dofs.cell_vel_dofs
    n_c = conn.shape[0]
    rows = np.repeat(conn, 18, axis=1).ravel()
    cols = np.tile(conn, (1, 18)).ravel()
    data = np.tile(loc.ravel(), n_c)
    n = ctx.dofs.n_vel
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def _scatter_vel_matrix_batch(ctx, loc_batch: np.ndarray, cells: np.ndarray):
    conn = ctx.dofs.cell_vel_dofs[cells]
    rows = np.repeat(conn, 18, axis=1).ravel()
    cols = np.tile(conn, (1, 18)).ravel()
    return rows, cols, loc_batch.reshape(len(cells) * 18 * 18)


def _scatter_vel_vector(ctx: AssemblyContext, loc: np.ndarray, cells, out: np.ndarray):
    np.add.at(out, ctx.dofs.cell_vel_dofs[cells].ravel(), loc.ravel())


def _cell_chunks(n_cells: int):
    for start in range(0, n_cells, _CHUNK):
        yield np.arange(start, min(start + _CHUNK, n_cells))


# ---------------------------------------------------------------------------
# field evaluation at quadrature points


def _gather(ctx: AssemblyContext, u: np.ndarray, cells: np.ndarray) -> np.ndarray:
    return u[ctx.dofs.cell_vel_dofs[cells]]


def _values(ctx, u_loc: np.ndarray) -> np.ndarray:
    return np.einsum("qcj,Cj->Cqc", ctx.trial_vals, u_loc)


def _gradients(ctx, u_loc: np.ndarray) -> np.ndarray:
    return np.einsum("qcdj,Cj->Cqcd", ctx.trial_grads, u_loc)


def _pi_values(ctx, u_loc: np.ndarray) -> np.ndarray:
    return np.einsum("qcj,Cj->Cqc", ctx.pi_vals, u_loc)


def _rot90(v: np.ndarray) -> np.ndarray:
    """In-plane cross product with the out-of-plane unit vector: (-vy, vx)."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


def _convection_integrand(ctx, cfg: FormConfig, u_loc: np.ndarray) -> np.ndarray:
    """c(u, u, .) integrand values, shape (n_cells_batch, n_q, 2)."""
    grads = _gradients(ctx, u_loc)
    if cfg.form == "rotational":
        omega = grads[..., 1, 0] - grads[..., 0, 1]
        s_vals = _pi_values(ctx, u_loc) if cfg.robust else _values(ctx, u_loc)
        return omega[..., None] * _rot90(s_vals)
    vals = _values(ctx, u_loc)
    out = np.einsum("Cqd,Cqcd->Cqc", vals, grads)
    if cfg.form == "divergence":
        div = grads[..., 0, 0] + grads[..., 1, 1]
        out += 0.5 * div[..., None] * vals
    return out


# ---------------------------------------------------------------------------
# public assembly operations


def assemble_stokes(ctx: AssemblyContext, cfg: FormConfig) -> SparseSystem:
    """Viscous and divergence blocks with the zero-mean gauge vector."""
    A = cfg.nu * _scatter_vel_matrix(ctx, ctx.visc_loc)
    conn_p = ctx.dofs.cell_press_dofs
    conn_v = ctx.dofs.cell_vel_dofs
    n_c = ctx.mesh.n_cells
    rows = np.repeat(conn_p, 18, axis=1).ravel()
    cols = np.tile(conn_v, (1, 3)).ravel()
    data = np.tile(ctx.div_loc.ravel(), n_c)
    B = sp.coo_matrix(
        (data, (rows, cols)), shape=(ctx.dofs.n_press, ctx.dofs.n_vel)
    ).tocsr()
    return SparseSystem(
        A=A,
        B=B,
        gauge=pressure_mean_vector(ctx),
        rhs_vel=np.zeros(ctx.dofs.n_vel),
        rhs_div=np.zeros(ctx.dofs.n_press),
    )


def velocity_stiffness(ctx: AssemblyContext) -> sp.csr_matrix:
    """Unscaled vector Laplacian; its quadratic form is the H1 seminorm."""
    return _scatter_vel_matrix(ctx, ctx.visc_loc)


def velocity_mass(ctx: AssemblyContext) -> sp.csr_matrix:
    return _scatter_vel_matrix(ctx, ctx.mass_loc)


def pi_pairing(ctx: AssemblyContext) -> sp.csr_matrix:
    """Matrix of (phi_j, pi(phi_i)): plain trial against reconstructed test."""
    return _scatter_vel_matrix(ctx, ctx.pi_pair_loc)


def pressure_mean_vector(ctx: AssemblyContext) -> np.ndarray:
    g = np.zeros(ctx.dofs.n_press)
    g[ctx.dofs.cell_press_dofs[:, 0]] = ctx.w_phys.sum()
    return g


def assemble_rhs(ctx: AssemblyContext, f: Callable, robust: bool) -> np.ndarray:
    """Load vector (f, v) or, in robust mode, (f, pi(v))."""
    test = ctx.pi_vals if robust else ctx.trial_vals
    out = np.zeros(ctx.dofs.n_vel)
    for cells in _cell_chunks(ctx.mesh.n_cells):
        pts = ctx.phys_points[cells].reshape(-1, 2)
        fv = np.asarray(f(pts), dtype=float).reshape(len(cells), ctx.n_q, 2)
        loc = np.einsum("q,Cqc,qci->Ci", ctx.w_phys, fv, test)
        _scatter_vel_vector(ctx, loc, cells, out)
    return out


def convection_residual(ctx: AssemblyContext, cfg: FormConfig, u: np.ndarray) -> np.ndarray:
    """Vector of c(u, u, v_i) over all velocity test functions."""
    test = ctx.pi_vals if cfg.robust else ctx.trial_vals
    out = np.zeros(ctx.dofs.n_vel)
    for cells in _cell_chunks(ctx.mesh.n_cells):
        u_loc = _gather(ctx, u, cells)
        integ = _convection_integrand(ctx, cfg, u_loc)
        loc = np.einsum("q,Cqc,qci->Ci", ctx.w_phys, integ, test)
        _scatter_vel_vector(ctx, loc, cells, out)
    return out


def cell_convection_residual(
    ctx: AssemblyContext, cfg: FormConfig, coeffs: np.ndarray
) -> np.ndarray:
    """Single-cell convection contribution c(u, u, v_i) for local coefficients.

    Cells are congruent on a uniform mesh, so the result only depends on
    the 18 local velocity coefficients, not on which cell they live on.
    """
    test = ctx.pi_vals if cfg.robust else ctx.trial_vals
    integ = _convection_integrand(ctx, cfg, np.asarray(coeffs, dtype=float)[None, :])
    return np.einsum("q,Cqc,qci->Ci", ctx.w_phys, integ, test)[0]


def cell_load_vector(
    ctx: AssemblyContext, f: Callable, cell: int, robust: bool
) -> np.ndarray:
    """Single-cell load contributions (f, v_i) or (f, pi(v_i))."""
    test = ctx.pi_vals if robust else ctx.trial_vals
    fv = np.asarray(f(ctx.phys_points[cell]), dtype=float)
    return np.einsum("q,qc,qci->i", ctx.w_phys, fv, test)


def convection_jacobian(ctx: AssemblyContext, cfg: FormConfig, u: np.ndarray) -> sp.csr_matrix:
    """Derivative of the convection residual with respect to the velocity."""
    test = ctx.pi_vals if cfg.robust else ctx.trial_vals
    all_rows, all_cols, all_data = [], [], []
    for cells in _cell_chunks(ctx.mesh.n_cells):
        u_loc = _gather(ctx, u, cells)
        grads = _gradients(ctx, u_loc)
        if cfg.form == "rotational":
            omega_u = grads[..., 1, 0] - grads[..., 0, 1]
            omega_t = ctx.trial_grads[:, 1, 0, :] - ctx.trial_grads[:, 0, 1, :]
            s_table = ctx.pi_vals if cfg.robust else ctx.trial_vals
            s_u = _pi_values(ctx, u_loc) if cfg.robust else _values(ctx, u_loc)
            deriv = np.einsum("qj,Cqc->Cqcj", omega_t, _rot90(s_u))
            deriv += np.einsum("Cq,qcj->Cqcj", omega_u, _rot90_table(s_table))
        else:
            vals = _values(ctx, u_loc)
            deriv = np.einsum("qdj,Cqcd->Cqcj", ctx.trial_vals, grads)
            deriv += np.einsum("Cqd,qcdj->Cqcj", vals, ctx.trial_grads)
            if cfg.form == "divergence":
                div_u = grads[..., 0, 0] + grads[..., 1, 1]
                div_t = ctx.trial_grads[:, 0, 0, :] + ctx.trial_grads[:, 1, 1, :]
                deriv += 0.5 * np.einsum("qj,Cqc->Cqcj", div_t, vals)
                deriv += 0.5 * np.einsum("Cq,qcj->Cqcj", div_u, ctx.trial_vals)
        loc = np.einsum("q,Cqcj,qci->Cij", ctx.w_phys, deriv, test)
        r, c, d = _scatter_vel_matrix_batch(ctx, loc, cells)
        all_rows.append(r)
        all_cols.append(c)
        all_data.append(d)
    n = ctx.dofs.n_vel
    return sp.coo_matrix(
        (np.concatenate(all_data), (np.concatenate(all_rows), np.concatenate(all_cols))),
        shape=(n, n),
    ).tocsr()


def _rot90_table(table: np.ndarray) -> np.ndarray:
    out = np.empty_like(table)
    out[:, 0, :] = -table[:, 1, :]
    out[:, 1, :] = table[:, 0, :]
    return out


def trilinear_form(
    ctx: AssemblyContext, cfg: FormConfig, a: np.ndarray, b: np.ndarray, w: np.ndarray
) -> float:
    """Scalar value c(a, b, w) of the configured convection form."""
    total = 0.0
    for cells in _cell_chunks(ctx.mesh.n_cells):
        a_loc = _gather(ctx, a, cells)
        b_loc = _gather(ctx, b, cells)
        w_loc = _gather(ctx, w, cells)
        a_grads = _gradients(ctx, a_loc)
        if cfg.form == "rotational":
            omega = a_grads[..., 1, 0] - a_grads[..., 0, 1]
            s_vals = _pi_values(ctx, b_loc) if cfg.robust else _values(ctx, b_loc)
            integ = omega[..., None] * _rot90(s_vals)
        else:
            b_grads = _gradients(ctx, b_loc)
            integ = np.einsum("Cqd,Cqcd->Cqc", _values(ctx, a_loc), b_grads)
            if cfg.form == "divergence":
                div = a_grads[..., 0, 0] + a_grads[..., 1, 1]
                integ += 0.5 * div[..., None] * _values(ctx, b_loc)
        t_vals = _pi_values(ctx, w_loc) if cfg.robust else _values(ctx, w_loc)
        total += np.einsum("q,Cqc,Cqc->", ctx.w_phys, integ, t_vals)
    return float(total)


def assemble_tracking_rhs(
    ctx: AssemblyContext,
    u: np.ndarray,
    u_desired: Callable,
    robust: bool,
    literal_pairing: bool = False,
) -> np.ndarray:
    """Derivative of the tracking half-norm with respect to the velocity.

    Robust: (pi(u) - u_d, pi(v)).  Non-robust: (u - u_d, v).  With
    ``literal_pairing`` the robust residual is paired against the plain
    test function instead of its reconstruction.
    """
    test = ctx.pi_vals if (robust and not literal_pairing) else ctx.trial_vals
    out = np.zeros(ctx.dofs.n_vel)
    for cells in _cell_chunks(ctx.mesh.n_cells):
        u_loc = _gather(ctx, u, cells)
        u_vals = _pi_values(ctx, u_loc) if robust else _values(ctx, u_loc)
        pts = ctx.phys_points[cells].reshape(-1, 2)
        ud = np.asarray(u_desired(pts), dtype=float).reshape(len(cells), ctx.n_q, 2)
        loc = np.einsum("q,Cqc,qci->Ci", ctx.w_phys, u_vals - ud, test)
        _scatter_vel_vector(ctx, loc, cells, out)
    return out


def tracking_cost(
    ctx: AssemblyContext, u: np.ndarray, u_desired: Callable, robust: bool
) -> float:
    """Half the squared L2 mismatch between (reconstructed) u and u_d."""
    total = 0.0
    for cells in _cell_chunks(ctx.mesh.n_cells):
        u_loc = _gather(ctx, u, cells)
        u_vals = _pi_values(ctx, u_loc) if robust else _values(ctx, u_loc)
        pts = ctx.phys_points[cells].reshape(-1, 2)
        ud = np.asarray(u_desired(pts), dtype=float).reshape(len(cells), ctx.n_q, 2)
        diff = u_vals - ud
        total += 0.5 * np.einsum("q,Cqc,Cqc->", ctx.w_phys, diff, diff)
    return float(total)


def l2_norm(ctx: AssemblyContext, f: Callable) -> float:
    """Quadrature L2 norm of an analytic vector field."""
    total = 0.0
    for cells in _cell_chunks(ctx.mesh.n_cells):
        pts = ctx.phys_points[cells].reshape(-1, 2)
        fv = np.asarray(f(pts), dtype=float).reshape(len(cells), ctx.n_q, 2)
        total += np.einsum("q,Cqc,Cqc->", ctx.w_phys, fv, fv)
    return float(np.sqrt(total))
