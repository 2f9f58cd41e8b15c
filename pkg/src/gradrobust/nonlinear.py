"""Newton solver for the stationary nonlinear flow problem.

The iteration starts from the Stokes solution with the same data and
boundary values, then applies damped Newton steps on the bordered
saddle-point system.  Each step factorises the linearised operator; the
factorisation at the converged state is returned so adjoint solves can
reuse it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from gradrobust.assembly import (
    AssemblyContext,
    FormConfig,
    SparseSystem,
    assemble_rhs,
    assemble_stokes,
    convection_jacobian,
    convection_residual,
    pi_pairing,
    velocity_mass,
    velocity_stiffness,
)
from gradrobust.linsolve import SaddleOperator
from gradrobust.spaces import dirichlet_constraints, homogeneous_constraints


class NonlinearSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class NewtonReport:
    converged: bool
    iterations: int
    residual_norms: tuple
    step_sizes: tuple


@dataclass
class StateSolution:
    u: np.ndarray
    p: np.ndarray
    lam: float
    report: NewtonReport
    operator: SaddleOperator


def control_pairing_matrix(ctx: AssemblyContext, robust: bool):
    """Matrix taking control dofs to momentum load entries (q, T phi_i)."""
    return pi_pairing(ctx) if robust else velocity_mass(ctx)


def solve_state(
    ctx: AssemblyContext,
    cfg: FormConfig,
    boundary_velocity: Callable,
    forcing: Callable | None = None,
    control: np.ndarray | None = None,
    atol: float = 1e-12,
    rtol: float = 1e-12,
    max_iter: int = 25,
    max_backtracks: int = 8,
) -> StateSolution:
    """Solve the discrete stationary problem with Dirichlet velocity data."""
    dofs = ctx.dofs
    system = assemble_stokes(ctx, cfg)
    rhs_vel = np.zeros(dofs.n_vel)
    if forcing is not None:
        rhs_vel += assemble_rhs(ctx, forcing, cfg.robust)
    if control is not None:
        rhs_vel += control_pairing_matrix(ctx, cfg.robust) @ control

    bc = dirichlet_constraints(dofs, boundary_velocity)
    hom = homogeneous_constraints(dofs)
    system.rhs_vel = rhs_vel
    u, p, lam, _ = solve_saddle_init(system, bc)

    A, B, g = system.A, system.B, system.gauge

    def residual(u_, p_, lam_):
        r_v = A @ u_ + convection_residual(ctx, cfg, u_) - B.T @ p_ - rhs_vel
        r_v[bc.dofs] = 0.0
        r_p = B @ u_ + g * lam_
        r_g = g @ p_
        return r_v, r_p, r_g

    def norm(parts):
        r_v, r_p, r_g = parts
        return float(np.sqrt(r_v @ r_v + r_p @ r_p + r_g * r_g))

    res = residual(u, p, lam)
    norms = [norm(res)]
    steps = []
    target = max(atol, rtol * norms[0])
    converged = norms[0] <= target
    operator = None

    it = 0
    while not converged and it < max_iter:
        lin = SparseSystem(
            A=A + convection_jacobian(ctx, cfg, u),
            B=B,
            gauge=g,
            rhs_vel=np.zeros_like(rhs_vel),
            rhs_div=np.zeros(dofs.n_press),
        )
        operator = SaddleOperator(lin, hom)
        du, dp, dlam, _ = operator.solve(-res[0], -res[1], -res[2])

        s = 1.0
        accepted = False
        for _ in range(max_backtracks + 1):
            trial = (u + s * du, p + s * dp, lam + s * dlam)
            trial_res = residual(*trial)
            trial_norm = norm(trial_res)
            if trial_norm <= (1.0 - 1e-4 * s) * norms[-1] or trial_norm <= target:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            break
        u, p, lam = trial
        res = trial_res
        norms.append(trial_norm)
        steps.append(s)
        it += 1
        converged = trial_norm <= target

    # refresh the factorisation at the accepted state so transpose solves
    # linearise exactly there
    lin = SparseSystem(
        A=A + convection_jacobian(ctx, cfg, u),
        B=B,
        gauge=g,
        rhs_vel=np.zeros_like(rhs_vel),
        rhs_div=np.zeros(dofs.n_press),
    )
    operator = SaddleOperator(lin, hom)

    report = NewtonReport(
        converged=converged,
        iterations=it,
        residual_norms=tuple(norms),
        step_sizes=tuple(steps),
    )
    return StateSolution(u=u, p=p, lam=lam, report=report, operator=operator)


def solve_saddle_init(system: SparseSystem, constraints):
    """Stokes initial guess; separate so tests can call it directly."""
    op = SaddleOperator(system, constraints)
    return op.solve(system.rhs_vel, system.rhs_div)


def velocity_invariance_check(
    ctx: AssemblyContext,
    cfg: FormConfig,
    boundary_velocity: Callable,
    forcing: Callable | None,
    potential_gradient: Callable,
    **newton_kwargs,
):
    """Solve with forcing f and with f shifted by a gradient field.

    Returns the H1 seminorm of the velocity difference together with the
    seminorm of the unshifted velocity, so callers can form a relative
    measure.  A discretisation that only sees the divergence-free part
    of the load leaves the velocity unchanged under the shift.
    """
    base = solve_state(ctx, cfg, boundary_velocity, forcing, **newton_kwargs)
    if forcing is None:
        shifted_forcing = potential_gradient
    else:

        def shifted_forcing(x):
            return np.asarray(forcing(x), dtype=float) + np.asarray(
                potential_gradient(x), dtype=float
            )

    shifted = solve_state(ctx, cfg, boundary_velocity, shifted_forcing, **newton_kwargs)
    if not (base.report.converged and shifted.report.converged):
        raise NonlinearSolverError("state solve did not converge in invariance check")
    K = velocity_stiffness(ctx)
    d = base.u - shifted.u
    diff = float(np.sqrt(max(d @ (K @ d), 0.0)))
    ref = float(np.sqrt(max(base.u @ (K @ base.u), 0.0)))
    return diff, ref
