"""End-to-end acceptance gates for the solver and control stack.

Each test checks one shipping criterion at the working 16x16 resolution and
prints a single PASS/FAIL verdict line.  The forward solves and the full
(form x variant x viscosity) control sweep are computed once per module.
"""

import numpy as np
import pytest

from gradrobust.assembly import (
    FormConfig,
    assemble_rhs,
    assemble_stokes,
    cell_convection_residual,
    cell_load_vector,
    convection_jacobian,
    convection_residual,
    gauss_rule,
    l2_norm,
    make_context,
    trilinear_form,
    velocity_mass,
)
from gradrobust.control import (
    reduced_cost,
    reduced_gradient,
    solve_adjoint,
    solve_ocp,
)
from gradrobust.linsolve import SaddleOperator
from gradrobust.mesh import build_uniform_mesh, cell_geometry
from gradrobust.mms_bench import (
    FORM_TAGS,
    grad_psi,
    grad_u_star,
    h1_seminorm,
    h1_seminorm_error,
    u_desired,
    u_star,
)
from gradrobust.nonlinear import solve_state, velocity_invariance_check
from gradrobust.spaces import (
    build_dof_map,
    homogeneous_constraints,
    interpolate_velocity,
)

NUS = (1.0, 0.1, 0.01)
GRAD_TOL = 1e-8  # optimizer stopping tolerance used throughout
NOISE_FLOOR = 1e-12  # seminorm resolution of the direct solver at this scale


def _verdict(num: int, label: str, ok: bool, detail: str = "") -> None:
    state = "PASS" if ok else "FAIL"
    suffix = f"  ({detail})" if detail else ""
    print(f"criterion {num:2d} {label}: {state}{suffix}")
    assert ok, f"criterion {num} {label} failed {suffix}"


@pytest.fixture(scope="module")
def ctx16():
    mesh = build_uniform_mesh(16, 16)
    return make_context(mesh, build_dof_map(mesh), gauss_rule(4))


@pytest.fixture(scope="module")
def forward_errors(ctx16):
    """H1 velocity errors of plain forward solves (no control, no forcing)."""
    out = {}
    for tag, form in FORM_TAGS.items():
        for robust in (True, False):
            for nu in NUS:
                sol = solve_state(ctx16, FormConfig(form, robust, nu), u_star)
                out[(tag, robust, nu)] = h1_seminorm_error(
                    ctx16, sol.u, grad_u_star
                )
    return out


@pytest.fixture(scope="module")
def sweep(ctx16):
    """Converged tracking solves for every form/variant/viscosity combination."""
    out = {}
    for tag, form in FORM_TAGS.items():
        for robust in (True, False):
            for nu in NUS:
                res = solve_ocp(
                    ctx16, FormConfig(form, robust, nu), u_desired, u_star
                )
                assert res.converged, f"sweep combo {(tag, robust, nu)} stalled"
                out[(tag, robust, nu)] = res
    return out


# ---------------------------------------------------------------------------
# criteria 1-3: forward velocity errors


def test_c01_robust_forward_exactness(forward_errors):
    errs = [forward_errors[(t, True, nu)] for t in FORM_TAGS for nu in NUS]
    _verdict(
        1,
        "robust forward exactness",
        max(errs) <= 1e-9,
        f"max H1 error {max(errs):.2e}",
    )


def test_c02_plain_state_error_scales_with_viscosity(forward_errors):
    ratios = []
    for tag in ("conv", "div"):
        e = [forward_errors[(tag, False, nu)] for nu in NUS]
        ratios += [e[1] / e[0], e[2] / e[1]]
    ok = all(8.0 <= r <= 12.0 for r in ratios)
    _verdict(
        2,
        "plain state error ~ 1/nu",
        ok,
        "ratios " + " ".join(f"{r:.2f}" for r in ratios),
    )


def test_c03_rotational_forward_parity(forward_errors):
    # both entries sit at solver noise; the floor keeps the ratio meaningful
    plain = [forward_errors[("rot", False, nu)] for nu in NUS]
    robust = [forward_errors[("rot", True, nu)] for nu in NUS]
    parity = all(
        max(p, NOISE_FLOOR) <= 10.0 * max(r, NOISE_FLOOR)
        for p, r in zip(plain, robust)
    )
    ok = parity and max(plain) <= 1e-9
    _verdict(
        3,
        "rotational forward parity",
        ok,
        f"plain max {max(plain):.2e} robust max {max(robust):.2e}",
    )


# ---------------------------------------------------------------------------
# criteria 4-5: adjoint velocity norms at the control optimum


def test_c04_robust_adjoint_vanishes(ctx16, sweep):
    rot = [h1_seminorm(ctx16, sweep[("rot", True, nu)].adjoint_vel) for nu in NUS]
    ok = max(rot) <= 1e-9
    details = [f"rot max {max(rot):.2e}"]
    for tag in ("conv", "div"):
        vals = [
            h1_seminorm(ctx16, sweep[(tag, True, nu)].adjoint_vel) for nu in NUS
        ]
        ok = ok and max(vals) <= 10.0 * GRAD_TOL
        # values at the solver floor count as viscosity-independent
        ok = ok and (max(vals) <= 1e-9 or max(vals) / min(vals) <= 2.0)
        details.append(f"{tag} max {max(vals):.2e}")
    _verdict(4, "robust adjoint at tolerance floor", ok, " ".join(details))


def test_c05_plain_adjoint_scaling_and_form_independence(ctx16, sweep):
    norms = {
        (tag, nu): h1_seminorm(ctx16, sweep[(tag, False, nu)].adjoint_vel)
        for tag in FORM_TAGS
        for nu in NUS
    }
    ratios = []
    for tag in FORM_TAGS:
        v = [norms[(tag, nu)] for nu in NUS]
        ratios += [v[1] / v[0], v[2] / v[1]]
    scaling_ok = all(8.0 <= r <= 12.0 for r in ratios)

    at_one = [norms[(tag, 1.0)] for tag in FORM_TAGS]
    spread = (max(at_one) - min(at_one)) / min(at_one)
    _verdict(
        5,
        "plain adjoint ~ 1/nu, form-independent",
        scaling_ok and spread <= 0.05,
        f"ratios {min(ratios):.2f}..{max(ratios):.2f} spread {spread:.2%}",
    )


# ---------------------------------------------------------------------------
# criterion 6: gradient-forcing invariance


def test_c06_gradient_force_invariance(ctx16):
    shifts = {}
    for robust in (True, False):
        cfg = FormConfig("convective", robust, 0.01)
        diff, _ = velocity_invariance_check(
            ctx16, cfg, u_star, None, grad_psi
        )
        shifts[robust] = diff
    ok = shifts[True] <= 1e-9 and shifts[False] >= 100.0 * 1e-9
    _verdict(
        6,
        "gradient forcing leaves robust velocity alone",
        ok,
        f"robust {shifts[True]:.2e} plain {shifts[False]:.2e}",
    )


# ---------------------------------------------------------------------------
# criterion 7: reconstruction operator properties


def _zero_trace_divfree_field(ctx):
    """Unit-H1 velocity with zero trace and zero discrete divergence."""
    system = assemble_stokes(ctx, FormConfig("convective", True, 1.0))
    rhs = assemble_rhs(
        ctx, lambda x: np.column_stack([x[:, 1] ** 2, x[:, 0] * x[:, 1]]), True
    )
    u, _, _, _ = SaddleOperator(system, homogeneous_constraints(ctx.dofs)).solve(
        rhs, np.zeros(ctx.dofs.n_press)
    )
    return u / h1_seminorm(ctx, u), system


def test_c07_reconstruction_properties(ctx16):
    rng = np.random.default_rng(7)
    dofs, recon = ctx16.dofs, ctx16.recon
    conn = dofs.cell_vel_dofs

    # quadratic vector polynomials are reproduced pointwise
    repro = 0.0
    for _ in range(5):
        c = rng.uniform(-1.0, 1.0, size=(2, 6))

        def poly(x, c=c):
            basis = np.stack(
                [np.ones(len(x)), x[:, 0], x[:, 1], x[:, 0] ** 2,
                 x[:, 0] * x[:, 1], x[:, 1] ** 2]
            )
            return (c @ basis).T

        v = interpolate_velocity(dofs, poly)
        vals = np.einsum("qcj,Cj->Cqc", ctx16.trial_vals, v[conn])
        pi_vals = np.einsum("qcj,Cj->Cqc", ctx16.pi_vals, v[conn])
        scale = max(1.0, np.abs(vals).max())
        repro = max(repro, np.abs(pi_vals - vals).max() / scale)
        pts = rng.uniform(-1.0, 1.0, size=(4, 2))
        for cell in rng.choice(ctx16.mesh.n_cells, 3, replace=False):
            geom = cell_geometry(ctx16.mesh, cell)
            diff = recon.eval_pi_at(pts, v[conn[cell]]) - poly(
                geom.map_to_physical(pts)
            )
            repro = max(repro, np.abs(diff).max() / scale)
    repro_ok = repro <= 1e-13

    # solenoidal inputs come out pointwise divergence-free
    v_h, system = _zero_trace_divfree_field(ctx16)
    discrete_div = np.abs(system.B @ v_h).max()
    div_vals = np.abs(np.einsum("qj,Cj->Cq", ctx16.pi_divs, v_h[conn])).max()
    for cell in rng.choice(ctx16.mesh.n_cells, 10, replace=False):
        pts = rng.uniform(-1.0, 1.0, size=(6, 2))
        div_vals = max(
            div_vals, np.abs(recon.eval_div_pi_at(pts, v_h[conn[cell]])).max()
        )
    div_ok = discrete_div <= 1e-12 and div_vals <= 1e-12

    # reconstructed solenoidal fields are orthogonal to gradients
    num = abs(assemble_rhs(ctx16, grad_psi, robust=True) @ v_h)
    pi_norm = np.sqrt(
        np.einsum("Cj,jk,Ck->", v_h[conn], ctx16.pi_pi_loc, v_h[conn])
    )
    ortho = num / (l2_norm(ctx16, grad_psi) * pi_norm)
    ortho_ok = ortho <= 1e-11

    # normal traces match across interior edges
    mesh = ctx16.mesh
    n_h = (mesh.n_y + 1) * mesh.n_x
    interior = [e for e in range(mesh.n_edges) if mesh.edge_cells[e, 1] >= 0]
    t = np.linspace(-0.9, 0.9, 5)
    jump = 0.0
    for _ in range(3):
        w = rng.uniform(-1.0, 1.0, dofs.n_vel)
        for e in interior:
            minus, plus = mesh.edge_cells[e]
            if e < n_h:  # horizontal edge, normal along y
                pts_m = np.column_stack([t, np.ones_like(t)])
                pts_p = np.column_stack([t, -np.ones_like(t)])
                comp = 1
            else:
                pts_m = np.column_stack([np.ones_like(t), t])
                pts_p = np.column_stack([-np.ones_like(t), t])
                comp = 0
            tr_m = recon.eval_pi_at(pts_m, w[conn[minus]])[:, comp]
            tr_p = recon.eval_pi_at(pts_p, w[conn[plus]])[:, comp]
            jump = max(jump, np.abs(tr_m - tr_p).max())
    jump_ok = jump <= 1e-12

    _verdict(
        7,
        "reconstruction operator properties",
        repro_ok and div_ok and ortho_ok and jump_ok,
        f"repro {repro:.1e} div {div_vals:.1e} ortho {ortho:.1e} jump {jump:.1e}",
    )


# ---------------------------------------------------------------------------
# criterion 8: discrete skew-symmetry


def test_c08_skew_symmetry_suite():
    mesh = build_uniform_mesh(4, 4)
    dofs = build_dof_map(mesh)
    ctx = make_context(mesh, dofs, gauss_rule(4))
    rng = np.random.default_rng(8)
    cfgs = (
        FormConfig("divergence", False, 1.0),
        FormConfig("rotational", False, 1.0),
        FormConfig("rotational", True, 1.0),
    )
    worst = 0.0
    for _ in range(20):
        u = rng.uniform(-1.0, 1.0, dofs.n_vel)
        u[dofs.boundary_vel_dofs] = 0.0  # advecting field keeps mass inside
        v = rng.uniform(-1.0, 1.0, dofs.n_vel)
        for cfg in cfgs:
            worst = max(worst, abs(trilinear_form(ctx, cfg, u, v, v)))
    _verdict(8, "convection forms are skew", worst <= 1e-12, f"max {worst:.1e}")


# ---------------------------------------------------------------------------
# criterion 9: derivative consistency


def test_c09_derivative_consistency(ctx16, sweep):
    mesh = build_uniform_mesh(4, 4)
    dofs = build_dof_map(mesh)
    ctx = make_context(mesh, dofs, gauss_rule(4))
    rng = np.random.default_rng(9)

    slopes = []
    for form in FORM_TAGS.values():
        for robust in (True, False):
            cfg = FormConfig(form, robust, 1.0)
            u0 = rng.uniform(-1.0, 1.0, dofs.n_vel)
            d = rng.uniform(-1.0, 1.0, dofs.n_vel)
            jac_d = convection_jacobian(ctx, cfg, u0) @ d
            r0 = convection_residual(ctx, cfg, u0)
            errs = []
            eps_list = (1e-1, 1e-2, 1e-3)
            for eps in eps_list:
                r1 = convection_residual(ctx, cfg, u0 + eps * d)
                errs.append(np.linalg.norm(r1 - r0 - eps * jac_d))
            slopes += [
                np.log10(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)
            ]
    order_ok = min(slopes) >= 1.9

    # reduced gradient against central differences, away from and at the optimum
    cfg = FormConfig("convective", False, 0.1)
    opt = sweep[("conv", False, 0.1)]
    rel_worst = 0.0
    eps = 1e-4
    for q in (np.zeros(ctx16.dofs.n_vel), opt.q):
        state = solve_state(ctx16, cfg, u_star, control=q)
        z, _, _ = solve_adjoint(ctx16, cfg, state, u_desired)
        g = reduced_gradient(ctx16, cfg, q, z)
        mass = velocity_mass(ctx16)
        for _ in range(2):
            d = rng.standard_normal(ctx16.dofs.n_vel)
            d /= np.sqrt(d @ (mass @ d))
            gdot = g @ (mass @ d)
            jp = reduced_cost(ctx16, cfg, q + eps * d, u_desired, u_star)
            jm = reduced_cost(ctx16, cfg, q - eps * d, u_desired, u_star)
            fd = (jp - jm) / (2.0 * eps)
            rel_worst = max(rel_worst, abs(fd - gdot) / max(abs(gdot), 1.0))
    grad_ok = rel_worst <= 1e-5

    _verdict(
        9,
        "jacobian and reduced gradient consistent",
        order_ok and grad_ok,
        f"min slope {min(slopes):.2f} max rel fd error {rel_worst:.1e}",
    )


# ---------------------------------------------------------------------------
# criterion 10: independent quadrature oracle


def _lagrange_1d(t):
    return np.stack([0.5 * t * (t - 1.0), 1.0 - t * t, 0.5 * t * (t + 1.0)])


def _dlagrange_1d(t):
    return np.stack([t - 0.5, -2.0 * t, t + 0.5])


def _q2_velocity(coeffs, pts, extents):
    """Values and physical gradients of an 18-coefficient field at ref points."""
    lx, ly = _lagrange_1d(pts[:, 0]), _lagrange_1d(pts[:, 1])
    dlx, dly = _dlagrange_1d(pts[:, 0]), _dlagrange_1d(pts[:, 1])
    vals = np.zeros((len(pts), 2))
    grads = np.zeros((len(pts), 2, 2))
    for b in range(3):
        for a in range(3):
            phi = lx[a] * ly[b]
            dphix = dlx[a] * ly[b] * (2.0 / extents[0])
            dphiy = lx[a] * dly[b] * (2.0 / extents[1])
            for c in range(2):
                w = coeffs[2 * (3 * b + a) + c]
                vals[:, c] += w * phi
                grads[:, c, 0] += w * dphix
                grads[:, c, 1] += w * dphiy
    return vals, grads


def test_c10_independent_quadrature_oracle(ctx16):
    mesh, recon = ctx16.mesh, ctx16.recon
    hx, hy = mesh.extents
    x1, w1 = np.polynomial.legendre.leggauss(8)
    X, Y = np.meshgrid(x1, x1, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    w = (np.outer(w1, w1)).ravel() * (hx * hy / 4.0)

    rng = np.random.default_rng(10)
    worst = 0.0

    def close(assembled, oracle):
        nonlocal worst
        rel = abs(assembled - oracle) / (1.0 + abs(oracle))
        worst = max(worst, rel)
        return rel <= 1e-12

    ok = True
    for form in FORM_TAGS.values():
        for cell in rng.choice(mesh.n_cells, 5, replace=False):
            a = rng.uniform(-1.0, 1.0, 18)
            b = rng.uniform(-1.0, 1.0, 18)
            p3 = rng.uniform(-1.0, 1.0, 3)

            va, ga = _q2_velocity(a, pts, mesh.extents)
            vb, gb = _q2_velocity(b, pts, mesh.extents)
            pia = recon.eval_pi_at(pts, a)
            pib = recon.eval_pi_at(pts, b)
            press = p3[0] + p3[1] * pts[:, 0] + p3[2] * pts[:, 1]

            ok &= close(a @ ctx16.visc_loc @ b, np.einsum("q,qcd,qcd->", w, ga, gb))
            ok &= close(a @ ctx16.mass_loc @ b, np.einsum("q,qc,qc->", w, va, vb))
            ok &= close(
                p3 @ ctx16.div_loc @ a,
                np.einsum("q,q,q->", w, press, ga[:, 0, 0] + ga[:, 1, 1]),
            )
            ok &= close(a @ ctx16.pi_pair_loc @ b, np.einsum("q,qc,qc->", w, vb, pia))
            ok &= close(a @ ctx16.pi_pi_loc @ b, np.einsum("q,qc,qc->", w, pia, pib))

            for robust in (True, False):
                cfg = FormConfig(form, robust, 1.0)
                test_vals = pib if robust else vb
                adv = np.einsum("qd,qcd->qc", va, ga)
                if form == "divergence":
                    adv = adv + 0.5 * (ga[:, 0, 0] + ga[:, 1, 1])[:, None] * va
                if form == "rotational":
                    omega = ga[:, 1, 0] - ga[:, 0, 1]
                    s_vals = pia if robust else va
                    adv = omega[:, None] * np.column_stack(
                        [-s_vals[:, 1], s_vals[:, 0]]
                    )
                oracle = np.einsum("q,qc,qc->", w, adv, test_vals)
                ok &= close(b @ cell_convection_residual(ctx16, cfg, a), oracle)

                geom = cell_geometry(mesh, cell)
                f_vals = grad_psi(geom.map_to_physical(pts))
                oracle_load = np.einsum("q,qc,qc->", w, f_vals, test_vals)
                ok &= close(
                    b @ cell_load_vector(ctx16, grad_psi, cell, robust),
                    oracle_load,
                )

    _verdict(10, "assembly matches 8x8 quadrature oracle", bool(ok), f"max rel {worst:.1e}")
