"""Command-line front end: config parsing, dispatch, table and field output.

Configuration comes from flags, from a flat ``key = value`` file, or both;
flags win.  Exit codes are part of the interface: 0 all runs converged,
1 runtime or convergence failure, 2 unknown flag or config key, 3
conflicting values, 4 unreadable config file, 5 unwritable output.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .assembly import FormConfig, gauss_rule, make_context
from .control import OcpConfig, solve_ocp
from .linsolve import LinearSolverError
from .mesh import Mesh, build_uniform_mesh
from .mms_bench import (
    FORM_TAGS,
    ExperimentRecord,
    grad_psi,
    grad_u_star,
    h1_seminorm,
    h1_seminorm_error,
    run_tables,
    u_desired,
    u_star,
)
from .nonlinear import NonlinearSolverError, solve_state, velocity_invariance_check
from .spaces import build_dof_map

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFLICT = 3
EXIT_UNREADABLE = 4
EXIT_UNWRITABLE = 5

MODES = ("state", "invariance", "ocp", "tables")

CSV_COLUMNS = (
    "form",
    "robust",
    "nu",
    "n",
    "err_state_h1",
    "err_adjoint_h1",
    "newton_iters",
    "opt_iters",
    "wall_s",
)


class CliError(Exception):
    """Configuration or output failure carrying its process exit code."""

    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


@dataclass(frozen=True)
class RunConfig:
    mode: str = "state"
    forms: tuple[str, ...] = ("conv",)
    robust: tuple[bool, ...] = (True,)
    nu: tuple[float, ...] = (1.0,)
    n: int = 16
    alpha: float = 1.0
    newton_tol: float = 1e-12
    grad_tol: float = 1e-8
    max_newton: int = 25
    max_opt: int = 200
    csv: str | None = None
    markdown: str | None = None
    vtk: str | None = None
    deterministic: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise CliError(EXIT_USAGE, f"unknown mode {self.mode!r}")
        for tag in self.forms:
            if tag not in FORM_TAGS:
                raise CliError(EXIT_USAGE, f"unknown form {tag!r}")
        if not self.forms or not self.robust or not self.nu:
            raise CliError(EXIT_USAGE, "forms, robust, and nu must be nonempty")
        if any(v <= 0 for v in self.nu):
            raise CliError(EXIT_USAGE, "nu values must be positive")
        if self.n < 1:
            raise CliError(EXIT_USAGE, "mesh level n must be at least 1")
        if self.mode != "tables":
            for name, vals in (
                ("forms", self.forms),
                ("robust", self.robust),
                ("nu", self.nu),
            ):
                if len(vals) != 1:
                    raise CliError(
                        EXIT_CONFLICT,
                        f"mode {self.mode!r} takes a single {name} value, "
                        f"got {len(vals)}",
                    )


# ---------------------------------------------------------------------------
# parsing


def _parse_bool(token: str) -> bool:
    low = token.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {token!r}")


def _parse_bool_list(token: str) -> tuple[bool, ...]:
    if token.strip().lower() == "both":
        return (True, False)
    return tuple(_parse_bool(t) for t in token.split(","))


def _parse_float_list(token: str) -> tuple[float, ...]:
    return tuple(float(t) for t in token.split(","))


def _parse_str_list(token: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in token.split(",") if t.strip())


_FIELD_PARSERS = {
    "mode": str,
    "forms": _parse_str_list,
    "robust": _parse_bool_list,
    "nu": _parse_float_list,
    "n": int,
    "alpha": float,
    "newton_tol": float,
    "grad_tol": float,
    "max_newton": int,
    "max_opt": int,
    "csv": str,
    "markdown": str,
    "vtk": str,
    "deterministic": _parse_bool,
}


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines into typed config entries."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(EXIT_USAGE, f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "form":
            if "forms" in entries:
                raise CliError(EXIT_CONFLICT, "config sets both form and forms")
            key = "forms"
        if key not in _FIELD_PARSERS:
            raise CliError(EXIT_USAGE, f"unknown config key {key!r}")
        if key in entries:
            raise CliError(EXIT_CONFLICT, f"config repeats key {key!r}")
        try:
            entries[key] = _FIELD_PARSERS[key](value)
        except ValueError as exc:
            raise CliError(EXIT_USAGE, f"config key {key!r}: {exc}") from exc
    return entries


def _token(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_config(cfg: RunConfig) -> str:
    """Serialize a config so that parse_config round-trips it exactly."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if isinstance(value, tuple):
            text = ",".join(_token(v) for v in value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gradrobust",
        description="Mixed finite-element flow solver with a divergence-free "
        "test-function reconstruction, plus a tracking-type control mode.",
    )
    p.add_argument("--config", help="flat key=value config file; flags override")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--form", help="single form tag: conv, div, or rot")
    p.add_argument("--forms", help="comma list of form tags (tables mode)")
    p.add_argument("--robust", help="true, false, both, or a comma list")
    p.add_argument("--nu", help="viscosity, or a comma list for sweeps")
    p.add_argument("--n", type=int, help="cells per direction")
    p.add_argument("--alpha", type=float, help="control cost weight")
    p.add_argument("--newton-tol", type=float, dest="newton_tol")
    p.add_argument("--grad-tol", type=float, dest="grad_tol")
    p.add_argument("--max-newton", type=int, dest="max_newton")
    p.add_argument("--max-opt", type=int, dest="max_opt")
    p.add_argument("--csv", help="CSV output path (tables mode)")
    p.add_argument("--markdown", help="Markdown output path (tables mode)")
    p.add_argument("--vtk", help="field output path (state/ocp modes)")
    p.add_argument("--deterministic", help="true/false: sort sweep records")
    return p


def parse_config(argv: Sequence[str], config_text: str | None = None) -> RunConfig:
    """Build a validated RunConfig from flags and an optional config file."""
    ns = _build_parser().parse_args(list(argv))

    if ns.form is not None and ns.forms is not None:
        raise CliError(EXIT_CONFLICT, "--form and --forms are mutually exclusive")

    entries: dict = {}
    if config_text is None and ns.config is not None:
        try:
            with open(ns.config, "r", encoding="utf-8") as fh:
                config_text = fh.read()
        except OSError as exc:
            raise CliError(EXIT_UNREADABLE, f"cannot read {ns.config}: {exc}") from exc
    if config_text is not None:
        entries.update(parse_config_text(config_text))

    cli_entries = {
        "mode": ns.mode,
        "forms": ns.forms if ns.forms is not None else ns.form,
        "robust": ns.robust,
        "nu": ns.nu,
        "n": ns.n,
        "alpha": ns.alpha,
        "newton_tol": ns.newton_tol,
        "grad_tol": ns.grad_tol,
        "max_newton": ns.max_newton,
        "max_opt": ns.max_opt,
        "csv": ns.csv,
        "markdown": ns.markdown,
        "vtk": ns.vtk,
        "deterministic": ns.deterministic,
    }
    for key, raw in cli_entries.items():
        if raw is None:
            continue
        if isinstance(raw, str):
            try:
                entries[key] = _FIELD_PARSERS[key](raw)
            except ValueError as exc:
                raise CliError(EXIT_USAGE, f"option {key!r}: {exc}") from exc
        else:
            entries[key] = raw
    return RunConfig(**entries)


# ---------------------------------------------------------------------------
# output


def write_tables(
    records: Sequence[ExperimentRecord],
    csv_path: str | None = None,
    markdown_path: str | None = None,
) -> str:
    """Emit sweep records as CSV rows and a Markdown grid.

    Returns the Markdown text; files are only written when paths are given.
    Raises ValueError on an empty record list before touching any path.
    """
    if not records:
        raise ValueError("no records to write")

    if csv_path is not None:
        _open_for_write(csv_path, _write_csv, records)

    md = _markdown_tables(records)
    if markdown_path is not None:
        _open_for_write(markdown_path, lambda fh, text: fh.write(text), md)
    return md


def _open_for_write(path, writer, payload):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer(fh, payload)
    except OSError as exc:
        raise CliError(EXIT_UNWRITABLE, f"cannot write {path}: {exc}") from exc


def _write_csv(fh, records):
    w = csv.writer(fh)
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(
            [
                r.form,
                "true" if r.robust else "false",
                f"{r.nu:g}",
                r.n,
                f"{r.err_state_h1:.12e}",
                f"{r.err_adjoint_h1:.12e}",
                r.newton_iters,
                r.opt_iters,
                f"{r.wall_s:.3f}",
            ]
        )


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.3e}"


def _markdown_tables(records: Sequence[ExperimentRecord]) -> str:
    by_key = {(r.n, r.form, r.robust, r.nu): r for r in records}
    levels = sorted({r.n for r in records})
    nus = sorted({r.nu for r in records}, reverse=True)
    form_order = [t for t in FORM_TAGS if any(r.form == t for r in records)]

    out = []
    for n in levels:
        out.append(f"## mesh {n}x{n}")
        for title, attr in (
            ("state velocity error (H1)", "err_state_h1"),
            ("adjoint velocity norm (H1)", "err_adjoint_h1"),
        ):
            out.append(f"\n### {title}\n")
            header = "| form | variant | " + " | ".join(f"nu={v:g}" for v in nus) + " |"
            out.append(header)
            out.append("|" + "---|" * (len(nus) + 2))
            for tag in form_order:
                for robust in (True, False):
                    cells = []
                    for v in nus:
                        r = by_key.get((n, tag, robust, v))
                        cells.append("-" if r is None else _fmt(getattr(r, attr)))
                    if any(c != "-" for c in cells):
                        variant = "robust" if robust else "plain"
                        out.append(f"| {tag} | {variant} | " + " | ".join(cells) + " |")
        out.append("")
    return "\n".join(out) + "\n"


def export_fields(
    u: np.ndarray,
    p: np.ndarray,
    z: np.ndarray,
    s: np.ndarray,
    mesh: Mesh,
    path: str,
) -> None:
    """Write velocity/pressure pairs to a legacy ASCII VTK 2.0 file.

    Velocities are subsampled at the mesh corners (point vectors), the
    pressures are reduced to their cellwise means (cell scalars).
    """
    vel = _corner_velocity(mesh, u)
    adj = _corner_velocity(mesh, z)
    p_mean = np.asarray(p, dtype=float)[0::3]
    s_mean = np.asarray(s, dtype=float)[0::3]
    if p_mean.shape[0] != mesh.n_cells or s_mean.shape[0] != mesh.n_cells:
        raise ValueError("pressure vectors do not match the mesh")

    lines = [
        "# vtk DataFile Version 2.0",
        "gradrobust flow fields",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{x:.12e} {y:.12e} 0.0" for x, y in mesh.vertices]
    lines.append(f"CELLS {mesh.n_cells} {5 * mesh.n_cells}")
    lines += ["4 " + " ".join(str(v) for v in quad) for quad in mesh.cells]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += ["9"] * mesh.n_cells
    lines.append(f"POINT_DATA {mesh.n_vertices}")
    for name, data in (("velocity", vel), ("adjoint_velocity", adj)):
        lines.append(f"VECTORS {name} double")
        lines += [f"{vx:.12e} {vy:.12e} 0.0" for vx, vy in data]
    lines.append(f"CELL_DATA {mesh.n_cells}")
    for name, data in (("pressure", p_mean), ("adjoint_pressure", s_mean)):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [f"{v:.12e}" for v in data]

    _open_for_write(path, lambda fh, text: fh.write(text), "\n".join(lines) + "\n")


def _corner_velocity(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Velocity vectors at the mesh vertices, in vertex order."""
    u = np.asarray(u, dtype=float)
    gx = 2 * mesh.n_x + 1
    if u.shape != (2 * gx * (2 * mesh.n_y + 1),):
        raise ValueError("velocity vector does not match the mesh")
    I, J = np.meshgrid(
        np.arange(mesh.n_x + 1), np.arange(mesh.n_y + 1), indexing="xy"
    )
    nodes = (2 * J * gx + 2 * I).ravel()
    return u.reshape(-1, 2)[nodes]


# ---------------------------------------------------------------------------
# dispatch


def _single_setup(cfg: RunConfig):
    mesh = build_uniform_mesh(cfg.n, cfg.n)
    ctx = make_context(mesh, build_dof_map(mesh), gauss_rule(4))
    fc = FormConfig(FORM_TAGS[cfg.forms[0]], cfg.robust[0], cfg.nu[0])
    return mesh, ctx, fc


def _run_state(cfg: RunConfig) -> int:
    mesh, ctx, fc = _single_setup(cfg)
    sol = solve_state(
        ctx,
        fc,
        boundary_velocity=u_star,
        atol=cfg.newton_tol,
        rtol=cfg.newton_tol,
        max_iter=cfg.max_newton,
    )
    err = h1_seminorm_error(ctx, sol.u, grad_u_star)
    print(f"form={cfg.forms[0]} robust={cfg.robust[0]} nu={cfg.nu[0]:g} n={cfg.n}")
    print(f"newton iterations: {sol.report.iterations}")
    print(f"state velocity H1 error: {err:.4e}")
    if cfg.vtk:
        zeros_v = np.zeros_like(sol.u)
        zeros_p = np.zeros_like(sol.p)
        export_fields(sol.u, sol.p, zeros_v, zeros_p, mesh, cfg.vtk)
        print(f"fields written to {cfg.vtk}")
    return EXIT_OK


def _run_invariance(cfg: RunConfig) -> int:
    _, ctx, fc = _single_setup(cfg)
    diff, ref = velocity_invariance_check(
        ctx,
        fc,
        boundary_velocity=u_star,
        forcing=None,
        potential_gradient=grad_psi,
        atol=cfg.newton_tol,
        rtol=cfg.newton_tol,
        max_iter=cfg.max_newton,
    )
    rel = diff / ref if ref > 0 else diff
    print(f"form={cfg.forms[0]} robust={cfg.robust[0]} nu={cfg.nu[0]:g} n={cfg.n}")
    print(f"velocity shift under gradient forcing: {diff:.4e}")
    print(f"reference velocity seminorm: {ref:.4e}")
    print(f"relative shift: {rel:.4e}")
    return EXIT_OK


def _run_ocp(cfg: RunConfig) -> int:
    mesh, ctx, fc = _single_setup(cfg)
    ocp = OcpConfig(alpha=cfg.alpha, grad_tol=cfg.grad_tol, max_iter=cfg.max_opt)
    result = solve_ocp(ctx, fc, u_desired, u_star, ocp=ocp)
    err_u = h1_seminorm_error(ctx, result.state.u, grad_u_star)
    print(f"form={cfg.forms[0]} robust={cfg.robust[0]} nu={cfg.nu[0]:g} n={cfg.n}")
    print(f"optimizer iterations: {result.iterations} converged={result.converged}")
    print(f"final cost: {result.cost_history[-1]:.10e}")
    print(f"final gradient norm: {result.grad_norms[-1]:.4e}")
    print(f"state velocity H1 error: {err_u:.4e}")
    print(f"adjoint velocity H1 norm: {h1_seminorm(ctx, result.adjoint_vel):.4e}")
    if cfg.vtk:
        export_fields(
            result.state.u,
            result.state.p,
            result.adjoint_vel,
            result.adjoint_press,
            mesh,
            cfg.vtk,
        )
        print(f"fields written to {cfg.vtk}")
    return EXIT_OK if result.converged else EXIT_RUNTIME


def _run_tables(cfg: RunConfig) -> int:
    ocp = OcpConfig(alpha=cfg.alpha, grad_tol=cfg.grad_tol, max_iter=cfg.max_opt)
    records = run_tables(
        [cfg.n], list(cfg.forms), list(cfg.robust), list(cfg.nu), ocp=ocp
    )
    if cfg.deterministic:
        records.sort(key=lambda r: (r.n, r.form, not r.robust, -r.nu))
    md = write_tables(records, cfg.csv, cfg.markdown)
    print(md, end="")
    if cfg.csv:
        print(f"records written to {cfg.csv}")
    ok = all(
        np.isfinite(r.err_state_h1) and r.newton_iters >= 0 for r in records
    )
    return EXIT_OK if ok else EXIT_RUNTIME


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:
        return int(exc.code or 0)

    runner = {
        "state": _run_state,
        "invariance": _run_invariance,
        "ocp": _run_ocp,
        "tables": _run_tables,
    }[cfg.mode]
    try:
        return runner(cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (NonlinearSolverError, LinearSolverError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
