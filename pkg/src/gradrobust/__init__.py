"""Pressure-robust mixed finite elements for stationary flow control.

Biquadratic velocity / discontinuous-linear pressure discretization of the
incompressible Navier-Stokes equations on uniform quadrilateral meshes,
with an H(div)-conforming reconstruction operator that makes the forcing
and convection terms insensitive to irrotational perturbations, plus an
adjoint-based optimal-control layer on top.
"""

from gradrobust.assembly import FormConfig, gauss_rule, make_context
from gradrobust.control import KktState, OcpConfig, solve_ocp
from gradrobust.mesh import Mesh, build_uniform_mesh, cell_geometry
from gradrobust.mms_bench import ExperimentRecord, run_tables
from gradrobust.nonlinear import StateSolution, solve_state
from gradrobust.spaces import build_dof_map

__all__ = [
    "ExperimentRecord",
    "FormConfig",
    "KktState",
    "Mesh",
    "OcpConfig",
    "StateSolution",
    "build_dof_map",
    "build_uniform_mesh",
    "cell_geometry",
    "gauss_rule",
    "make_context",
    "run_tables",
    "solve_ocp",
    "solve_state",
]
__version__ = "0.1.0"
