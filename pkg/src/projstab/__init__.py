"""Projection schemes with inherent pressure stabilization for P1/P1 flow."""

from .fem import OperatorSet, assemble_convection, assemble_operators, error_norms
from .linalg import SolverConfig, SolverError, cg_solve, dense_oracle_solve, schur_stokes_solve
from .mesh import TriangleMesh, build_structured_mesh, mesh_diameter
from .mms import ErrorReport, ManufacturedCase, estimate_rate, taylor_green_case, zero_case
from .schemes import ProjectionScheme, SchemeConfig, StepState, run_simulation, solve_stabilized_stokes

__version__ = "0.1.0"
