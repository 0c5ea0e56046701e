"""Built-in invariant suite run by ``projstab check``.

Every check returns ``(name, passed, detail)``. The dense comparisons
assemble the coupled systems as one matrix with a Lagrange multiplier
for the pressure mean and solve them directly.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import assemble_convection, assemble_operators, load_vector
from .linalg import SolverConfig, cg_solve, dense_oracle_solve
from .mesh import build_structured_mesh, check_mesh, mesh_from_arrays
from .mms import finite_difference_discrepancy, nse_forcing, stokes_forcing, taylor_green_case
from .schemes import ProjectionScheme, SchemeConfig, StepState, solve_stabilized_stokes

REFERENCE_MASS = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
REFERENCE_STIFFNESS = np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]) / 2.0


def reference_triangle_mesh():
    return mesh_from_arrays([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]],
                            boundary_flag=[True, True, True])


def dense_stabilized_stokes(ops, nu, delta, rhs_v, velocity_block=None, coupled=True):
    """Direct solve of [[K, G], [D, delta L]] with the pressure mean pinned to zero.

    ``K`` defaults to ``nu A_v``. With ``coupled=False`` the G block is
    dropped, which is the one-step map of the segregated scheme.
    Returns ``(u, p)`` on the reduced velocity space.
    """
    K = nu * ops.A_v if velocity_block is None else velocity_block
    nu_, np_ = ops.n_velocity, ops.n_vertices
    m = ops.lumped_mass.reshape(-1, 1)
    big = sp.bmat([
        [K, ops.G if coupled else None, None],
        [ops.D, delta * ops.L_p, sp.csr_matrix(m)],
        [None, sp.csr_matrix(m.T), None],
    ]).toarray()
    rhs = np.concatenate([rhs_v, np.zeros(np_ + 1)])
    sol = dense_oracle_solve(big, rhs)
    return sol[:nu_], sol[nu_:nu_ + np_]


def _rel(a, b):
    scale = max(np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / scale)


def check_meshes():
    for n in (1, 2, 4, 8, 16):
        mesh = build_structured_mesh(n)
        try:
            check_mesh(mesh)
        except ValueError as exc:
            return "mesh invariants", False, f"n={n}: {exc}"
        if abs(mesh.h - math.sqrt(2) / n) > 1e-15:
            return "mesh invariants", False, f"n={n}: h={mesh.h}"
    return "mesh invariants", True, "n in {1,2,4,8,16}"


def check_reference_element():
    ops = assemble_operators(reference_triangle_mesh())
    em = np.abs(ops.M_s.toarray() - REFERENCE_MASS).max()
    ea = np.abs(ops.A_s.toarray() - REFERENCE_STIFFNESS).max()
    ok = em <= 1e-14 and ea <= 1e-14
    return "reference element matrices", ok, f"mass {em:.1e}, stiffness {ea:.1e}"


def check_operator_identities():
    worst = {"G+D^T": 0.0, "A1": 0.0, "sumM": 0.0}
    for n in (1, 2, 4, 8):
        ops = assemble_operators(build_structured_mesh(n))
        if ops.n_velocity:
            worst["G+D^T"] = max(worst["G+D^T"], abs(ops.G + ops.D.T).max())
        worst["A1"] = max(worst["A1"], np.abs(ops.A_s @ np.ones(ops.n_vertices)).max())
        worst["sumM"] = max(worst["sumM"], abs(ops.M_s.sum() - 1.0))
    ok = worst["G+D^T"] <= 1e-13 and worst["A1"] <= 1e-13 and worst["sumM"] <= 1e-12
    return "operator identities", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())


def check_skew_symmetry(n_pairs=20, seed=0):
    rng = np.random.default_rng(seed)
    worst_diag, worst_pair = 0.0, 0.0
    for n in (2, 8):
        mesh = build_structured_mesh(n)
        ops = assemble_operators(mesh)
        for _ in range(n_pairs):
            w = rng.standard_normal((mesh.n_vertices, 2))
            N = assemble_convection(mesh, w, ops)
            y = rng.standard_normal(ops.n_velocity)
            z = rng.standard_normal(ops.n_velocity)
            scale = np.linalg.norm(w) * np.linalg.norm(z) ** 2
            worst_diag = max(worst_diag, abs(z @ (N @ z)) / scale)
            pair_scale = np.linalg.norm(w) * np.linalg.norm(y) * np.linalg.norm(z)
            worst_pair = max(worst_pair, abs(y @ (N @ z) + z @ (N @ y)) / pair_scale)
    ok = worst_diag <= 1e-12 and worst_pair <= 1e-12
    return "convection skew-symmetry", ok, f"z'Nz {worst_diag:.1e}, y'Nz+z'Ny {worst_pair:.1e}"


def check_manufactured_solution(n_points=100, seed=0):
    case = taylor_green_case(1.0, "cosine")
    rng = np.random.default_rng(seed)
    x, y, t = rng.random(n_points), rng.random(n_points), 2.0 * rng.random(n_points)
    fd = finite_difference_discrepancy(case, x, y, t, step=1e-5)
    nu = 0.1
    g, f = stokes_forcing(case, nu), nse_forcing(case, nu)
    res_s = np.abs(case.u_t(x, y, t) - nu * case.lap_u(x, y, t) + case.grad_p(x, y, t) - g(x, y, t)).max()
    conv = np.einsum("...ij,...j->...i", case.grad_u(x, y, t), case.u(x, y, t))
    res_n = np.abs(case.u_t(x, y, t) - nu * case.lap_u(x, y, t) + conv + case.grad_p(x, y, t)
                   - f(x, y, t)).max()
    ok = max(fd.values()) <= 1e-6 and res_s <= 1e-12 and res_n <= 1e-12
    detail = ", ".join(f"{k} {v:.1e}" for k, v in fd.items())
    return "manufactured derivatives", ok, f"{detail}, residuals {res_s:.1e}/{res_n:.1e}"


def check_dense_oracles():
    mesh = build_structured_mesh(2)
    ops = assemble_operators(mesh)
    nu, delta = 1.0, 0.1

    def g(x, y, t):
        return np.stack([np.ones_like(x), np.zeros_like(x)], axis=-1)

    tight = SolverConfig(rel_tolerance=1e-12)
    s, z = solve_stabilized_stokes(mesh, ops, nu, delta, g, tight)
    rhs = fem.reduce_vector(ops, load_vector(mesh, g))
    u_ref, p_ref = dense_stabilized_stokes(ops, nu, delta, rhs)
    err_s = max(_rel(fem.reduce_vector(ops, s), u_ref), _rel(z, p_ref))

    cfg = SchemeConfig(nu=nu, dt=0.05, T=0.1, delta_mode="fixed", delta=delta, solver=tight)
    scheme = ProjectionScheme(mesh, cfg, ops)
    rng = np.random.default_rng(1)
    v0 = np.zeros((mesh.n_vertices, 2))
    v0[ops.interior] = rng.standard_normal((ops.interior.size, 2))
    q0 = scheme.zh_map(v0)
    new = scheme.step_transient_stokes(StepState(v0, q0), g)
    load = rhs + ops.M_v @ fem.reduce_vector(ops, v0) / scheme.dt - ops.G @ q0
    v_ref, q_ref = dense_stabilized_stokes(ops, nu, delta, load, velocity_block=scheme.momentum,
                                           coupled=False)
    err_t = max(_rel(fem.reduce_vector(ops, new.tilde_v), v_ref), _rel(new.q, q_ref))
    ok = err_s <= 1e-8 and err_t <= 1e-8
    return "dense oracle equivalence", ok, f"stabilized Stokes {err_s:.1e}, transient step {err_t:.1e}"


def check_cg_against_dense(seed=0):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((10, 10))
    A = B @ B.T + 10 * np.eye(10)
    b = rng.standard_normal(10)
    x = cg_solve(sp.csr_matrix(A), b, SolverConfig(rel_tolerance=1e-13))
    err = _rel(x, dense_oracle_solve(A, b))
    return "cg vs dense solve", err <= 1e-9, f"{err:.1e}"


CHECKS = (check_meshes, check_reference_element, check_operator_identities, check_skew_symmetry,
          check_manufactured_solution, check_dense_oracles, check_cg_against_dense)


def run_checks():
    return [fn() for fn in CHECKS]
