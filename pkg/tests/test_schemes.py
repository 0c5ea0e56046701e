from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg as sla

from projstab import fem
from projstab.fem import assemble_operators, load_vector
from projstab.linalg import SolverConfig
from projstab.mesh import build_structured_mesh
from projstab.mms import estimate_rate, stokes_forcing, taylor_green_case, zero_case
from projstab.schemes import (
    ConfigError, ProjectionScheme, SchemeConfig, StepState, check_scheme, random_initial_state,
    resolve_delta, run_decay, run_simulation, solve_stabilized_stokes, step_errors, time_grid,
)

TIGHT = SolverConfig(rel_tolerance=1e-12)


def scheme_for(n, **kw):
    mesh = build_structured_mesh(n)
    defaults = dict(nu=1.0, dt=mesh.h**2, T=1.0, delta_mode="auto", solver=TIGHT)
    defaults.update(kw)
    return ProjectionScheme(mesh, SchemeConfig(**defaults))


def random_state(scheme, seed=0):
    return random_initial_state(scheme, seed)


# -- configuration -----------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    {"nu": 0.0}, {"dt": -1.0}, {"T": float("nan")}, {"delta_mode": "weird"},
    {"problem": "euler"}, {"delta_mode": "fixed"}, {"delta_mode": "fixed", "delta": -0.1},
    {"init_mode": "interpolant", "init_pressure_mode": "stokes_projection"},
])
def test_config_rejections(kwargs):
    with pytest.raises(ConfigError):
        SchemeConfig(**kwargs)


def test_time_grid_adjusts_step():
    assert time_grid(1.0, 0.1) == (10, pytest.approx(0.1))
    n, dt = time_grid(1.0, 0.3)
    assert n == 4 and dt == 0.25


def test_delta_modes():
    h = 0.1
    assert resolve_delta(SchemeConfig(delta_mode="classic", dt=0.02, T=1.0), h) == 0.02
    assert resolve_delta(SchemeConfig(delta_mode="fixed", delta=0.3), h) == 0.3
    assert resolve_delta(SchemeConfig(delta_mode="auto", dt=0.001, nu=0.5), h) == pytest.approx(0.02)
    assert resolve_delta(SchemeConfig(delta_mode="auto", dt=0.05, nu=0.5), h) == pytest.approx(0.05)


def test_hard_and_soft_step_checks():
    cfg = SchemeConfig(nu=1.0, dt=0.02, T=1.0, delta_mode="fixed", delta=0.01)
    with pytest.raises(ConfigError, match="dt <= delta"):
        check_scheme(cfg, 0.1, 0.02, 0.01)
    assert check_scheme(replace(cfg, override_stability_guard=True), 0.1, 0.02, 0.01) == []
    with pytest.raises(ConfigError, match="delta <= T"):
        check_scheme(replace(cfg, T=0.005), 0.1, 0.001, 0.01)
    warns = check_scheme(replace(cfg, dt=0.001, delta=0.5, T=1.0), 0.1, 0.001, 0.5)
    assert any("c_M" in w for w in warns)
    warns = check_scheme(replace(cfg, dt=0.001), 0.2, 0.001, 0.01)
    assert any("h^2" in w for w in warns)
    assert check_scheme(replace(cfg, dt=0.001), 0.1, 0.001, 0.01) == []


# -- stabilized Stokes ------------------------------------------------------------

def test_stabilized_stokes_zero_forcing():
    mesh = build_structured_mesh(4)
    s, z = solve_stabilized_stokes(mesh, assemble_operators(mesh), 1.0, 0.1, None)
    assert not s.any() and not z.any()


def test_stabilized_stokes_energy_identity():
    mesh = build_structured_mesh(8)
    ops = assemble_operators(mesh)
    g = stokes_forcing(taylor_green_case(), 1.0)
    nu, delta = 1.0, 0.02
    s, z = solve_stabilized_stokes(mesh, ops, nu, delta, g, TIGHT)
    sr = fem.reduce_vector(ops, s)
    lhs = nu * sr @ (ops.A_v @ sr) + delta * z @ (ops.L_p @ z)
    rhs = fem.reduce_vector(ops, load_vector(mesh, g)) @ sr
    assert lhs == pytest.approx(rhs, rel=1e-8)
    assert abs(ops.lumped_mass @ z) <= 1e-10 * np.linalg.norm(z)
    assert not s[mesh.boundary_flag].any()


def test_stabilized_stokes_accepts_nodal_and_reduced_loads():
    mesh = build_structured_mesh(6)
    ops = assemble_operators(mesh)
    g = stokes_forcing(taylor_green_case(), 1.0)
    nodal = load_vector(mesh, g)
    a = solve_stabilized_stokes(mesh, ops, 1.0, 0.05, nodal, TIGHT)
    b = solve_stabilized_stokes(mesh, ops, 1.0, 0.05, fem.reduce_vector(ops, nodal), TIGHT)
    np.testing.assert_array_equal(a[0], b[0])
    with pytest.raises(ValueError):
        solve_stabilized_stokes(mesh, ops, 1.0, 0.05, np.ones(3))


def test_steady_manufactured_order():
    case = taylor_green_case(1.0, "steady")
    nu = 1.0
    g = stokes_forcing(case, nu)
    samples = []
    for n in (8, 16, 32):
        mesh = build_structured_mesh(n)
        s, _ = solve_stabilized_stokes(mesh, assemble_operators(mesh), nu, mesh.h**2 / nu, g)
        samples.append((mesh.h, fem.error_norms(mesh, s, case.u, t=0.0)[0]))
    assert estimate_rate(samples) >= 1.7


# -- one step ------------------------------------------------------------------

def test_zero_state_is_fixed_point():
    sch = scheme_for(4)
    zero = StepState(np.zeros((sch.mesh.n_vertices, 2)), np.zeros(sch.mesh.n_vertices))
    out = sch.step_transient_stokes(zero, None)
    assert not out.tilde_v.any() and not out.q.any()
    out = sch.step_navier_stokes(zero, None)
    assert not out.tilde_v.any() and not out.q.any()


def test_one_step_matches_dense_map_on_n2():
    mesh = build_structured_mesh(2)
    ops = assemble_operators(mesh)
    nu, dt, delta = 0.7, 0.04, 0.1
    sch = ProjectionScheme(mesh, SchemeConfig(nu=nu, dt=dt, T=0.4, delta_mode="fixed", delta=delta,
                                              solver=TIGHT), ops)
    state = random_state(sch, 3)
    g = stokes_forcing(taylor_green_case(), nu)
    out = sch.step_transient_stokes(state, g)

    # both solves as one linear system, pressure mean pinned by a bordered row
    M, A, D, G, L = (x.toarray() for x in (ops.M_v, ops.A_v, ops.D, ops.G, ops.L_p))
    m = ops.lumped_mass
    nv, npr = M.shape[0], L.shape[0]
    K = np.zeros((nv + npr + 1, nv + npr + 1))
    K[:nv, :nv] = M / dt + nu * A
    K[nv:nv + npr, :nv] = D
    K[nv:nv + npr, nv:nv + npr] = delta * L
    K[nv:nv + npr, -1] = m
    K[-1, nv:nv + npr] = m
    v_old = fem.reduce_vector(ops, state.tilde_v)
    load = fem.reduce_vector(ops, load_vector(mesh, g, dt))
    rhs = np.concatenate([M @ v_old / dt - G @ state.q + load, np.zeros(npr + 1)])
    sol = sla.lu_solve(sla.lu_factor(K), rhs)
    v_ref, q_ref = sol[:nv], sol[nv:nv + npr]
    v_new = fem.reduce_vector(ops, out.tilde_v)
    assert np.linalg.norm(v_new - v_ref) <= 1e-8 * np.linalg.norm(v_ref)
    assert np.linalg.norm(out.q - q_ref) <= 1e-8 * np.linalg.norm(q_ref)


def test_segregated_step_satisfies_both_equations():
    sch = scheme_for(8, solver=SolverConfig())
    ops = sch.ops
    state = random_state(sch, 1)
    g = stokes_forcing(taylor_green_case(), 1.0)
    out = sch.step_transient_stokes(state, g)
    v0, v1 = fem.reduce_vector(ops, state.tilde_v), fem.reduce_vector(ops, out.tilde_v)
    load = fem.reduce_vector(ops, load_vector(sch.mesh, g, sch.dt))
    rhs1 = ops.M_v @ v0 / sch.dt - ops.G @ state.q + load
    r1 = sch.momentum @ v1 - rhs1
    rhs2 = -(ops.D @ v1)
    r2 = sch.delta * (ops.L_p @ out.q) - rhs2
    tol = sch.cfg.solver.rel_tolerance
    assert np.linalg.norm(r1) <= 10 * tol * np.linalg.norm(rhs1)
    r2 = r2 - r2.mean()
    assert np.linalg.norm(r2) <= 10 * tol * np.linalg.norm(rhs2 - rhs2.mean())


def test_pressure_has_zero_mean_and_velocity_zero_trace():
    sch = scheme_for(8)
    out = sch.step_transient_stokes(random_state(sch), stokes_forcing(taylor_green_case(), 1.0))
    assert abs(sch.ops.lumped_mass @ out.q) <= 1e-10 * np.linalg.norm(out.q)
    assert not out.tilde_v[sch.mesh.boundary_flag].any()


def test_navier_stokes_without_convection_is_stokes_step():
    sch = scheme_for(6, problem="navier_stokes")
    state = random_state(sch, 2)
    g = stokes_forcing(taylor_green_case(), 1.0)
    zero_N = 0 * fem.assemble_convection(sch.mesh, state.tilde_v, sch.ops)
    a = sch.step_navier_stokes(state, g, convection=zero_N)
    b = sch.step_transient_stokes(state, g)
    np.testing.assert_array_equal(a.tilde_v, b.tilde_v)
    np.testing.assert_array_equal(a.q, b.q)


def test_navier_stokes_uses_old_velocity_convection():
    sch = scheme_for(6, problem="navier_stokes")
    state = random_state(sch, 4)
    N = fem.assemble_convection(sch.mesh, state.tilde_v, sch.ops)
    a = sch.step_navier_stokes(state, None)
    b = sch.step_navier_stokes(state, None, convection=N)
    np.testing.assert_array_equal(a.tilde_v, b.tilde_v)


# -- end-of-step velocity ----------------------------------------------------------

def test_end_of_step_norm_without_pressure():
    sch = scheme_for(6)
    st = random_state(sch)
    st = StepState(st.tilde_v, np.zeros_like(st.q))
    norm, res = sch.end_of_step_velocity_norm(st)
    assert norm == pytest.approx(sch.velocity_norm(st.tilde_v), rel=1e-14)


def test_projection_identity_after_steps():
    sch = scheme_for(8)
    st = random_state(sch, 5)
    g = stokes_forcing(taylor_green_case(), 1.0)
    for _ in range(5):
        st = sch.step_transient_stokes(st, g)
        _, res = sch.end_of_step_velocity_norm(st)
        assert abs(res) <= 1e-8 * sch.velocity_norm(st.tilde_v) ** 2


def test_unforced_decay_is_monotone():
    sch = scheme_for(8, T=1.0)
    hist = run_decay(sch, random_state(sch, 7), 60)
    assert not hist.diverged
    e = hist.end_norms
    assert all(b <= a * (1 + 1e-10) for a, b in zip(e, e[1:]))
    assert all(abs(r) <= 1e-8 * t**2 for r, t in zip(hist.identity_residuals, hist.tilde_norms))


def test_instability_threshold():
    # delta below h^2/nu weakens the viscous damping of the pressure boundary modes
    mesh = build_structured_mesh(16)
    ops = assemble_operators(mesh)
    delta = 0.1 * mesh.h**2
    results = {}
    for ratio in (2.5, 0.9):
        dt = ratio * delta
        cfg = SchemeConfig(nu=1.0, dt=dt, T=200 * dt, delta_mode="fixed", delta=delta,
                           override_stability_guard=True)
        sch = ProjectionScheme(mesh, cfg, ops)
        state = random_state(sch, 0)
        hist = run_decay(sch, state, 200)
        results[ratio] = hist
    unstable, stable = results[2.5], results[0.9]
    assert unstable.diverged or max(unstable.tilde_norms) >= 1e3 * unstable.tilde_norms[0]
    assert not stable.diverged
    assert max(stable.tilde_norms) <= stable.tilde_norms[0] * (1 + 1e-6)


def test_blowup_is_flagged_not_raised():
    mesh = build_structured_mesh(8)
    delta = 0.1 * mesh.h**2
    cfg = SchemeConfig(nu=1.0, dt=3 * delta, T=2000 * delta * 3, delta_mode="fixed", delta=delta,
                       override_stability_guard=True)
    sch = ProjectionScheme(mesh, cfg)
    hist = run_decay(sch, random_state(sch), 2000)
    assert hist.diverged and hist.diverged_step is not None


# -- Z_h map -----------------------------------------------------------------------

def test_zh_zero_and_linearity():
    sch = scheme_for(6)
    assert not sch.zh_map(np.zeros((sch.mesh.n_vertices, 2))).any()
    w = random_state(sch, 8).tilde_v
    z1, z3 = sch.zh_map(w), sch.zh_map(3 * w)
    assert np.linalg.norm(z3 - 3 * z1) <= 1e-10 * np.linalg.norm(z3)


def test_zh_of_discretely_solenoidal_field_vanishes():
    sch = scheme_for(4)
    basis = sla.null_space(sch.ops.D.toarray())
    w = fem.embed_vector(sch.ops, basis @ np.random.default_rng(0).standard_normal(basis.shape[1]))
    assert np.linalg.norm(sch.zh_map(w)) <= 1e-10 * np.linalg.norm(w)


def test_zh_is_the_stepper_pressure_solve():
    sch = scheme_for(6)
    out = sch.step_transient_stokes(random_state(sch, 9), None)
    np.testing.assert_allclose(out.q, sch.zh_map(out.tilde_v), atol=1e-9 * np.linalg.norm(out.q))


# -- initial data -----------------------------------------------------------------

@pytest.mark.parametrize("init", [("interpolant", "zero"), ("interpolant", "from_divergence"),
                                  ("stokes_projection", "zero"), ("stokes_projection", "stokes_projection")])
def test_zero_initial_data(init):
    sch = scheme_for(4, init_mode=init[0], init_pressure_mode=init[1])
    st = sch.initialize_state(zero_case())
    assert not st.tilde_v.any() and not st.q.any()


def test_interpolant_reproduces_vertex_values():
    case = taylor_green_case()
    sch = scheme_for(8, init_mode="interpolant", init_pressure_mode="zero")
    st = sch.initialize_state(case)
    np.testing.assert_allclose(st.tilde_v, case.u(sch.mesh.vertices[:, 0], sch.mesh.vertices[:, 1], 0.0),
                               atol=1e-15)


def test_from_divergence_pressure():
    sch = scheme_for(8, init_mode="stokes_projection", init_pressure_mode="from_divergence")
    st = sch.initialize_state(taylor_green_case())
    np.testing.assert_allclose(st.q, sch.zh_map(st.tilde_v), atol=1e-12)


def test_stokes_projection_initial_velocity_order():
    case = taylor_green_case()
    samples = []
    for n in (8, 16, 32):
        sch = scheme_for(n)
        st = sch.initialize_state(case)
        samples.append((sch.mesh.h, fem.error_norms(sch.mesh, st.tilde_v, case.u, t=0.0)[0]))
    assert estimate_rate(samples) >= 1.7


# -- whole runs --------------------------------------------------------------------

def test_zero_solution_run():
    mesh = build_structured_mesh(6)
    rep = run_simulation(SchemeConfig(dt=0.02, T=0.1), zero_case(), mesh)
    assert len(rep.records) == 5
    assert max(rep.A_L2, rep.A_H1, rep.A_H1w, rep.A_P) <= 1e-10
    assert not rep.diverged


def test_single_step_run_equals_stepper():
    mesh = build_structured_mesh(6)
    case = taylor_green_case()
    cfg = SchemeConfig(dt=0.05, T=0.05, delta_mode="fixed", delta=0.05, solver=TIGHT)
    rep = run_simulation(cfg, case, mesh)
    sch = ProjectionScheme(mesh, cfg)
    st = sch.step(sch.initialize_state(case), sch.forcing(case))
    ref = step_errors(mesh, st, case)
    assert len(rep.records) == 1
    assert rep.final.l2_velocity_error == ref.l2_velocity_error
    assert rep.final.l2_pressure_error == ref.l2_pressure_error


def test_classic_equals_fixed_delta_dt():
    mesh = build_structured_mesh(6)
    case = taylor_green_case()
    a = run_simulation(SchemeConfig(dt=0.02, T=0.1, delta_mode="classic"), case, mesh)
    b = run_simulation(SchemeConfig(dt=0.02, T=0.1, delta_mode="fixed", delta=0.02), case, mesh)
    assert [vars(r) for r in a.records] == [vars(r) for r in b.records]


def test_run_records_one_entry_per_step_and_iterations():
    mesh = build_structured_mesh(8)
    rep = run_simulation(SchemeConfig(dt=0.01, T=0.1), taylor_green_case(), mesh)
    assert len(rep.records) == 10
    assert [r.t for r in rep.records] == pytest.approx([0.01 * k for k in range(1, 11)])
    assert rep.cg_iterations > 0
    assert math.isfinite(rep.A_P)
