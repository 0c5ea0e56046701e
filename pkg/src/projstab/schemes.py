"""Projection time steppers for transient Stokes and Navier-Stokes.

The state carried between steps is the intermediate velocity and the
pressure. One step solves the momentum equation with the lagged
pressure gradient, then the pressure Poisson problem

    delta (grad q, grad psi) = -(div v, psi)      for all psi,

which is the same map as :meth:`ProjectionScheme.zh_map`. Choosing
``delta = dt`` gives the classical Chorin-Temam scheme.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import fem
from .fem import OperatorSet, assemble_operators
from .linalg import SolverConfig, SolverError, SolverStats, cg_solve, schur_stokes_solve
from .mesh import TriangleMesh
from .mms import ErrorReport, ManufacturedCase, StepRecord, nse_forcing, stokes_forcing

log = logging.getLogger(__name__)

DELTA_MODES = ("classic", "fixed", "auto")
PROBLEMS = ("stokes", "navier_stokes")
INIT_MODES = ("interpolant", "stokes_projection")
INIT_PRESSURE_MODES = ("zero", "from_divergence", "stokes_projection")
BLOWUP_FACTOR = 1e6
DOMAIN_DIAMETER = math.sqrt(2.0)


class ConfigError(ValueError):
    """A scheme configuration breaks a hard constraint."""


@dataclass(frozen=True)
class SchemeConfig:
    nu: float = 1.0
    dt: float = 0.01
    T: float = 1.0
    delta_mode: str = "auto"
    delta: float | None = None
    problem: str = "stokes"
    init_mode: str = "stokes_projection"
    init_pressure_mode: str = "stokes_projection"
    rho1: float = 1.0
    c_M: float = 1.0
    solver: SolverConfig = SolverConfig()
    override_stability_guard: bool = False

    def __post_init__(self):
        for name in ("nu", "dt", "T", "rho1", "c_M"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be a positive number, got {value!r}")
        checks = [("delta_mode", DELTA_MODES), ("problem", PROBLEMS),
                  ("init_mode", INIT_MODES), ("init_pressure_mode", INIT_PRESSURE_MODES)]
        for name, allowed in checks:
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.delta_mode == "fixed" and not (self.delta is not None and self.delta > 0):
            raise ConfigError(f"fixed delta mode needs a positive delta, got {self.delta!r}")
        if self.init_pressure_mode == "stokes_projection" and self.init_mode != "stokes_projection":
            raise ConfigError("stokes_projection initial pressure needs stokes_projection initial velocity")


def time_grid(T: float, dt: float) -> tuple[int, float]:
    """Number of steps N and the adjusted step T / N <= dt."""
    n_steps = max(1, math.ceil(T / dt - 1e-9))
    return n_steps, T / n_steps


def resolve_delta(cfg: SchemeConfig, h: float, dt: float | None = None) -> float:
    dt = time_grid(cfg.T, cfg.dt)[1] if dt is None else dt
    if cfg.delta_mode == "classic":
        return dt
    if cfg.delta_mode == "fixed":
        return float(cfg.delta)
    return max(dt, h**2 / (cfg.nu * cfg.rho1**2))


def check_scheme(cfg: SchemeConfig, h: float, dt: float, delta: float) -> list[str]:
    """Enforce the hard step constraints, return warnings for the soft ones."""
    if delta > cfg.T:
        raise ConfigError(f"delta = {delta:g} exceeds the final time T = {cfg.T:g} (delta <= T)")
    if dt > delta * (1 + 1e-12) and not cfg.override_stability_guard:
        raise ConfigError(
            f"time step {dt:g} exceeds delta = {delta:g}; the modified scheme needs dt <= delta "
            "(pass the stability override to run the instability experiment)")
    warnings = []
    if h**2 / (cfg.nu * cfg.rho1**2) > delta * (1 + 1e-12):
        warnings.append(f"delta = {delta:g} below h^2/(nu rho1^2) = {h**2 / (cfg.nu * cfg.rho1**2):g}")
    if cfg.nu * delta > cfg.c_M * DOMAIN_DIAMETER * h * (1 + 1e-12):
        warnings.append(f"nu*delta = {cfg.nu * delta:g} above c_M diam(Omega) h = "
                        f"{cfg.c_M * DOMAIN_DIAMETER * h:g}")
    for w in warnings:
        log.warning(w)
    return warnings


@dataclass(frozen=True)
class StepState:
    """Intermediate velocity (nv, 2) and zero-mean pressure (nv,) at t_n."""

    tilde_v: np.ndarray
    q: np.ndarray
    n: int = 0
    t: float = 0.0
    diverged: bool = False
    initial_norm: float | None = None


def solve_stabilized_stokes(mesh: TriangleMesh, ops: OperatorSet, nu: float, delta: float, g,
                            cfg: SolverConfig = SolverConfig(), t: float = 0.0,
                            stats: SolverStats | None = None):
    """Steady pressure-stabilized Stokes solve.

    ``g`` is a closed-form forcing ``g(x, y, t)``, a nodal load of shape
    (nv, 2) or a reduced load vector. Returns ``(s, z)`` with ``s`` of
    shape (nv, 2) and ``z`` of zero mean.
    """
    rhs = _as_reduced_load(mesh, ops, g, t)
    try:
        u, p = schur_stokes_solve(ops.A_v, ops.D, ops.L_p, nu, delta, rhs, cfg,
                                  weights=ops.lumped_mass, stats=stats)
    except SolverError as exc:
        raise SolverError(f"stabilized Stokes solve failed: {exc}", exc.residual, exc.iterations) from exc
    return fem.embed_vector(ops, u), p


def _as_reduced_load(mesh, ops, g, t):
    if g is None:
        return np.zeros(ops.n_velocity)
    if callable(g):
        return fem.reduce_vector(ops, fem.load_vector(mesh, g, t))
    g = np.asarray(g, dtype=float)
    if g.shape == (ops.n_vertices, 2):
        return fem.reduce_vector(ops, g)
    if g.shape == (ops.n_velocity,):
        return g
    raise ValueError(f"forcing has unexpected shape {g.shape}")


class ProjectionScheme:
    """Discretization context: mesh, operators, step sizes and solvers."""

    def __init__(self, mesh: TriangleMesh, cfg: SchemeConfig, ops: OperatorSet | None = None,
                 stats: SolverStats | None = None):
        self.mesh = mesh
        self.cfg = cfg
        self.ops = assemble_operators(mesh) if ops is None else ops
        self.n_steps, self.dt = time_grid(cfg.T, cfg.dt)
        self.delta = resolve_delta(cfg, mesh.h, self.dt)
        self.warnings = check_scheme(cfg, mesh.h, self.dt, self.delta)
        self.stats = SolverStats() if stats is None else stats
        self.momentum = (self.ops.M_v / self.dt + cfg.nu * self.ops.A_v).tocsr()
        self._pressure_cfg = replace(cfg.solver, deflate_constants=True)
        self._velocity_cfg = replace(cfg.solver, deflate_constants=False)

    # -- building blocks ---------------------------------------------------

    def zh_map(self, w, x0=None) -> np.ndarray:
        """Pressure q with delta (grad q, grad psi) = -(div w, psi), zero mean."""
        w = np.asarray(w, dtype=float)
        w_red = fem.reduce_vector(self.ops, w) if w.ndim == 2 else w
        rhs = -(self.ops.D @ w_red) / self.delta
        return cg_solve(self.ops.L_p, rhs, self._pressure_cfg, x0=x0,
                        weights=self.ops.lumped_mass, stats=self.stats)

    def velocity_norm(self, tilde_v) -> float:
        return fem.l2_norm(self.ops, tilde_v)

    def end_of_step_velocity_norm(self, state: StepState) -> tuple[float, float]:
        """L2 norm of v = tilde_v - delta grad q, and the residual of
        |v|^2 - (|tilde_v|^2 - delta^2 |grad q|^2)."""
        mesh = self.mesh
        grads = fem.p1_gradients(mesh)
        grad_q = np.einsum("ka,kad->kd", state.q[mesh.triangles], grads)
        bary, w = fem.QUAD_DEG2
        v_q = np.einsum("qa,kad->kqd", bary, state.tilde_v[mesh.triangles])
        v_q = v_q - self.delta * grad_q[:, None, :]
        norm_sq = float(np.sum(mesh.element_areas[:, None] * w[None, :] * (v_q**2).sum(axis=-1)))
        tilde_sq = self.velocity_norm(state.tilde_v) ** 2
        grad_sq = float(state.q @ (self.ops.L_p @ state.q))
        return math.sqrt(norm_sq), norm_sq - (tilde_sq - self.delta**2 * grad_sq)

    # -- steppers ------------------------------------------------------------

    def _advance(self, state: StepState, rhs_load: np.ndarray) -> StepState:
        ops = self.ops
        threshold_base = state.initial_norm
        if threshold_base is None:
            threshold_base = self.velocity_norm(state.tilde_v)
        v_old = fem.reduce_vector(ops, state.tilde_v)
        rhs = ops.M_v @ v_old / self.dt - ops.G @ state.q + rhs_load
        t_next = (state.n + 1) * self.dt
        try:
            v_new = cg_solve(self.momentum, rhs, self._velocity_cfg, x0=v_old, stats=self.stats)
            tilde_v = fem.embed_vector(ops, v_new)
            norm = self.velocity_norm(tilde_v)
            blown = not math.isfinite(norm) or norm > BLOWUP_FACTOR * (1.0 + threshold_base)
            q_new = state.q if blown else self.zh_map(v_new, x0=state.q)
        except SolverError:
            if np.all(np.isfinite(rhs)):
                raise
            tilde_v, q_new, blown = state.tilde_v, state.q, True
        return StepState(tilde_v, q_new, state.n + 1, t_next, diverged=blown,
                         initial_norm=threshold_base)

    def step_transient_stokes(self, state: StepState, g_next=None) -> StepState:
        """One step of the modified Euler non-incremental scheme.

        ``g_next`` is the forcing at t_{n+1}: a closed form, a load
        vector or ``None`` for zero.
        """
        load = _as_reduced_load(self.mesh, self.ops, g_next, (state.n + 1) * self.dt)
        return self._advance(state, load)

    def step_navier_stokes(self, state: StepState, f_next=None, convection=None) -> StepState:
        """Semi-implicit step: the convection load N(u_n) u_n is explicit.

        ``convection`` overrides the assembled matrix N(u_n).
        """
        load = _as_reduced_load(self.mesh, self.ops, f_next, (state.n + 1) * self.dt)
        N = fem.assemble_convection(self.mesh, state.tilde_v, self.ops) if convection is None else convection
        return self._advance(state, load - N @ fem.reduce_vector(self.ops, state.tilde_v))

    def step(self, state: StepState, forcing=None) -> StepState:
        if self.cfg.problem == "navier_stokes":
            return self.step_navier_stokes(state, forcing)
        return self.step_transient_stokes(state, forcing)

    # -- initial data --------------------------------------------------------

    def initialize_state(self, case: ManufacturedCase) -> StepState:
        cfg, mesh, ops = self.cfg, self.mesh, self.ops
        z = None
        if cfg.init_mode == "interpolant":
            v0 = fem.interpolate(mesh, case.u, 0.0)
            v0[mesh.boundary_flag] = 0.0
        else:
            g = stokes_forcing(case, cfg.nu)

            def g_hat(x, y, t):
                return g(x, y, t) - case.u_t(x, y, t)

            v0, z = solve_stabilized_stokes(mesh, ops, cfg.nu, self.delta, g_hat, cfg.solver,
                                            t=0.0, stats=self.stats)
        if cfg.init_pressure_mode == "zero":
            q0 = np.zeros(ops.n_vertices)
        elif cfg.init_pressure_mode == "from_divergence":
            q0 = self.zh_map(v0)
        else:
            q0 = z
        return StepState(v0, q0, 0, 0.0, initial_norm=self.velocity_norm(v0))

    def forcing(self, case: ManufacturedCase):
        if self.cfg.problem == "navier_stokes":
            return nse_forcing(case, self.cfg.nu)
        return stokes_forcing(case, self.cfg.nu)


def run_simulation(cfg: SchemeConfig, case: ManufacturedCase, mesh: TriangleMesh,
                   ops: OperatorSet | None = None) -> ErrorReport:
    """March from t = 0 to T and collect errors against the exact solution."""
    scheme = ProjectionScheme(mesh, cfg, ops)
    report = ErrorReport(nu=cfg.nu, delta=scheme.delta, dt=scheme.dt, warnings=list(scheme.warnings))
    forcing = scheme.forcing(case)
    state = scheme.initialize_state(case)
    for _ in range(scheme.n_steps):
        try:
            state = scheme.step(state, forcing)
        except SolverError as exc:
            raise SolverError(f"step {state.n + 1}: {exc}", exc.residual, exc.iterations) from exc
        if state.diverged:
            report.diverged = True
            report.diverged_step = state.n
            break
        report.add(step_errors(mesh, state, case))
    report.cg_iterations = scheme.stats.iterations
    return report


def step_errors(mesh: TriangleMesh, state: StepState, case: ManufacturedCase) -> StepRecord:
    l2_v, h1_v = fem.error_norms(mesh, state.tilde_v, case.u, case.grad_u, state.t)
    l2_p, h1_p = fem.error_norms(mesh, state.q, case.p, case.grad_p, state.t)
    return StepRecord(state.t, l2_v, h1_v, l2_p, h1_p)


@dataclass
class DecayHistory:
    """Norm histories of a zero-forcing run; index 0 is the initial state."""

    tilde_norms: list
    end_norms: list
    identity_residuals: list
    diverged: bool
    diverged_step: int | None
    steps_run: int


def random_initial_state(scheme: ProjectionScheme, seed: int = 0) -> StepState:
    """Random interior nodal velocity with the matching divergence pressure."""
    rng = np.random.default_rng(seed)
    v = np.zeros((scheme.mesh.n_vertices, 2))
    v[scheme.ops.interior] = rng.uniform(-1.0, 1.0, (scheme.ops.interior.size, 2))
    q = scheme.zh_map(v)
    return StepState(v, q, 0, 0.0, initial_norm=scheme.velocity_norm(v))


def run_decay(scheme: ProjectionScheme, state: StepState, n_steps: int) -> DecayHistory:
    """Unforced transient Stokes steps, recording velocity norms each step."""
    end0, res0 = scheme.end_of_step_velocity_norm(state)
    hist = DecayHistory([scheme.velocity_norm(state.tilde_v)], [end0], [res0], False, None, 0)
    for _ in range(n_steps):
        state = scheme.step_transient_stokes(state, None)
        hist.steps_run += 1
        if state.diverged:
            hist.diverged, hist.diverged_step = True, state.n
            break
        end, res = scheme.end_of_step_velocity_norm(state)
        hist.tilde_norms.append(scheme.velocity_norm(state.tilde_v))
        hist.end_norms.append(end)
        hist.identity_residuals.append(res)
    return hist
