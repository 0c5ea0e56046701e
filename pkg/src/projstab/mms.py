"""Manufactured solutions, forcing synthesis and error aggregates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PI = np.pi


@dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form velocity/pressure pair and its derivatives.

    All callables take ``(x, y, t)``; see :mod:`projstab.fem` for the
    shape conventions.
    """

    name: str
    u: Callable
    p: Callable
    u_t: Callable
    grad_u: Callable
    lap_u: Callable
    grad_p: Callable

    def convection(self, x, y, t):
        """(u . grad) u."""
        return np.einsum("...ij,...j->...i", self.grad_u(x, y, t), self.u(x, y, t))

    def divergence(self, x, y, t):
        g = self.grad_u(x, y, t)
        return g[..., 0, 0] + g[..., 1, 1]


def _profile(kind):
    if kind == "cosine":
        return np.cos, lambda t: -np.sin(t)
    if kind == "linear_growth":
        return (lambda t: 1.0 + t), (lambda t: np.ones_like(np.asarray(t, dtype=float)))
    if kind == "steady":
        return (lambda t: np.ones_like(np.asarray(t, dtype=float))), \
               (lambda t: np.zeros_like(np.asarray(t, dtype=float)))
    raise ValueError(f"unknown time profile {kind!r}")


def taylor_green_case(amplitude: float = 1.0, time_profile: str = "cosine") -> ManufacturedCase:
    """Velocity = curl of sin^2(pi x) sin^2(pi y), pressure sin(2 pi x) sin(2 pi y).

    Both are multiplied by ``amplitude * g(t)`` with g = cos(t) for
    ``"cosine"``, 1 + t for ``"linear_growth"`` and 1 for ``"steady"``.
    """
    if amplitude == 0:
        raise ValueError("amplitude must be nonzero; use zero_case() for the trivial solution")
    a = float(amplitude)
    g0, dg0 = _profile(time_profile)

    # time factors broadcast against trailing vector/matrix axes
    def g(t, k=0):
        return np.reshape(a * g0(t), np.shape(t) + (1,) * k)

    def dg(t, k=0):
        return np.reshape(a * dg0(t), np.shape(t) + (1,) * k)

    def shape_u(x, y):
        return np.stack([PI * np.sin(PI * x) ** 2 * np.sin(2 * PI * y),
                         -PI * np.sin(2 * PI * x) * np.sin(PI * y) ** 2], axis=-1)

    def u(x, y, t):
        return g(t, 1) * shape_u(x, y)

    def u_t(x, y, t):
        return dg(t, 1) * shape_u(x, y)

    def grad_u(x, y, t):
        s2x, s2y = np.sin(2 * PI * x), np.sin(2 * PI * y)
        out = np.empty(np.shape(x) + (2, 2))
        out[..., 0, 0] = PI**2 * s2x * s2y
        out[..., 0, 1] = 2 * PI**2 * np.sin(PI * x) ** 2 * np.cos(2 * PI * y)
        out[..., 1, 0] = -2 * PI**2 * np.cos(2 * PI * x) * np.sin(PI * y) ** 2
        out[..., 1, 1] = -PI**2 * s2x * s2y
        return g(t, 2) * out

    def lap_u(x, y, t):
        return g(t, 1) * np.stack([
            2 * PI**3 * np.sin(2 * PI * y) * (2 * np.cos(2 * PI * x) - 1),
            -2 * PI**3 * np.sin(2 * PI * x) * (2 * np.cos(2 * PI * y) - 1),
        ], axis=-1)

    def p(x, y, t):
        return g(t) * np.sin(2 * PI * x) * np.sin(2 * PI * y)

    def grad_p(x, y, t):
        return g(t, 1) * 2 * PI * np.stack([np.cos(2 * PI * x) * np.sin(2 * PI * y),
                                             np.sin(2 * PI * x) * np.cos(2 * PI * y)], axis=-1)

    return ManufacturedCase(f"taylor_green[{a:g},{time_profile}]", u, p, u_t, grad_u, lap_u, grad_p)


def zero_case() -> ManufacturedCase:
    def vec(x, y, t):
        return np.zeros(np.shape(x) + (2,))

    def scal(x, y, t):
        return np.zeros(np.shape(x))

    def mat(x, y, t):
        return np.zeros(np.shape(x) + (2, 2))

    return ManufacturedCase("zero", vec, scal, vec, mat, vec, vec)


def make_case(name: str, amplitude: float = 1.0, time_profile: str = "cosine") -> ManufacturedCase:
    if name == "zero":
        return zero_case()
    if name == "taylor_green":
        return taylor_green_case(amplitude, time_profile)
    raise ValueError(f"unknown manufactured case {name!r}")


def stokes_forcing(case: ManufacturedCase, nu: float):
    """g = u_t - nu lap u + grad p."""
    def g(x, y, t):
        return case.u_t(x, y, t) - nu * case.lap_u(x, y, t) + case.grad_p(x, y, t)
    return g


def nse_forcing(case: ManufacturedCase, nu: float):
    """f = u_t - nu lap u + (u . grad) u + grad p."""
    def f(x, y, t):
        return (case.u_t(x, y, t) - nu * case.lap_u(x, y, t)
                + case.convection(x, y, t) + case.grad_p(x, y, t))
    return f


def verify_case(case: ManufacturedCase, seed: int = 0, n_samples: int = 1000) -> None:
    """Check divergence, boundary values and pressure mean; raise ``ValueError`` on failure."""
    rng = np.random.default_rng(seed)
    x, y, t = rng.random(n_samples), rng.random(n_samples), 2.0 * rng.random(n_samples)
    div = np.abs(case.divergence(x, y, t)).max()
    if div > 1e-12:
        raise ValueError(f"{case.name}: divergence {div:.2e} exceeds 1e-12")

    s = rng.random(n_samples)
    zero, one = np.zeros_like(s), np.ones_like(s)
    edges = [(s, zero), (s, one), (zero, s), (one, s)]
    wall = max(np.abs(case.u(ex, ey, t)).max() for ex, ey in edges)
    if wall > 1e-12:
        raise ValueError(f"{case.name}: boundary velocity {wall:.2e} exceeds 1e-12")

    # tensor Gauss-Legendre, 20 points per direction, exact for these trigonometric pressures
    gx, gw = np.polynomial.legendre.leggauss(20)
    gx, gw = 0.5 * (gx + 1), 0.5 * gw
    X, Y = np.meshgrid(gx, gx, indexing="ij")
    W = np.outer(gw, gw)
    for tt in (0.0, 0.5, 1.0):
        mean = float(np.sum(W * case.p(X, Y, tt)))
        if abs(mean) > 1e-10:
            raise ValueError(f"{case.name}: pressure mean {mean:.2e} at t={tt} exceeds 1e-10")


def finite_difference_discrepancy(case: ManufacturedCase, x, y, t, step: float = 1e-5) -> dict:
    """Largest gap between hand-derived derivatives and central differences.

    The Laplacian is differenced from the hand-derived gradient so the
    comparison stays clear of second-difference round-off.
    """
    hs = step
    out = {}

    fd_grad_u = np.stack([(case.u(x + hs, y, t) - case.u(x - hs, y, t)) / (2 * hs),
                          (case.u(x, y + hs, t) - case.u(x, y - hs, t)) / (2 * hs)], axis=-1)
    out["grad_u"] = float(np.abs(fd_grad_u - case.grad_u(x, y, t)).max())

    fd_lap = ((case.grad_u(x + hs, y, t)[..., :, 0] - case.grad_u(x - hs, y, t)[..., :, 0])
              + (case.grad_u(x, y + hs, t)[..., :, 1] - case.grad_u(x, y - hs, t)[..., :, 1])) / (2 * hs)
    out["lap_u"] = float(np.abs(fd_lap - case.lap_u(x, y, t)).max())

    fd_ut = (case.u(x, y, t + hs) - case.u(x, y, t - hs)) / (2 * hs)
    out["u_t"] = float(np.abs(fd_ut - case.u_t(x, y, t)).max())

    fd_gp = np.stack([(case.p(x + hs, y, t) - case.p(x - hs, y, t)) / (2 * hs),
                      (case.p(x, y + hs, t) - case.p(x, y - hs, t)) / (2 * hs)], axis=-1)
    out["grad_p"] = float(np.abs(fd_gp - case.grad_p(x, y, t)).max())
    return out


def estimate_rate(samples) -> float:
    """Least-squares slope of log(error) against log(parameter)."""
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("need at least two samples to estimate a rate")
    par = np.array([s[0] for s in samples], dtype=float)
    err = np.array([s[1] for s in samples], dtype=float)
    if np.any(par <= 0) or np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise ValueError("rate estimation needs positive, finite parameters and errors")
    lp, le = np.log(par), np.log(err)
    lp0 = lp - lp.mean()
    return float(lp0 @ (le - le.mean()) / (lp0 @ lp0))


@dataclass
class StepRecord:
    t: float
    l2_velocity_error: float
    h1_velocity_error: float
    l2_pressure_error: float
    h1_pressure_error: float


@dataclass
class ErrorReport:
    """Per-step errors and the time-weighted aggregates.

    ``A_L2 = max t_n |e_n|^2``;
    ``A_H1 = dt sum (nu |grad e_j|^2 + delta |grad r_j|^2)``;
    ``A_H1w`` is ``A_H1`` with weights ``t_j``;
    ``A_P = dt sum t_j |r_j|^2``; e velocity error, r pressure error.
    """

    nu: float
    delta: float
    dt: float
    records: list = field(default_factory=list)
    A_L2: float = 0.0
    A_H1: float = 0.0
    A_H1w: float = 0.0
    A_P: float = 0.0
    diverged: bool = False
    diverged_step: int | None = None
    cg_iterations: int = 0
    warnings: list = field(default_factory=list)

    def add(self, rec: StepRecord) -> None:
        self.records.append(rec)
        energy = self.nu * rec.h1_velocity_error**2 + self.delta * rec.h1_pressure_error**2
        self.A_L2 = max(self.A_L2, rec.t * rec.l2_velocity_error**2)
        self.A_H1 += self.dt * energy
        self.A_H1w += self.dt * rec.t * energy
        self.A_P += self.dt * rec.t * rec.l2_pressure_error**2

    def recomputed(self) -> dict:
        """Aggregates evaluated afresh from the per-step list."""
        t = np.array([r.t for r in self.records])
        e0 = np.array([r.l2_velocity_error for r in self.records])
        e1 = np.array([r.h1_velocity_error for r in self.records])
        p0 = np.array([r.l2_pressure_error for r in self.records])
        p1 = np.array([r.h1_pressure_error for r in self.records])
        energy = self.nu * e1**2 + self.delta * p1**2
        return {
            "A_L2": float(np.max(t * e0**2)) if t.size else 0.0,
            "A_H1": float(self.dt * np.sum(energy)),
            "A_H1w": float(self.dt * np.sum(t * energy)),
            "A_P": float(self.dt * np.sum(t * p0**2)),
        }

    @property
    def final(self) -> StepRecord | None:
        return self.records[-1] if self.records else None
