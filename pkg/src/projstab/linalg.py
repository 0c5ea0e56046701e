"""Sparse storage checks, conjugate gradients and the Stokes Schur solver.

Matrices are ``scipy.sparse.csr_matrix`` instances with sorted, unique
column indices. Vectors are 1-D float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp


class SolverError(RuntimeError):
    """A linear solve did not reach its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverConfig:
    rel_tolerance: float = 1e-10
    max_iterations: int = 20000
    deflate_constants: bool = False
    jacobi: bool = False

    def __post_init__(self):
        if not 0 < self.rel_tolerance < 1:
            raise ValueError(f"rel_tolerance must lie in (0, 1), got {self.rel_tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass
class SolverStats:
    """Iteration counter shared by the solves of one simulation."""

    iterations: int = 0
    solves: int = 0
    history: list = field(default_factory=list)

    def record(self, iters):
        self.iterations += iters
        self.solves += 1


def to_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def check_csr(A: sp.csr_matrix, symmetric: bool = False) -> None:
    """Raise ``ValueError`` unless ``A`` satisfies the CSR storage invariants."""
    ptr, idx = A.indptr, A.indices
    if np.any(np.diff(ptr) < 0) or ptr[-1] != A.nnz or ptr[0] != 0:
        raise ValueError("row pointer is not monotone or does not end at nnz")
    for r in range(A.shape[0]):
        cols = idx[ptr[r] : ptr[r + 1]]
        if np.any(np.diff(cols) <= 0):
            raise ValueError(f"row {r}: column indices not sorted and unique")
    if symmetric:
        scale = abs(A).max() if A.nnz else 0.0
        if A.shape[0] != A.shape[1] or (A.nnz and abs(A - A.T).max() > 1e-13 * scale):
            raise ValueError("matrix flagged symmetric is not")


def _remove_mean(x, weights):
    if weights is None:
        return x - x.mean()
    return x - (weights @ x) / weights.sum()


def cg_solve(A, b, cfg: SolverConfig = SolverConfig(), x0=None, weights=None,
             stats: SolverStats | None = None, monitor=None) -> np.ndarray:
    """Conjugate gradients for symmetric positive (semi)definite ``A``.

    ``A`` may be a sparse matrix or any object with ``shape`` and ``@``.
    With ``cfg.deflate_constants`` the constant vector is projected out of
    the right-hand side and every iterate, and the result is shifted to
    zero mean with respect to ``weights`` (uniform if omitted).

    ``monitor(k, x)`` is called after every iteration when given.
    """
    n = A.shape[0]
    b = np.asarray(b, dtype=float)
    if A.shape[1] != n or b.shape != (n,):
        raise SolverError(f"dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    if n == 0:
        return np.zeros(0)
    deflate = cfg.deflate_constants
    if deflate:
        b = b - b.mean()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        if stats is not None:
            stats.record(0)
        return np.zeros(n)
    if not np.isfinite(bnorm):
        raise SolverError("non-finite right-hand side")

    if cfg.jacobi:
        diag = np.asarray(A.diagonal()).copy()
        diag[diag == 0] = 1.0
        inv_diag = 1.0 / diag
    else:
        inv_diag = None

    def precondition(r):
        z = r if inv_diag is None else inv_diag * r
        return z - z.mean() if deflate else z

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if deflate:
        x = x - x.mean()
    target = cfg.rel_tolerance * bnorm
    total = 0
    rel = np.inf
    # outer loop restarts from the true residual if recursive updates drift
    while total < cfg.max_iterations:
        r = b - A @ x
        if deflate:
            r = r - r.mean()
        rnorm = np.linalg.norm(r)
        rel = rnorm / bnorm
        if rnorm <= target:
            break
        z = precondition(r)
        d = z.copy()
        rz = r @ z
        while total < cfg.max_iterations:
            Ad = A @ d
            dAd = d @ Ad
            if not dAd > 0:
                raise SolverError("matrix is not positive definite on the search space",
                                  rel, total)
            alpha = rz / dAd
            x += alpha * d
            r -= alpha * Ad
            total += 1
            if monitor is not None:
                monitor(total, x)
            rnorm = np.linalg.norm(r)
            if rnorm <= 0.5 * target:
                break
            z = precondition(r)
            rz_new = r @ z
            d = z + (rz_new / rz) * d
            rz = rz_new
    else:
        r = b - A @ x
        if deflate:
            r = r - r.mean()
        rel = np.linalg.norm(r) / bnorm
        if rel > cfg.rel_tolerance:
            raise SolverError("conjugate gradients did not converge", rel, total)

    if stats is not None:
        stats.record(total)
    if deflate:
        x = _remove_mean(x, weights)
    return x


class _SchurOperator:
    """p -> D (nu A_v)^{-1} D^T p + delta L_p p, with inner CG solves."""

    def __init__(self, A_v, D, L_p, nu, delta, inner_cfg, stats):
        self.A_v, self.D, self.L_p = A_v, D, L_p
        self.nu, self.delta = nu, delta
        self.inner_cfg = inner_cfg
        self.stats = stats
        self.shape = L_p.shape

    def __matmul__(self, p):
        w = cg_solve(self.A_v, self.D.T @ p, self.inner_cfg, stats=self.stats) / self.nu
        return self.D @ w + self.delta * (self.L_p @ p)


def schur_stokes_solve(A_v, D, L_p, nu, delta, rhs_v, cfg: SolverConfig = SolverConfig(),
                       weights=None, stats: SolverStats | None = None):
    """Solve the pressure-stabilized Stokes system

        nu A_v u + G p = rhs_v,     D u + delta L_p p = 0,     G = -D^T,

    by CG on the Schur complement S = D (nu A_v)^{-1} D^T + delta L_p,
    which is SPD on mean-zero pressures. Returns ``(u, p)`` with ``p``
    of zero ``weights``-mean.
    """
    if not nu > 0:
        raise SolverError(f"viscosity must be positive, got {nu}")
    if not delta > 0:
        raise SolverError(f"stabilization parameter must be positive, got {delta}")
    rhs_v = np.asarray(rhs_v, dtype=float)
    n_p = L_p.shape[0]
    if not rhs_v.any():
        return np.zeros_like(rhs_v), np.zeros(n_p)

    inner_cfg = replace(cfg, rel_tolerance=max(cfg.rel_tolerance * 1e-2, 1e-14),
                        deflate_constants=False)
    outer_cfg = replace(cfg, deflate_constants=True)
    w0 = cg_solve(A_v, rhs_v, inner_cfg, stats=stats) / nu
    S = _SchurOperator(A_v, D, L_p, nu, delta, inner_cfg, stats)
    # with G = -D^T: S p = -D (nu A_v)^{-1} rhs_v
    p = cg_solve(S, -(D @ w0), outer_cfg, weights=weights, stats=stats)
    u = cg_solve(A_v, rhs_v + D.T @ p, inner_cfg, stats=stats) / nu
    return u, p


def dense_oracle_solve(A, b, pseudo_inverse: bool = False) -> np.ndarray:
    """Direct dense solve; the reference path for every oracle comparison.

    With ``pseudo_inverse`` the minimum-norm least-squares solution is
    returned, which for a constant nullspace has zero mean.
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    if A.shape[0] > 500:
        raise ValueError("dense oracle is limited to systems of dimension <= 500")
    if pseudo_inverse:
        return np.linalg.pinv(A, rcond=1e-12) @ b
    try:
        lu_x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular matrix; pass pseudo_inverse=True for a nullspace") from exc
    if np.linalg.cond(A) > 1e14:
        raise ValueError("matrix is numerically singular; pass pseudo_inverse=True")
    return lu_x
