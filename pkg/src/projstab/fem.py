"""P1 finite element operators, load vectors and error norms.

Scalar fields are arrays of shape (nv,), vector fields arrays of shape
(nv, 2). Dirichlet-reduced velocity vectors stack the interior x
components before the interior y components, shape (2 * n_interior,).

Closed-form functions are called as ``f(x, y, t)`` on arrays and return
shape ``x.shape`` (scalar), ``x.shape + (2,)`` (vector or scalar
gradient) or ``x.shape + (2, 2)`` (vector gradient, ``[..., i, j] =
d u_i / d x_j``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import to_csr
from .mesh import TriangleMesh

# barycentric coordinates and weights (weights sum to one)
QUAD_DEG2 = (
    np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
    np.full(3, 1 / 3),
)

_a1, _w1 = 0.44594849091596488632, 0.22338158967801146570
_a2, _w2 = 0.09157621350977074346, 0.10995174365532186764
QUAD_DEG4 = (
    np.array([
        [1 - 2 * _a1, _a1, _a1], [_a1, 1 - 2 * _a1, _a1], [_a1, _a1, 1 - 2 * _a1],
        [1 - 2 * _a2, _a2, _a2], [_a2, 1 - 2 * _a2, _a2], [_a2, _a2, 1 - 2 * _a2],
    ]),
    np.array([_w1, _w1, _w1, _w2, _w2, _w2]),
)


@dataclass(frozen=True)
class OperatorSet:
    """Assembled P1 operators on one mesh.

    ``M_s``, ``A_s``: scalar mass and stiffness on all vertices.
    ``L_p``: pressure stiffness (same matrix as ``A_s``).
    ``D``: (nv, 2 ni), entries (div chi_j, psi_k).
    ``G``: (2 ni, nv), entries (grad psi_k, chi_j); equals ``-D.T``.
    ``M_v``, ``A_v``: Dirichlet-reduced vector mass and stiffness.
    ``lumped_mass``: integrals of the scalar basis functions.
    """

    M_s: sp.csr_matrix
    A_s: sp.csr_matrix
    L_p: sp.csr_matrix
    D: sp.csr_matrix
    G: sp.csr_matrix
    M_v: sp.csr_matrix
    A_v: sp.csr_matrix
    interior: np.ndarray
    lumped_mass: np.ndarray
    n_vertices: int

    @property
    def n_velocity(self) -> int:
        return 2 * self.interior.size


def p1_gradients(mesh: TriangleMesh) -> np.ndarray:
    """Constant gradients of the three barycentric functions, shape (nt, 3, 2)."""
    return mesh.gradients


_QUAD_CACHE: dict = {}


def quadrature_points(mesh: TriangleMesh, rule=QUAD_DEG4):
    """Physical points (nt, nq, 2) and weights (nt, nq) including the element area."""
    key = (id(mesh), id(rule))
    hit = _QUAD_CACHE.get(key)
    if hit is not None and hit[0] is mesh:
        return hit[1], hit[2]
    bary, w = rule
    corners = mesh.vertices[mesh.triangles]                       # (nt, 3, 2)
    pts = np.stack([corners[..., d] @ bary.T for d in range(2)], axis=-1)
    wts = mesh.element_areas[:, None] * w[None, :]
    _QUAD_CACHE[key] = (mesh, pts, wts)
    return pts, wts


def _scatter(mesh, local, n_rows=None, n_cols=None):
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n_rows or n, n_cols or n))
    return to_csr(A)


def element_mass(area: float) -> np.ndarray:
    return area / 12.0 * (np.ones((3, 3)) + np.eye(3))


def assemble_operators(mesh: TriangleMesh) -> OperatorSet:
    grads = p1_gradients(mesh)
    areas = mesh.element_areas
    nt, nv = mesh.n_triangles, mesh.n_vertices

    mass_local = areas[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))[None]
    stiff_local = areas[:, None, None] * np.einsum("kad,kbd->kab", grads, grads)
    M_s = _scatter(mesh, mass_local)
    A_s = _scatter(mesh, stiff_local)

    # mixed terms: integral of a basis function over K is |K| / 3
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()       # pressure index k (first local index)
    cols = np.tile(tri, (1, 3)).ravel()            # velocity vertex j
    D_blocks, G_blocks = [], []
    for c in range(2):
        # D[k, (c, j)] = int d_c phi_j psi_k
        d_local = (areas[:, None, None] / 3.0) * np.broadcast_to(grads[:, None, :, c], (nt, 3, 3))
        D_blocks.append(sp.coo_matrix((d_local.ravel(), (rows, cols)), shape=(nv, nv)))
        # G[(c, j), k] = int d_c psi_k phi_j ; first local index is the velocity vertex
        g_local = (areas[:, None, None] / 3.0) * np.broadcast_to(grads[:, None, :, c], (nt, 3, 3))
        G_blocks.append(sp.coo_matrix((g_local.ravel(), (rows, cols)), shape=(nv, nv)))
    interior = mesh.interior
    D_full = sp.hstack(D_blocks).tocsc()
    G_full = sp.vstack(G_blocks).tocsr()
    vel_index = np.concatenate([interior, interior + nv])
    D = to_csr(D_full[:, vel_index])
    G = to_csr(G_full[vel_index, :])

    M_i = M_s[interior][:, interior]
    A_i = A_s[interior][:, interior]
    M_v = to_csr(sp.block_diag([M_i, M_i]))
    A_v = to_csr(sp.block_diag([A_i, A_i]))
    lumped = np.asarray(M_s.sum(axis=1)).ravel()
    return OperatorSet(M_s=M_s, A_s=A_s, L_p=A_s, D=D, G=G, M_v=M_v, A_v=A_v,
                       interior=interior, lumped_mass=lumped, n_vertices=nv)


def reduce_vector(ops: OperatorSet, field: np.ndarray) -> np.ndarray:
    """Drop boundary dofs of a (nv, 2) vector field."""
    field = np.asarray(field, dtype=float)
    return np.concatenate([field[ops.interior, 0], field[ops.interior, 1]])


def embed_vector(ops: OperatorSet, reduced: np.ndarray) -> np.ndarray:
    """Inverse of :func:`reduce_vector`; boundary dofs are set to zero."""
    ni = ops.interior.size
    full = np.zeros((ops.n_vertices, 2))
    full[ops.interior, 0] = reduced[:ni]
    full[ops.interior, 1] = reduced[ni:]
    return full


def reduce_matrix(ops: OperatorSet, A_full: sp.spmatrix) -> sp.csr_matrix:
    """Restrict a (2 nv, 2 nv) vector operator, ordered x-block then y-block."""
    nv = ops.n_vertices
    idx = np.concatenate([ops.interior, ops.interior + nv])
    return to_csr(sp.csr_matrix(A_full)[idx][:, idx])


def convection_local(mesh: TriangleMesh, w: np.ndarray, rule=QUAD_DEG2) -> np.ndarray:
    """Element matrices (nt, 3, 3) of int (w . grad phi_j) phi_i + 1/2 (div w) phi_j phi_i."""
    grads = p1_gradients(mesh)
    bary, qw = rule
    w_el = np.asarray(w, dtype=float)[mesh.triangles]             # (nt, 3, 2)
    w_q = np.einsum("qa,kad->kqd", bary, w_el)                     # (nt, nq, 2)
    div_w = np.einsum("kad,kad->k", w_el, grads)                   # (nt,)
    adv = np.einsum("kqd,kbd->kqb", w_q, grads)                    # w . grad phi_b at q
    weights = mesh.element_areas[:, None] * qw[None, :]
    local = np.einsum("kq,qa,kqb->kab", weights, bary, adv)
    local += 0.5 * div_w[:, None, None] * np.einsum("kq,qa,qb->kab", weights, bary, bary)
    return local


def assemble_convection(mesh: TriangleMesh, w: np.ndarray, ops: OperatorSet | None = None,
                        reduced: bool = True) -> sp.csr_matrix:
    """Matrix of z -> (B(w, z), chi) with B(w, z) = w . grad z + 1/2 (div w) z.

    The two velocity components decouple, so the vector matrix is the
    scalar one replicated on the diagonal. With ``reduced`` (default)
    rows and columns are the interior velocity dofs.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (mesh.n_vertices, 2):
        raise ValueError(f"convecting field has shape {w.shape}, mesh has {mesh.n_vertices} vertices")
    C = _scatter(mesh, convection_local(mesh, w))
    if not reduced:
        return to_csr(sp.block_diag([C, C]))
    interior = mesh.interior if ops is None else ops.interior
    C_i = C[interior][:, interior]
    return to_csr(sp.block_diag([C_i, C_i]))


def interpolate(mesh: TriangleMesh, func, t: float = 0.0) -> np.ndarray:
    """Nodal interpolant of a closed-form function."""
    return np.asarray(func(mesh.vertices[:, 0], mesh.vertices[:, 1], t), dtype=float)


def load_vector(mesh: TriangleMesh, func, t: float = 0.0) -> np.ndarray:
    """(f, phi_i) for every vertex by the degree-4 rule; shape (nv,) or (nv, 2)."""
    bary, _ = QUAD_DEG4
    pts, wts = quadrature_points(mesh, QUAD_DEG4)
    vals = np.asarray(func(pts[..., 0], pts[..., 1], t), dtype=float)
    tri = mesh.triangles.ravel()
    if vals.ndim == 2:
        return np.bincount(tri, ((wts * vals) @ bary).ravel(), mesh.n_vertices)
    out = np.empty((mesh.n_vertices, vals.shape[-1]))
    for d in range(vals.shape[-1]):
        out[:, d] = np.bincount(tri, ((wts * vals[..., d]) @ bary).ravel(), mesh.n_vertices)
    return out


def _cell_gradient(el, grads):
    """Gradient of a P1 field on each triangle from its corner values."""
    return (el[:, :, None] * grads).sum(axis=1)


def error_norms(mesh: TriangleMesh, field: np.ndarray, exact, grad_exact=None,
                t: float = 0.0) -> tuple[float, float]:
    """L2 error and H1-seminorm error of a P1 field against closed forms.

    Uses the 6-point degree-4 rule on every triangle. Without
    ``grad_exact`` the seminorm is returned as ``nan``.
    """
    field = np.asarray(field, dtype=float)
    bary, _ = QUAD_DEG4
    pts, wts = quadrature_points(mesh, QUAD_DEG4)
    x, y = pts[..., 0], pts[..., 1]
    el = field[mesh.triangles]                          # (nt, 3) or (nt, 3, 2)
    if field.ndim == 1:
        fh = el @ bary.T
        sq = (fh - np.asarray(exact(x, y, t))) ** 2
    else:
        ex = np.asarray(exact(x, y, t))
        sq = sum((el[..., d] @ bary.T - ex[..., d]) ** 2 for d in range(field.shape[1]))
    l2 = float(np.sqrt(np.sum(wts * sq)))
    if grad_exact is None:
        return l2, float("nan")

    grads = p1_gradients(mesh)
    gex = np.asarray(grad_exact(x, y, t))
    if field.ndim == 1:
        gh = _cell_gradient(el, grads)                   # (nt, 2)
        gsq = ((gh[:, None, :] - gex) ** 2).sum(axis=-1)
    else:
        gsq = 0.0
        for i in range(field.shape[1]):
            gh = _cell_gradient(el[..., i], grads)       # row i of the Jacobian
            gsq = gsq + ((gh[:, None, :] - gex[..., i, :]) ** 2).sum(axis=-1)
    h1 = float(np.sqrt(np.sum(wts * gsq)))
    return l2, h1


def l2_norm(ops: OperatorSet, field: np.ndarray) -> float:
    """L2 norm of a P1 scalar or (nv, 2) vector field through the mass matrix."""
    field = np.asarray(field, dtype=float)
    if field.ndim == 1:
        return float(np.sqrt(max(field @ (ops.M_s @ field), 0.0)))
    return float(np.sqrt(max(sum(field[:, d] @ (ops.M_s @ field[:, d]) for d in range(2)), 0.0)))
