"""Structured triangulations of the unit square."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Conforming triangulation of [0, 1]^2.

    ``vertices`` is (nv, 2), ``triangles`` is (nt, 3) with counterclockwise
    vertex order. ``quasi_uniformity`` is the ratio max_K h / h_K.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_flag: np.ndarray
    h: float
    element_areas: np.ndarray
    n_interior: int
    quasi_uniformity: float

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.boundary_flag, self.element_areas):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def interior(self) -> np.ndarray:
        """Indices of interior vertices, ascending."""
        return np.flatnonzero(~self.boundary_flag)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant gradients of the barycentric functions, shape (nt, 3, 2)."""
        p = self.vertices[self.triangles]
        x, y = p[..., 0], p[..., 1]
        det = 2.0 * self.element_areas
        grads = np.empty((self.n_triangles, 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            grads[:, a, 0] = (y[:, b] - y[:, c]) / det
            grads[:, a, 1] = (x[:, c] - x[:, b]) / det
        grads.setflags(write=False)
        return grads


def _signed_areas(vertices, triangles):
    p0, p1, p2 = (vertices[triangles[:, k]] for k in range(3))
    e1 = p1 - p0
    e2 = p2 - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def element_diameters(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Longest edge length of every triangle."""
    p = vertices[triangles]
    edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    return np.linalg.norm(edges, axis=2).max(axis=1)


def build_structured_mesh(n: int) -> TriangleMesh:
    """Uniform n x n grid, every cell cut along its lower-left/upper-right diagonal."""
    if int(n) != n or n < 1:
        raise ValueError(f"mesh resolution must be a positive integer, got {n!r}")
    n = int(n)
    coords = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(coords, coords, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    # vertex (i, j) -> j*(n+1) + i, i along x
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    mesh = mesh_from_arrays(vertices, triangles)
    # the cell diagonal is sqrt(2)/n; take it exactly rather than from rounded coordinates
    return replace(mesh, h=math.sqrt(2.0) / n)


def mesh_from_arrays(vertices, triangles, boundary_flag=None) -> TriangleMesh:
    """Wrap explicit arrays; boundary defaults to vertices on the unit-square edges."""
    vertices = np.array(vertices, dtype=float)
    triangles = np.array(triangles, dtype=np.int64)
    if boundary_flag is None:
        tol = 1e-14
        boundary_flag = ((vertices < tol) | (vertices > 1 - tol)).any(axis=1)
    boundary_flag = np.array(boundary_flag, dtype=bool)
    diam = element_diameters(vertices, triangles)
    h = float(diam.max())
    return TriangleMesh(vertices=vertices, triangles=triangles, boundary_flag=boundary_flag, h=h,
                        element_areas=_signed_areas(vertices, triangles),
                        n_interior=int((~boundary_flag).sum()),
                        quasi_uniformity=float(h / diam.min()))


def mesh_diameter(mesh: TriangleMesh) -> float:
    return float(element_diameters(mesh.vertices, mesh.triangles).max())


def _edge_counts(triangles):
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    return np.unique(edges, axis=0, return_counts=True)


def check_mesh(mesh: TriangleMesh) -> None:
    """Raise ``ValueError`` if any triangulation invariant is violated."""
    areas = _signed_areas(mesh.vertices, mesh.triangles)
    if np.any(areas <= 0):
        raise ValueError("mesh has degenerate or clockwise triangles")
    if not np.allclose(areas, mesh.element_areas, rtol=0, atol=1e-15):
        raise ValueError("stored element areas are stale")
    if abs(areas.sum() - 1.0) > 1e-12:
        raise ValueError(f"element areas sum to {areas.sum()!r}, expected 1")

    edges, counts = _edge_counts(mesh.triangles)
    if np.any(counts > 2):
        raise ValueError("non-conforming mesh: edge shared by more than two triangles")
    outer = edges[counts == 1]
    if not np.all(mesh.boundary_flag[outer]):
        raise ValueError("edge with a single triangle has an interior endpoint")
    mid = mesh.vertices[outer].mean(axis=1)
    on_boundary = np.isclose(mid, 0.0, atol=1e-14) | np.isclose(mid, 1.0, atol=1e-14)
    if not np.all(on_boundary.any(axis=1)):
        raise ValueError("edge with a single triangle does not lie on the boundary")

    diam = element_diameters(mesh.vertices, mesh.triangles)
    if abs(diam.max() - mesh.h) > 1e-15:
        raise ValueError("stored mesh size does not match the element diameters")
    if mesh.h / diam.min() > mesh.quasi_uniformity * (1 + 1e-14):
        raise ValueError("quasi-uniformity bound violated")


def dump_mesh(mesh: TriangleMesh, path) -> None:
    """Write ``v x y flag`` lines for vertices, then ``t i j k`` lines for triangles."""
    lines = [f"v {x!r} {y!r} {int(b)}" for (x, y), b in zip(mesh.vertices.tolist(), mesh.boundary_flag)]
    lines += [f"t {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")
