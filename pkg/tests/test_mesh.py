from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from projstab.mesh import (
    build_structured_mesh, check_mesh, dump_mesh, mesh_diameter, mesh_from_arrays,
)


def brute_force_diameter(vertices, triangles):
    best = 0.0
    for tri in triangles:
        for a, b in itertools.combinations(tri, 2):
            best = max(best, math.dist(vertices[a], vertices[b]))
    return best


def test_n1_single_cell():
    mesh = build_structured_mesh(1)
    assert mesh.n_vertices == 4
    assert mesh.n_triangles == 2
    assert mesh.h == pytest.approx(math.sqrt(2), abs=1e-15)
    assert mesh.boundary_flag.all()
    assert mesh.element_areas.sum() == pytest.approx(1.0, abs=1e-15)
    assert mesh.n_interior == 0


def test_n2_has_one_interior_vertex_at_center():
    mesh = build_structured_mesh(2)
    assert (mesh.n_vertices, mesh.n_triangles, mesh.n_interior) == (9, 8, 1)
    np.testing.assert_array_equal(mesh.vertices[mesh.interior], [[0.5, 0.5]])


def test_n8_counts_and_uniformity():
    mesh = build_structured_mesh(8)
    assert (mesh.n_vertices, mesh.n_triangles) == (81, 128)
    # direct scan of element diameters
    diam = [brute_force_diameter(mesh.vertices, [t]) for t in mesh.triangles]
    assert max(diam) / min(diam) == pytest.approx(1.0, abs=1e-15)
    assert mesh.quasi_uniformity == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("n", [0, -3, 2.5])
def test_rejects_bad_resolution(n):
    with pytest.raises(ValueError):
        build_structured_mesh(n)


def test_diameter_examples():
    assert mesh_diameter(build_structured_mesh(1)) == pytest.approx(math.sqrt(2), abs=1e-15)
    assert mesh_diameter(build_structured_mesh(4)) == pytest.approx(math.sqrt(2) / 4, abs=1e-15)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 24))
def test_structured_invariants_hold(n):
    mesh = build_structured_mesh(n)
    check_mesh(mesh)
    assert mesh.h == pytest.approx(math.sqrt(2) / n, rel=1e-15)
    assert mesh.element_areas.min() > 0
    assert abs(mesh.element_areas.sum() - 1.0) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 12))
def test_refinement_halves_h(n):
    assert build_structured_mesh(2 * n).h == build_structured_mesh(n).h / 2


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_diameter_matches_brute_force_on_perturbed_mesh(seed):
    rng = np.random.default_rng(seed)
    base = build_structured_mesh(4)
    v = base.vertices.copy()
    inner = ~base.boundary_flag
    v[inner] += rng.uniform(-0.05, 0.05, (inner.sum(), 2))
    mesh = mesh_from_arrays(v, base.triangles, base.boundary_flag)
    check_mesh(mesh)
    assert mesh_diameter(mesh) == pytest.approx(brute_force_diameter(v, base.triangles), rel=1e-15)


def test_diagonal_is_lower_left_to_upper_right():
    mesh = build_structured_mesh(1)
    # both triangles contain the diagonal (0,0)-(1,1)
    for tri in mesh.triangles:
        pts = {tuple(mesh.vertices[i]) for i in tri}
        assert (0.0, 0.0) in pts and (1.0, 1.0) in pts


def test_mesh_is_immutable():
    mesh = build_structured_mesh(2)
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 3.0
    with pytest.raises(AttributeError):
        mesh.h = 1.0


def test_check_mesh_detects_clockwise_triangle():
    mesh = build_structured_mesh(2)
    tris = mesh.triangles.copy()
    tris[0] = tris[0][::-1]
    bad = mesh_from_arrays(mesh.vertices, tris, mesh.boundary_flag)
    with pytest.raises(ValueError, match="clockwise"):
        check_mesh(bad)


def test_check_mesh_detects_interior_flagged_boundary():
    mesh = build_structured_mesh(2)
    flags = mesh.boundary_flag.copy()
    flags[0] = False
    with pytest.raises(ValueError):
        check_mesh(mesh_from_arrays(mesh.vertices, mesh.triangles, flags))


def test_dump_format(tmp_path):
    mesh = build_structured_mesh(2)
    path = tmp_path / "m.txt"
    dump_mesh(mesh, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 9 + 8
    v = [ln.split() for ln in lines if ln.startswith("v ")]
    t = [ln.split() for ln in lines if ln.startswith("t ")]
    assert len(v) == 9 and len(t) == 8
    coords = np.array([[float(a), float(b)] for _, a, b, _ in v])
    np.testing.assert_array_equal(coords, mesh.vertices)
    assert [int(f) for *_, f in v] == mesh.boundary_flag.astype(int).tolist()
    np.testing.assert_array_equal(np.array([[int(x) for x in r[1:]] for r in t]), mesh.triangles)
