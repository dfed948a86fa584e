"""Mesh construction and exact load integration.

Load vectors are checked against two independent oracles: the partition of
unity (hat sums equal the total applied load exactly) and dense 1D
quadrature along load segments.
"""

import numpy as np
import pytest

from memopt.geometry import (
    LineLoad,
    Mesh,
    PointLoad,
    PressureLoad,
    build_mesh,
    locate_element,
    nodal_load_vector,
    restrict_to_right_triangle,
)


def hat_value(mesh, vid, x):
    """P1 hat of vertex vid evaluated at x (0 outside its support)."""
    e = locate_element(mesh, x)
    tri = mesh.elements[e]
    coords = mesh.vertices[tri]
    T = np.column_stack([coords[1] - coords[0], coords[2] - coords[0]])
    st = np.linalg.solve(T, np.asarray(x) - coords[0])
    lam = np.array([1 - st.sum(), st[0], st[1]])
    sel = tri == vid
    return float(lam[sel][0]) if sel.any() else 0.0


# --- mesh invariants ---------------------------------------------------------

@pytest.mark.parametrize("pattern", ["uniform-senw", "quadrant-symmetric"])
@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_mesh_counts_and_areas(pattern, n):
    a = 1.7
    mesh = build_mesh(a, n, pattern)
    assert mesh.vertices.shape == ((n + 1) ** 2, 2)
    assert mesh.elements.shape == (2 * n * n, 3)
    assert mesh.n_interior == (n - 1) ** 2
    np.testing.assert_allclose(mesh.areas, a * a / (2 * n * n), rtol=1e-14)
    # the two triangles of a cell sit next to each other
    assert np.all(mesh.cell_id[0::2] == mesh.cell_id[1::2])
    assert np.all(np.diff(mesh.cell_id[0::2]) == 1)


@pytest.mark.parametrize("pattern", ["uniform-senw", "quadrant-symmetric"])
def test_mesh_angles_at_least_45_degrees(pattern):
    mesh = build_mesh(1.0, 4, pattern)
    p = mesh.vertices[mesh.elements]
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", u, v) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles = np.degrees(np.arccos(np.clip(cosang, -1, 1)))
        assert np.all(angles >= 45.0 - 1e-9)


def _element_key_set(mesh, transform):
    keys = set()
    for tri in mesh.vertices[mesh.elements]:
        pts = np.array([transform(p) for p in tri])
        keys.add(frozenset((round(x, 9), round(y, 9)) for x, y in pts))
    return keys


@pytest.mark.parametrize("n", [4, 6])
def test_quadrant_symmetric_mirror_symmetry(n):
    # Full mirror symmetry needs even n; odd-n centerline cells straddle the
    # axis and keep the uniform cut by convention (checked separately below).
    a = 1.0
    mesh = build_mesh(a, n, "quadrant-symmetric")
    plain = _element_key_set(mesh, lambda p: p)
    assert plain == _element_key_set(mesh, lambda p: (a - p[0], p[1]))
    assert plain == _element_key_set(mesh, lambda p: (p[0], a - p[1]))


def test_quadrant_symmetric_odd_centerline_unflipped():
    mesh = build_mesh(1.0, 5, "quadrant-symmetric")
    mid = 2  # cell row/column straddling the centerline
    assert not mesh.flipped[mid, :].any()
    assert not mesh.flipped[:, mid].any()
    # corners of distinct quadrants disagree
    assert not mesh.flipped[0, 0] and mesh.flipped[0, 4]
    assert mesh.flipped[4, 0] and not mesh.flipped[4, 4]


def test_uniform_mesh_nesting():
    coarse = build_mesh(1.0, 3, "uniform-senw")
    fine = build_mesh(1.0, 6, "uniform-senw")
    fc = fine.centroids()
    for tri in coarse.vertices[coarse.elements]:
        T = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
        st = np.linalg.solve(T, (fc - tri[0]).T).T
        inside = (st[:, 0] > -1e-12) & (st[:, 1] > -1e-12) \
            & (st.sum(axis=1) < 1 + 1e-12)
        assert fine.areas[inside].sum() == pytest.approx(
            abs(np.linalg.det(T)) / 2, rel=1e-12)


def test_locate_element_random_points():
    rng = np.random.default_rng(7)
    for pattern in ("uniform-senw", "quadrant-symmetric"):
        mesh = build_mesh(2.0, 5, pattern)
        for x in rng.uniform(0, 2.0, size=(200, 2)):
            e = locate_element(mesh, x)
            tri = mesh.vertices[mesh.elements[e]]
            T = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
            st = np.linalg.solve(T, x - tri[0])
            lam = np.array([1 - st.sum(), st[0], st[1]])
            assert np.all(lam >= -1e-10)


def test_right_triangle_restriction():
    mesh = restrict_to_right_triangle(build_mesh(1.0, 4, "uniform-senw"))
    assert mesh.n_elements == 16  # n^2
    assert mesh.n_interior == 3  # (n-1)(n-2)/2
    cent = mesh.centroids()
    assert np.all(cent[:, 0] + cent[:, 1] < 1.0)
    # hypotenuse vertices count as supported boundary
    for v in mesh.interior_vertices:
        x, y = mesh.vertices[v]
        assert x > 0 and y > 0 and x + y < 1.0
    with pytest.raises(ValueError):
        restrict_to_right_triangle(build_mesh(1.0, 4, "quadrant-symmetric"))
    with pytest.raises(ValueError):
        locate_element(mesh, (0.9, 0.9))


# --- load vectors ------------------------------------------------------------

def test_pressure_whole_domain_exact():
    a, n, p = 2.0, 5, 3.0
    mesh = build_mesh(a, n, "uniform-senw")
    full = nodal_load_vector(mesh, PressureLoad(p), all_vertices=True)
    assert full.sum() == pytest.approx(p * a * a, rel=1e-13)
    f = nodal_load_vector(mesh, PressureLoad(p))
    np.testing.assert_allclose(f, p * a * a / n ** 2, rtol=1e-12)


def test_pressure_region_mass_and_equivalence():
    a, n = 1.0, 6
    mesh = build_mesh(a, n, "quadrant-symmetric")
    whole = nodal_load_vector(
        mesh, PressureLoad(2.0, ((0, 0), (a, 0), (a, a), (0, a))),
        all_vertices=True)
    ref = nodal_load_vector(mesh, PressureLoad(2.0), all_vertices=True)
    np.testing.assert_allclose(whole, ref, atol=1e-12)

    quad = ((0.13, 0.21), (0.77, 0.15), (0.81, 0.64), (0.2, 0.7))
    f = nodal_load_vector(mesh, PressureLoad(1.0, quad), all_vertices=True)
    x, y = np.array(quad).T
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    assert f.sum() == pytest.approx(area, rel=1e-12)
    # clockwise input handled too
    g = nodal_load_vector(mesh, PressureLoad(1.0, quad[::-1]), all_vertices=True)
    np.testing.assert_allclose(g, f, atol=1e-14)


def test_point_load_at_vertex_and_snapping():
    a, n = 1.0, 5
    mesh = build_mesh(a, n, "uniform-senw")
    f = nodal_load_vector(mesh, PointLoad((0.4, 0.6), 2.5))
    assert f.sum() == pytest.approx(2.5)
    assert (f != 0).sum() == 1
    # a nudge below the snap radius hits the same vertex
    g = nodal_load_vector(mesh, PointLoad((0.4 + 0.005, 0.6), 2.5))
    np.testing.assert_allclose(g, f)
    # far from any vertex: barycentric split, still full mass
    h = nodal_load_vector(mesh, PointLoad((0.45, 0.63), 2.5))
    assert h.sum() == pytest.approx(2.5)
    assert 1 < (h != 0).sum() <= 3


def test_point_load_on_boundary_warns_and_vanishes():
    mesh = build_mesh(1.0, 4, "uniform-senw")
    with pytest.warns(UserWarning):
        f = nodal_load_vector(mesh, PointLoad((0.5, 0.0), 1.0))
    assert np.all(f == 0.0)
    full = nodal_load_vector(mesh, PointLoad((0.5, 0.0), 1.0), all_vertices=True)
    assert full.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("n", [4, 5])
def test_line_load_on_antidiagonal(n):
    a, t = 1.0, 3.0
    mesh = build_mesh(a, n, "uniform-senw")
    full = nodal_load_vector(mesh, LineLoad((0, a), (a, 0), t), all_vertices=True)
    assert full.sum() == pytest.approx(t * np.sqrt(2) * a, rel=1e-12)
    with pytest.warns(UserWarning):  # the corner mass is absorbed by supports
        f = nodal_load_vector(mesh, LineLoad((0, a), (a, 0), t))
    # interior vertices on the diagonal carry t*sqrt(2)*a/n, others nothing
    for col, vid in enumerate(mesh.interior_vertices):
        x, y = mesh.vertices[vid]
        if abs(x + y - a) < 1e-12:
            assert f[col] == pytest.approx(t * np.sqrt(2) * a / n, rel=1e-12)
        else:
            assert abs(f[col]) < 1e-14


def test_line_load_generic_segment_vs_quadrature():
    a, n = 1.0, 4
    mesh = build_mesh(a, n, "quadrant-symmetric")
    p0, p1, t = np.array([0.1, 0.23]), np.array([0.83, 0.77]), 1.7
    full = nodal_load_vector(mesh, LineLoad(tuple(p0), tuple(p1), t),
                             all_vertices=True)
    seg_len = np.linalg.norm(p1 - p0)
    assert full.sum() == pytest.approx(t * seg_len, rel=1e-12)
    # dense-quadrature oracle per vertex
    s = np.linspace(0, 1, 20001)
    pts = p0[None] + s[:, None] * (p1 - p0)[None]
    for vid in np.flatnonzero(np.abs(full) > 1e-13):
        vals = np.array([hat_value(mesh, vid, x) for x in pts])
        approx = t * seg_len * np.trapezoid(vals, s)
        assert full[vid] == pytest.approx(approx, abs=2e-6)


def test_line_load_main_diagonal_crosses_elements():
    # the main diagonal is not an edge line of the SE-NW mesh
    a, n, t = 1.0, 4, 1.0
    mesh = build_mesh(a, n, "uniform-senw")
    full = nodal_load_vector(mesh, LineLoad((0, 0), (a, a), t), all_vertices=True)
    assert full.sum() == pytest.approx(t * np.sqrt(2) * a, rel=1e-12)


def test_line_load_along_boundary_warns():
    mesh = build_mesh(1.0, 4, "uniform-senw")
    with pytest.warns(UserWarning):
        f = nodal_load_vector(mesh, LineLoad((0, 0), (1, 0), 1.0))
    np.testing.assert_allclose(f, 0.0, atol=1e-14)


def test_loads_combine_additively():
    mesh = build_mesh(1.0, 4, "uniform-senw")
    loads = [PointLoad((0.5, 0.5), 1.0), PressureLoad(0.5)]
    f = nodal_load_vector(mesh, loads)
    single = sum(nodal_load_vector(mesh, l) for l in loads)
    np.testing.assert_allclose(f, single, atol=1e-15)


def test_empty_interior_mesh():
    mesh = build_mesh(1.0, 1, "uniform-senw")
    assert mesh.n_interior == 0
    f = nodal_load_vector(mesh, PressureLoad(1.0))
    assert f.shape == (0,)
