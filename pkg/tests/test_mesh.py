import numpy as np
import pytest

from plasmabound.errors import GeometryError
from plasmabound.mesh import InnerContour, build_annulus_mesh, refine_mesh, structured_mesh

T = np.linspace(0, 2 * np.pi, 240, endpoint=False)
OUTER = np.column_stack([2.5 + 0.6 * np.cos(T), 0.6 * np.sin(T)])
INNER = InnerContour.circle((2.5, 0.0), 0.2)


@pytest.fixture(scope="module")
def mesh():
    return build_annulus_mesh(OUTER, INNER, 0.05)


def test_quality_and_topology(mesh):
    assert mesh.min_angle() >= 15.0
    assert mesh.euler_characteristic() == 0
    V, E, F = mesh.n_nodes, len(mesh.edges()), len(mesh.triangles)
    assert V - E + F == 0
    assert np.all(mesh.areas() > 0)
    assert np.all(mesh.r > 0)


def test_halving_h_quadruples_triangles(mesh):
    fine = build_annulus_mesh(OUTER, INNER, 0.025)
    assert 3.0 <= len(fine.triangles) / len(mesh.triangles) <= 5.0


def test_inner_nodes_on_contour(mesh):
    p = mesh.nodes[mesh.inner]
    assert np.max(np.abs(np.hypot(p[:, 0] - 2.5, p[:, 1]) - 0.2)) < 1e-10
    # inner nodes come first and run counter-clockwise
    assert np.array_equal(mesh.inner, np.arange(mesh.n_inner))
    ang = np.unwrap(np.arctan2(p[:, 1], p[:, 0] - 2.5))
    assert np.all(np.diff(ang) > 0)


def test_boundary_tags_disjoint(mesh):
    tags = np.zeros(mesh.n_nodes, int)
    tags[mesh.inner] += 1
    tags[mesh.outer] += 1
    tags[mesh.interior] += 1
    assert np.all(tags == 1)
    bnd = np.unique(mesh.boundary_edges())
    assert set(bnd) == set(mesh.inner) | set(mesh.outer)


def test_ellipse_inner_contour():
    m = build_annulus_mesh(OUTER, InnerContour((2.5, 0.0), (0.15, 0.25), "ellipse"), 0.05)
    p = m.nodes[m.inner]
    q = ((p[:, 0] - 2.5) / 0.15) ** 2 + (p[:, 1] / 0.25) ** 2
    assert np.max(np.abs(q - 1)) < 1e-9


def test_refinement_keeps_annulus(mesh):
    fine = refine_mesh(mesh)
    assert len(fine.triangles) == 4 * len(mesh.triangles)
    assert fine.n_inner == 2 * mesh.n_inner
    assert fine.euler_characteristic() == 0
    p = fine.nodes[fine.inner]
    assert np.max(np.abs(np.hypot(p[:, 0] - 2.5, p[:, 1]) - 0.2)) < 1e-10


def test_intersecting_contours_rejected():
    with pytest.raises(GeometryError):
        build_annulus_mesh(OUTER, InnerContour.circle((2.95, 0.0), 0.2), 0.05)


def test_bad_inner_contour():
    with pytest.raises(ValueError):
        InnerContour((2.5, 0.0), (0.1, 0.2), "circle")
    with pytest.raises(ValueError):
        InnerContour((2.5, 0.0), (0.0, 0.2), "ellipse")


def test_locator_interpolates_linear_fields(mesh, rng):
    vals = 3.0 * mesh.r - 2.0 * mesh.z + 1.0
    ang = rng.uniform(0, 2 * np.pi, 200)
    rad = rng.uniform(0.21, 0.59, 200)
    pts = np.column_stack([2.5 + rad * np.cos(ang), rad * np.sin(ang)])
    got = mesh.locator().interpolate(vals, pts)
    ok = ~np.isnan(got)
    assert ok.mean() > 0.95
    assert np.allclose(got[ok], 3.0 * pts[ok, 0] - 2.0 * pts[ok, 1] + 1.0, atol=1e-12)


def test_structured_mesh():
    m = structured_mesh((1.0, 2.0), (-1.0, 1.0), 5, 7)
    assert len(m.triangles) == 2 * 4 * 6
    assert np.isclose(m.areas().sum(), 2.0)
