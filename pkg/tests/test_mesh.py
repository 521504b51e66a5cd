import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tfmkit.mesh import BoundaryTag, build_box_mesh, build_rect_mesh, facet_mesh


def test_minimal_rect():
    m = build_rect_mesh(1.0, 1, 1)
    assert (m.n_vertices, m.n_cells, len(m.facets)) == (4, 2, 4)
    assert np.all(m.facet_tags == BoundaryTag.DIRICHLET)


def test_rect_area():
    assert build_rect_mesh(3.0, 64, 64).volume() == pytest.approx(36.0, rel=1e-12)


def test_rect_boundary_endpoints_on_square():
    # a 4x4 grid has 16 boundary edges, hence 32 endpoints
    m = build_rect_mesh(3.0, 4, 4)
    ends = m.vertices[m.facets].reshape(-1, 2)
    assert len(ends) == 32
    np.testing.assert_allclose(np.abs(ends).max(axis=1), 3.0, rtol=0, atol=1e-12)


def test_zero_counts_rejected():
    with pytest.raises(ValueError):
        build_rect_mesh(1.0, 0, 3)
    with pytest.raises(ValueError):
        build_box_mesh(1.0, 1.0, 1, 0, 1)


def test_single_hexahedron():
    m = build_box_mesh(1.0, 1.0, 1, 1, 1)
    assert (m.n_vertices, m.n_cells, len(m.facets)) == (8, 1, 6)
    tags = list(m.facet_tags)
    assert tags.count(BoundaryTag.TOP) == 1
    assert tags.count(BoundaryTag.BOTTOM) == 1
    assert tags.count(BoundaryTag.SIDE) == 4


def test_box_volume():
    assert build_box_mesh(2.0, 1.0, 8, 8, 4).volume() == pytest.approx(16.0, rel=1e-12)


def test_top_facets_on_surface():
    m = build_box_mesh(2.0, 1.0, 2, 2, 2)
    top = m.facets_with(BoundaryTag.TOP)
    assert len(top) == 4
    assert np.all(m.vertices[m.facets[top]][..., 2] == 0.0)


def test_outer_normals():
    m = build_box_mesh(2.0, 1.0, 3, 2, 2)
    n = m.facet_normals()
    np.testing.assert_allclose(n[m.facets_with(BoundaryTag.TOP)], [[0, 0, 1]] * 6, atol=1e-14)
    np.testing.assert_allclose(n[m.facets_with(BoundaryTag.BOTTOM)], [[0, 0, -1]] * 6, atol=1e-14)
    side = n[m.facets_with(BoundaryTag.SIDE)]
    assert np.allclose(side[:, 2], 0.0)


def test_flip_changes_split_only():
    a, b = build_rect_mesh(1.0, 3, 3), build_rect_mesh(1.0, 3, 3, flip=True)
    assert a.fingerprint() != b.fingerprint()
    np.testing.assert_allclose(a.cell_volumes(), b.cell_volumes())


def test_facet_mesh_of_top():
    m = build_box_mesh(2.0, 1.0, 3, 4, 2)
    fm, used = facet_mesh(m, BoundaryTag.TOP)
    assert fm.cell_type == "quad" and fm.n_cells == 12
    assert fm.volume() == pytest.approx(16.0)
    assert np.all(m.vertices[used, 2] == 0.0)


def test_mesh_is_immutable():
    m = build_rect_mesh(1.0, 2, 2)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(0.5, 4.0))
def test_rect_invariants(nx, ny, hw):
    m = build_rect_mesh(hw, nx, ny)
    assert np.all(m.cell_volumes() > 0)
    assert m.volume() == pytest.approx(4 * hw * hw, rel=1e-12)
    # each boundary facet is owned by exactly one cell and lies on the square boundary
    assert len(m.facets) == 2 * (nx + ny)
    ends = m.vertices[m.facets]
    assert np.allclose(np.abs(ends).max(axis=2), hw)
    fine = build_rect_mesh(hw, 2 * nx, 2 * ny)
    assert fine.n_cells == 4 * m.n_cells
    assert fine.volume() == pytest.approx(m.volume(), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3))
def test_box_invariants(nx, ny, nz):
    m = build_box_mesh(1.5, 0.7, nx, ny, nz)
    assert np.all(m.cell_volumes() > 0)
    assert m.volume() == pytest.approx(9 * 0.7, rel=1e-12)
    boundary = 2 * (nx * ny + nx * nz + ny * nz)
    assert len(m.facets) == boundary
    fine = build_box_mesh(1.5, 0.7, 2 * nx, 2 * ny, 2 * nz)
    assert fine.n_cells == 8 * m.n_cells
