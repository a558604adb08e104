import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluopat.grid import (
    GRAZE_TOL,
    build_mesh,
    build_ordinates,
    classify_boundary,
    l2_inner,
    l2_norm,
    save_fields_csv,
)


class TestMesh:
    def test_cell_count_and_total_area(self):
        for n in (2, 5, 8):
            mesh = build_mesh(n)
            assert mesh.n_cells == 2 * n * n
            assert np.isclose(mesh.cell_areas.sum(), 4.0)

    def test_rejects_too_small(self):
        with pytest.raises(ValueError):
            build_mesh(1)

    def test_areas_positive_and_uniform(self):
        mesh = build_mesh(4)
        assert np.all(mesh.cell_areas > 0)
        # uniform split-square triangulation: all triangles congruent
        assert np.allclose(mesh.cell_areas, mesh.cell_areas[0])

    def test_edge_normals_unit_and_outward(self):
        mesh = build_mesh(4)
        norms = np.linalg.norm(mesh.edge_normals, axis=2)
        assert np.allclose(norms, 1.0)
        # outward: normal points away from the centroid
        for i in range(mesh.n_cells):
            tri = mesh.cells[i]
            for e in range(3):
                va, vb = tri[e], tri[(e + 1) % 3]
                mid = 0.5 * (mesh.vertices[va] + mesh.vertices[vb])
                assert (mid - mesh.cell_centroids[i]) @ mesh.edge_normals[i, e] > 0

    def test_flux_closure_per_cell(self):
        # sum of (length-weighted) outward normals vanishes on a closed polygon
        mesh = build_mesh(6)
        total = np.sum(mesh.edge_normals * mesh.edge_lengths[:, :, None], axis=1)
        assert np.allclose(total, 0.0, atol=1e-13)

    def test_neighbors_reciprocal(self):
        mesh = build_mesh(5)
        for i in range(mesh.n_cells):
            for e in range(3):
                j = mesh.neighbors[i, e]
                if j >= 0:
                    assert i in mesh.neighbors[j]

    def test_boundary_tables(self):
        n = 6
        mesh = build_mesh(n)
        assert mesh.n_boundary_edges == 4 * n
        on_edge = (np.abs(np.abs(mesh.boundary_midpoints) - 1.0) < 1e-12).any(axis=1)
        assert on_edge.all()
        # boundary_index consistent with the edge list
        for b, (ci, e) in enumerate(
            zip(mesh.boundary_cells, mesh.boundary_local_edges)
        ):
            assert mesh.boundary_index[ci, e] == b
            assert mesh.neighbors[ci, e] == -1

    def test_immutability(self):
        mesh = build_mesh(3)
        with pytest.raises(ValueError):
            mesh.cell_areas[0] = 1.0

    def test_determinism(self):
        m1, m2 = build_mesh(4), build_mesh(4)
        assert np.array_equal(m1.vertices, m2.vertices)
        assert np.array_equal(m1.cells, m2.cells)


class TestOrdinates:
    def test_weights_normalized(self):
        for n in (4, 16, 64):
            ords = build_ordinates(n)
            assert np.isclose(ords.weights.sum(), 1.0)
            assert np.allclose(np.linalg.norm(ords.directions, axis=1), 1.0)

    def test_opposite_involution(self):
        ords = build_ordinates(12)
        assert np.array_equal(ords.opposite[ords.opposite], np.arange(12))
        assert np.allclose(ords.directions[ords.opposite], -ords.directions)

    def test_rejects_odd_or_small(self):
        for bad in (3, 5, 2, 0):
            with pytest.raises(ValueError):
                build_ordinates(bad)

    def test_first_moment_vanishes(self):
        ords = build_ordinates(8)
        assert np.allclose(ords.weights @ ords.directions, 0.0, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(min_value=2, max_value=10))
def test_mesh_area_property(n):
    mesh = build_mesh(n)
    assert np.isclose(mesh.cell_areas.sum(), 4.0)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(min_value=2, max_value=32).map(lambda k: 2 * k))
def test_ordinate_set_closed_under_negation(n):
    ords = build_ordinates(n)
    assert np.allclose(ords.directions[ords.opposite], -ords.directions)
    assert np.isclose(ords.weights.sum(), 1.0)


class TestBoundaryClassification:
    def test_inflow_outflow_partition(self):
        mesh = build_mesh(4)
        ords = build_ordinates(16)
        inflow = classify_boundary(mesh, ords)
        ndotv = mesh.boundary_normals @ ords.directions.T
        assert np.array_equal(inflow, ndotv < -GRAZE_TOL)
        # the half-step ordinate offset avoids grazing on the axis-aligned
        # boundary edges: exactly half the directions flow in
        assert np.all(inflow.sum(axis=1) == ords.n_dirs // 2)


class TestInnerProducts:
    def test_norm_of_indicator(self):
        mesh = build_mesh(4)
        one = np.ones(mesh.n_cells)
        assert np.isclose(l2_norm(mesh, one), 2.0)  # sqrt of the domain area
        assert np.isclose(l2_inner(mesh, one, one), 4.0)

    def test_inner_symmetry_and_linearity(self):
        mesh = build_mesh(3)
        rng = np.random.default_rng(0)
        a, b, c = rng.standard_normal((3, mesh.n_cells))
        assert np.isclose(l2_inner(mesh, a, b), l2_inner(mesh, b, a))
        assert np.isclose(
            l2_inner(mesh, a, b + 2 * c),
            l2_inner(mesh, a, b) + 2 * l2_inner(mesh, a, c),
        )


class TestCsv:
    def test_fields_csv_shape(self, tmp_path):
        mesh = build_mesh(3)
        path = tmp_path / "f.csv"
        save_fields_csv(path, mesh, {"a": np.arange(mesh.n_cells, dtype=float)})
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "x,y,a"
        assert len(lines) == 1 + mesh.n_cells

    def test_fields_csv_roundtrip(self, tmp_path):
        mesh = build_mesh(3)
        vals = np.random.default_rng(1).standard_normal(mesh.n_cells)
        path = tmp_path / "f.csv"
        save_fields_csv(path, mesh, {"v": vals})
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert np.allclose(data[:, 2], vals)
        assert np.allclose(data[:, :2], mesh.cell_centroids)
