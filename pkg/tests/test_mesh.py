"""Mesh construction, tagging, measures and point location."""

import numpy as np
import pytest

from gldd.errors import NonDivisibleSpacing, OutOfDomain
from gldd.mesh import (FacetTag, GeometryConfig, build_fitted_mesh,
                       build_global_mesh, build_local_mesh, dump_mesh,
                       interface_facets, locate_point)

GEOM = GeometryConfig()
GEOM3 = GeometryConfig(dim=3)


def tag_counts(mesh):
    counts = {t: 0 for t in FacetTag}
    for t in mesh.facet_tags:
        counts[FacetTag(t)] += 1
    return counts


class TestGlobalMesh:
    def test_counts_2d(self):
        mesh = build_global_mesh(GEOM, 1 / 160)
        assert mesh.num_vertices == 25
        assert mesh.num_cells == 32
        assert len(mesh.boundary_facets) == 16

    def test_counts_3d(self):
        mesh = build_global_mesh(GEOM3, 1 / 160)
        assert mesh.num_vertices == 125
        assert mesh.num_cells == 384

    def test_tags_2d(self):
        counts = tag_counts(build_global_mesh(GEOM, 1 / 160))
        assert counts[FacetTag.NEUMANN_TOP] == 4
        assert counts[FacetTag.DIRICHLET_OUTER] == 12
        assert counts[FacetTag.INTERFACE_GAMMA] == 0

    def test_tags_3d(self):
        counts = tag_counts(build_global_mesh(GEOM3, 1 / 160))
        assert counts[FacetTag.NEUMANN_TOP] == 4 * 4 * 2
        assert counts[FacetTag.DIRICHLET_OUTER] == 5 * 4 * 4 * 2

    def test_volume_partition_2d(self):
        mesh = build_global_mesh(GEOM, 1 / 160)
        total = sum(mesh.cell_volume(c) for c in range(mesh.num_cells))
        assert total == pytest.approx(GEOM.L * GEOM.H, abs=1e-15)

    def test_volume_partition_3d(self):
        mesh = build_global_mesh(GEOM3, 1 / 160)
        total = sum(mesh.cell_volume(c) for c in range(mesh.num_cells))
        assert total == pytest.approx(GEOM3.L * GEOM3.W * GEOM3.H, abs=1e-15)

    def test_positive_orientation_3d(self):
        mesh = build_global_mesh(GEOM3, 1 / 80)
        for c in range(mesh.num_cells):
            pts = mesh.vertices[mesh.cells[c]]
            det = np.linalg.det((pts[1:] - pts[0]).T)
            assert det > 0

    def test_boundary_facets_unique(self):
        mesh = build_global_mesh(GEOM, 1 / 160)
        keys = [tuple(sorted(f)) for f, _ in mesh.boundary_facets]
        assert len(keys) == len(set(keys))

    def test_non_divisible_spacing(self):
        with pytest.raises(NonDivisibleSpacing):
            build_global_mesh(GEOM, 1 / 150)


class TestLocalMesh:
    def test_counts(self):
        mesh = build_local_mesh(GEOM, 1 / 320)
        # strip is 8 x 2 fine squares
        assert mesh.num_cells == 32
        assert mesh.num_vertices == 27

    def test_tags(self):
        counts = tag_counts(build_local_mesh(GEOM, 1 / 320))
        assert counts[FacetTag.INTERFACE_GAMMA] == 8
        assert counts[FacetTag.NEUMANN_TOP] == 8
        assert counts[FacetTag.DIRICHLET_OUTER] == 4

    def test_interface_geometry(self):
        mesh = build_local_mesh(GEOM, 1 / 320)
        pairs = interface_facets(mesh)
        assert len(pairs) == 8
        floor = GEOM.H - GEOM.H_minus
        total = 0.0
        for facet, normal in pairs:
            assert np.allclose(normal, [0.0, -1.0], atol=1e-14)
            assert np.allclose(mesh.vertices[list(facet)][:, 1], floor,
                               atol=1e-14)
            total += mesh.facet_measure(facet)
        assert total == pytest.approx(GEOM.L, abs=1e-15)

    def test_interface_geometry_3d(self):
        mesh = build_local_mesh(GEOM3, 1 / 320)
        pairs = interface_facets(mesh)
        assert len(pairs) == 8 * 8 * 2
        total = 0.0
        for facet, normal in pairs:
            assert np.allclose(normal, [0.0, 0.0, -1.0], atol=1e-14)
            total += mesh.facet_measure(facet)
        assert total == pytest.approx(GEOM3.L * GEOM3.W, abs=1e-14)


class TestLocatePoint:
    def test_roundtrip_2d(self):
        mesh = build_global_mesh(GEOM, 1 / 160)
        rng = np.random.default_rng(11)
        pts = rng.random((1000, 2)) * [GEOM.L, GEOM.H]
        for p in pts:
            loc = locate_point(mesh, p)
            lam = np.asarray(loc.barycentric)
            assert lam.min() >= -1e-12
            assert lam.sum() == pytest.approx(1.0, abs=1e-12)
            rec = mesh.vertices[mesh.cells[loc.cell]].T @ lam
            np.testing.assert_allclose(rec, p, atol=1e-12)

    def test_roundtrip_3d(self):
        mesh = build_global_mesh(GEOM3, 1 / 160)
        rng = np.random.default_rng(12)
        pts = rng.random((200, 3)) * [GEOM3.L, GEOM3.W, GEOM3.H]
        for p in pts:
            loc = locate_point(mesh, p)
            rec = mesh.vertices[mesh.cells[loc.cell]].T @ np.asarray(loc.barycentric)
            np.testing.assert_allclose(rec, p, atol=1e-12)

    def test_shared_edge_lowest_cell_wins(self):
        mesh = build_global_mesh(GEOM, 1 / 160)
        h = 1 / 160
        # diagonal of the first grid square is shared by cells 0 and 1
        loc = locate_point(mesh, [0.5 * h, 0.5 * h])
        assert loc.cell == 0
        # vertex shared by many cells
        loc = locate_point(mesh, [h, h])
        assert loc.cell == 0

    def test_boundary_points(self):
        mesh = build_global_mesh(GEOM, 1 / 160)
        for p in ([0.0, 0.0], [GEOM.L, GEOM.H], [GEOM.L / 3, 0.0]):
            loc = locate_point(mesh, p)
            assert np.asarray(loc.barycentric).min() >= -1e-12

    def test_tolerance_band(self):
        mesh = build_global_mesh(GEOM, 1 / 160)
        locate_point(mesh, [-1e-13, 1e-3])  # snapped inside
        with pytest.raises(OutOfDomain):
            locate_point(mesh, [-1e-3, 1e-3])
        with pytest.raises(OutOfDomain):
            locate_point(mesh, [GEOM.L + 1e-6, GEOM.H])


def _assert_conforming(mesh):
    """Every facet seen once must lie on the domain boundary (no hanging
    nodes), every interior facet exactly twice."""
    from collections import Counter
    from itertools import combinations

    count = Counter()
    for cell in mesh.cells:
        for facet in combinations(sorted(cell), mesh.dim):
            count[facet] += 1
    assert set(count.values()) <= {1, 2}
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    for facet, n in count.items():
        if n == 1:
            pts = mesh.vertices[list(facet)]
            on_wall = [np.allclose(pts[:, d], v, atol=1e-12)
                       for d in range(mesh.dim) for v in (lo[d], hi[d])]
            assert any(on_wall), f"interior facet {facet} has only one cell"


class TestFittedMesh:
    def test_uniform_fine(self):
        mesh = build_fitted_mesh(GEOM, 1 / 160, 1 / 320, "uniform-fine")
        assert mesh.num_cells == 8 * 8 * 2
        _assert_conforming(mesh)

    @pytest.mark.parametrize("ratio", [2, 4, 8, 16])
    def test_graded_closure(self, ratio):
        h_minus = 1 / (160 * ratio)
        mesh = build_fitted_mesh(GEOM, 1 / 160, h_minus, "graded")
        total = sum(mesh.cell_volume(c) for c in range(mesh.num_cells))
        assert total == pytest.approx(GEOM.L * GEOM.H, rel=1e-13)
        _assert_conforming(mesh)
        # fine rows must cover the strip
        floor = GEOM.H - GEOM.H_minus
        for c in range(mesh.num_cells):
            pts = mesh.vertices[mesh.cells[c]]
            if pts[:, 1].min() >= floor - 1e-12:
                assert np.ptp(pts[:, 1]) == pytest.approx(h_minus, rel=1e-12)

    def test_graded_cheaper_than_uniform(self):
        fine = build_fitted_mesh(GEOM, 1 / 160, 1 / 640, "uniform-fine")
        graded = build_fitted_mesh(GEOM, 1 / 160, 1 / 640, "graded")
        assert graded.num_cells < fine.num_cells

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            build_fitted_mesh(GEOM, 1 / 160, 1 / 320, "adaptive")


def test_dump_mesh(tmp_path):
    mesh = build_local_mesh(GEOM, 1 / 320)
    path = tmp_path / "strip.txt"
    dump_mesh(mesh, path)
    text = path.read_text().splitlines()
    assert text[0] == "dim 2"
    assert any(line.startswith("vertices 27") for line in text)
    assert any("INTERFACE_GAMMA" in line for line in text)
