"""Mesh builders and validation."""

import copy

import numpy as np
import pytest

from bidomainlab.errors import ConfigurationError
from bidomainlab.mesh import (BoundaryMarker, CaseTag, Region,
                              build_inclusion_mesh, build_interval_mesh,
                              build_split_rectangle_mesh, validate_mesh)


def test_interval_counts_and_coordinates():
    # hand enumeration: vertices 0, .25, .5, .75, 1; 4 cells; interface at .5
    mesh = build_interval_mesh(2, 2, 0.5)
    assert mesh.n_vertices == 5
    assert mesh.n_cells == 4
    assert len(mesh.interface_facets) == 1
    np.testing.assert_allclose(mesh.vertices[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])
    facet = mesh.interface_facets[0]
    assert mesh.vertices[facet.vertices[0], 0] == 0.5
    np.testing.assert_allclose(facet.normal, [-1.0])
    assert mesh.cell_regions[facet.healthy_cell] == Region.HEALTHY
    assert mesh.cell_regions[facet.damaged_cell] == Region.DAMAGED


def test_interval_nonuniform_split_cell_lengths():
    # hand enumeration: 0.6/3 = 0.2 on the healthy side, 0.4/2 = 0.2 damaged
    mesh = build_interval_mesh(3, 2, 0.6)
    measures = mesh.cell_measures()
    healthy = measures[mesh.cell_regions == Region.HEALTHY]
    damaged = measures[mesh.cell_regions == Region.DAMAGED]
    np.testing.assert_allclose(healthy, 0.2, atol=1e-15)
    np.testing.assert_allclose(damaged, 0.2, atol=1e-15)


def test_interval_boundary_markers():
    mesh = build_interval_mesh(2, 2, 0.5)
    markers = {f.vertices[0]: f.marker for f in mesh.boundary_facets}
    assert markers == {0: BoundaryMarker.DIRICHLET_HEALTHY,
                       4: BoundaryMarker.DIRICHLET_DAMAGED}
    assert mesh.case_tag == CaseTag.BOTH_REACH_BOUNDARY


@pytest.mark.parametrize("split", [0.0, 1.0, -0.1, 1.3])
def test_interval_rejects_bad_split(split):
    with pytest.raises(ConfigurationError):
        build_interval_mesh(2, 2, split)


def test_interval_rejects_empty_region():
    with pytest.raises(ConfigurationError):
        build_interval_mesh(0, 2, 0.5)


def test_split_rectangle_counts():
    # hand enumeration: 4x4 squares -> 32 triangles, 25 vertices,
    # 4 interface edges on x = 0.5, every normal (-1, 0)
    mesh = build_split_rectangle_mesh(4, 4, 0.5)
    assert mesh.n_vertices == 25
    assert mesh.n_cells == 32
    assert len(mesh.interface_facets) == 4
    for facet in mesh.interface_facets:
        np.testing.assert_allclose(facet.normal, [-1.0, 0.0], atol=1e-15)
        for v in facet.vertices:
            assert mesh.vertices[v, 0] == 0.5
    assert mesh.region_measure(Region.HEALTHY) == pytest.approx(0.5, abs=1e-14)
    assert mesh.region_measure(Region.DAMAGED) == pytest.approx(0.5, abs=1e-14)


def test_split_rectangle_small():
    # hand enumeration: 2x1 squares -> 4 triangles, one interface edge
    mesh = build_split_rectangle_mesh(2, 1, 0.5)
    assert mesh.n_cells == 4
    assert len(mesh.interface_facets) == 1
    assert len(mesh.interface_facets[0].vertices) == 2


def test_split_rectangle_rejects_misaligned_split():
    with pytest.raises(ConfigurationError):
        build_split_rectangle_mesh(4, 4, 0.3)


def test_split_rectangle_rejects_one_sided_split():
    with pytest.raises(ConfigurationError):
        build_split_rectangle_mesh(4, 4, 1.0)


def test_inclusion_interface_count():
    # hand enumeration: box perimeter in grid edges: 2*(i1-i0) + 2*(j1-j0)
    mesh = build_inclusion_mesh(8, (3, 5, 3, 5))
    assert len(mesh.interface_facets) == 8
    mesh_small = build_inclusion_mesh(4, (1, 2, 1, 2))
    assert len(mesh_small.interface_facets) == 4


def test_inclusion_case_tag_and_dirichlet():
    mesh = build_inclusion_mesh(8, (3, 5, 3, 5))
    assert mesh.case_tag == CaseTag.ENCLOSED_INCLUSION
    assert all(f.marker == BoundaryMarker.DIRICHLET_HEALTHY
               for f in mesh.boundary_facets)
    assert mesh.dirichlet_vertices(BoundaryMarker.DIRICHLET_DAMAGED).size == 0


def test_inclusion_normals_point_outward_from_box():
    mesh = build_inclusion_mesh(8, (3, 5, 3, 5))
    center = np.array([0.5, 0.5])
    for facet in mesh.interface_facets:
        midpoint = mesh.vertices[list(facet.vertices)].mean(axis=0)
        # normals leave the damaged box, i.e. point away from its center
        assert np.dot(facet.normal, midpoint - center) > 0.0


def test_inclusion_two_disjoint_boxes():
    mesh = build_inclusion_mesh(8, [(1, 3, 1, 3), (5, 7, 5, 7)])
    assert len(mesh.interface_facets) == 16
    assert validate_mesh(mesh).ok


def test_inclusion_rejects_boundary_touching_box():
    with pytest.raises(ConfigurationError):
        build_inclusion_mesh(8, (0, 2, 3, 5))
    with pytest.raises(ConfigurationError):
        build_inclusion_mesh(8, (3, 8, 3, 5))


def test_inclusion_rejects_overlapping_boxes():
    with pytest.raises(ConfigurationError):
        build_inclusion_mesh(8, [(1, 4, 1, 4), (3, 6, 3, 6)])


@pytest.mark.parametrize("builder,args", [
    (build_interval_mesh, (2, 2, 0.5)),
    (build_interval_mesh, (3, 2, 0.6)),
    (build_split_rectangle_mesh, (4, 4, 0.5)),
    (build_split_rectangle_mesh, (2, 1, 0.5)),
    (build_inclusion_mesh, (8, (3, 5, 3, 5))),
    (build_inclusion_mesh, (4, (1, 2, 1, 2))),
])
def test_validate_accepts_builders(builder, args):
    diagnostics = validate_mesh(builder(*args))
    assert diagnostics.ok, diagnostics.violations
    assert diagnostics.euler_characteristic == 1
    assert diagnostics.min_cell_measure > 0.0
    assert diagnostics.measure_healthy + diagnostics.measure_damaged == pytest.approx(
        1.0, abs=1e-13)


def test_validate_reports_flipped_normal():
    mesh = build_split_rectangle_mesh(4, 4, 0.5)
    tampered = copy.deepcopy(mesh)
    facet = tampered.interface_facets[0]
    object.__setattr__(facet, "normal", -facet.normal)
    diagnostics = validate_mesh(tampered)
    assert not diagnostics.ok
    assert any("damaged side" in v for v in diagnostics.violations)


def test_validate_reports_wrong_case_tag():
    mesh = build_inclusion_mesh(4, (1, 2, 1, 2))
    mesh.case_tag = CaseTag.BOTH_REACH_BOUNDARY
    diagnostics = validate_mesh(mesh)
    assert not diagnostics.ok
    assert any("case tag" in v for v in diagnostics.violations)


def test_interface_vertices_sorted_and_shared():
    mesh = build_split_rectangle_mesh(4, 4, 0.5)
    gamma = mesh.interface_vertices()
    assert gamma.size == 5
    assert np.all(np.diff(gamma) > 0)
    assert np.all(mesh.vertices[gamma, 0] == 0.5)
