"""Two-region simplicial meshes with an explicit internal interface.

A mesh partitions the unit interval or unit square into a healthy region
(active tissue, carries the two-potential dynamics) and a damaged region
(passive diffusion).  The regions meet along an internal interface whose
facets are stored explicitly together with a unit normal oriented from the
damaged side into the healthy side.  Outer-boundary facets are marked by
the region they belong to; homogeneous Dirichlet conditions are applied
there.  Every vertex of a marked outer facet is a Dirichlet vertex,
including the endpoints of an interface that reaches the outer boundary:
the potentials vanish there, so those vertices carry no duplicated jump
degrees of freedom and the jump unknowns live at the interior interface
vertices only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .errors import ConfigurationError


class Region(IntEnum):
    HEALTHY = 0
    DAMAGED = 1


class BoundaryMarker(IntEnum):
    DIRICHLET_HEALTHY = 0
    DIRICHLET_DAMAGED = 1


class CaseTag(Enum):
    # both regions own a piece of the outer boundary
    BOTH_REACH_BOUNDARY = "both_reach_boundary"
    # the damaged region is strictly enclosed by the healthy one
    ENCLOSED_INCLUSION = "enclosed_inclusion"


@dataclass(frozen=True)
class InterfaceFacet:
    """One interface facet: a vertex in 1D, an edge in 2D.

    ``normal`` is the unit facet normal pointing from the damaged cell into
    the healthy cell.
    """

    vertices: tuple[int, ...]
    healthy_cell: int
    damaged_cell: int
    normal: np.ndarray


@dataclass(frozen=True)
class BoundaryFacet:
    vertices: tuple[int, ...]
    marker: BoundaryMarker


@dataclass
class Mesh:
    dim: int
    vertices: np.ndarray            # (n_vertices, dim)
    cells: np.ndarray               # (n_cells, dim + 1) vertex indices
    cell_regions: np.ndarray        # (n_cells,) Region values
    interface_facets: list[InterfaceFacet]
    boundary_facets: list[BoundaryFacet]
    case_tag: CaseTag

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def cell_measures(self) -> np.ndarray:
        """Length (1D) or area (2D) of every cell."""
        if self.dim == 1:
            a = self.vertices[self.cells[:, 0], 0]
            b = self.vertices[self.cells[:, 1], 0]
            return np.abs(b - a)
        p0 = self.vertices[self.cells[:, 0]]
        p1 = self.vertices[self.cells[:, 1]]
        p2 = self.vertices[self.cells[:, 2]]
        e1 = p1 - p0
        e2 = p2 - p0
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def region_measure(self, region: Region) -> float:
        measures = self.cell_measures()
        return float(measures[self.cell_regions == region].sum())

    def facet_measure(self, vertices: tuple[int, ...]) -> float:
        """Measure of a facet: 1 for a point (1D), edge length in 2D."""
        if len(vertices) == 1:
            return 1.0
        a, b = vertices
        return float(np.linalg.norm(self.vertices[b] - self.vertices[a]))

    def interface_vertices(self) -> np.ndarray:
        """Sorted vertex indices lying on the interface."""
        seen = set()
        for facet in self.interface_facets:
            seen.update(facet.vertices)
        return np.array(sorted(seen), dtype=int)

    def region_vertices(self, region: Region) -> np.ndarray:
        """Sorted vertex indices belonging to at least one cell of ``region``."""
        mask = self.cell_regions == region
        return np.unique(self.cells[mask].ravel())

    def dirichlet_vertices(self, marker: BoundaryMarker) -> np.ndarray:
        """Sorted vertices of the marked outer boundary.

        Interface vertices lying on the outer boundary are included: the
        homogeneous Dirichlet condition wins there and they carry no jump
        unknowns.
        """
        seen = set()
        for facet in self.boundary_facets:
            if facet.marker == marker:
                seen.update(facet.vertices)
        return np.array(sorted(seen), dtype=int)


@dataclass
class MeshDiagnostics:
    """Result of validate_mesh: a report, never an exception."""

    ok: bool
    violations: list[str] = field(default_factory=list)
    n_vertices: int = 0
    n_cells: int = 0
    n_interface_facets: int = 0
    euler_characteristic: int = 0
    min_cell_measure: float = 0.0
    max_cell_measure: float = 0.0
    measure_healthy: float = 0.0
    measure_damaged: float = 0.0
    n_dirichlet_healthy: int = 0
    n_dirichlet_damaged: int = 0


def _cell_facets(cell: np.ndarray, dim: int) -> list[tuple[int, ...]]:
    """Facets of one cell as sorted vertex tuples."""
    if dim == 1:
        return [(int(cell[0]),), (int(cell[1]),)]
    a, b, c = (int(v) for v in cell)
    return [tuple(sorted(e)) for e in ((a, b), (b, c), (a, c))]


def _facet_adjacency(cells: np.ndarray, dim: int) -> dict[tuple[int, ...], list[int]]:
    adjacency: dict[tuple[int, ...], list[int]] = {}
    for idx, cell in enumerate(cells):
        for facet in _cell_facets(cell, dim):
            adjacency.setdefault(facet, []).append(idx)
    return adjacency


def _cell_centroid(vertices: np.ndarray, cell: np.ndarray) -> np.ndarray:
    return vertices[cell].mean(axis=0)


def _interface_normal(vertices: np.ndarray, facet: tuple[int, ...],
                      centroid_healthy: np.ndarray,
                      centroid_damaged: np.ndarray) -> np.ndarray:
    """Unit normal of a facet, oriented from the damaged into the healthy side."""
    if len(facet) == 1:
        normal = np.array([1.0])
    else:
        tangent = vertices[facet[1]] - vertices[facet[0]]
        normal = np.array([tangent[1], -tangent[0]])
        normal = normal / np.linalg.norm(normal)
    if np.dot(normal, centroid_healthy - centroid_damaged) < 0.0:
        normal = -normal
    return normal


def _build_facets(vertices: np.ndarray, cells: np.ndarray,
                  cell_regions: np.ndarray, dim: int,
                  ) -> tuple[list[InterfaceFacet], list[BoundaryFacet]]:
    """Derive interface and outer-boundary facets from cell adjacency."""
    adjacency = _facet_adjacency(cells, dim)
    interface: list[InterfaceFacet] = []
    boundary: list[BoundaryFacet] = []
    for facet, owners in sorted(adjacency.items()):
        if len(owners) == 1:
            cell = owners[0]
            marker = (BoundaryMarker.DIRICHLET_HEALTHY
                      if cell_regions[cell] == Region.HEALTHY
                      else BoundaryMarker.DIRICHLET_DAMAGED)
            boundary.append(BoundaryFacet(vertices=facet, marker=marker))
            continue
        if len(owners) != 2:
            raise ConfigurationError(
                f"facet {facet} shared by {len(owners)} cells; mesh is not a manifold")
        r0, r1 = cell_regions[owners[0]], cell_regions[owners[1]]
        if r0 == r1:
            continue
        healthy = owners[0] if r0 == Region.HEALTHY else owners[1]
        damaged = owners[1] if r0 == Region.HEALTHY else owners[0]
        normal = _interface_normal(
            vertices, facet,
            _cell_centroid(vertices, cells[healthy]),
            _cell_centroid(vertices, cells[damaged]))
        interface.append(InterfaceFacet(vertices=facet, healthy_cell=healthy,
                                        damaged_cell=damaged, normal=normal))
    return interface, boundary


def build_interval_mesh(n_healthy: int, n_damaged: int, split: float) -> Mesh:
    """Uniform 1D mesh of (0, 1): healthy on (0, split), damaged on (split, 1).

    Parameters
    ----------
    n_healthy, n_damaged : int
        Cell counts left and right of the split point, each >= 1.
    split : float
        Interface coordinate, strictly inside (0, 1).
    """
    if n_healthy < 1 or n_damaged < 1:
        raise ConfigurationError("interval mesh needs at least one cell per region")
    if not (0.0 < split < 1.0):
        raise ConfigurationError(f"split must lie strictly inside (0, 1), got {split}")
    x_left = np.linspace(0.0, split, n_healthy + 1)
    x_right = np.linspace(split, 1.0, n_damaged + 1)
    coords = np.concatenate([x_left, x_right[1:]])
    vertices = coords.reshape(-1, 1)
    cells = np.column_stack([np.arange(len(coords) - 1), np.arange(1, len(coords))])
    regions = np.where(np.arange(cells.shape[0]) < n_healthy,
                       Region.HEALTHY, Region.DAMAGED)
    interface, boundary = _build_facets(vertices, cells, regions, dim=1)
    return Mesh(dim=1, vertices=vertices, cells=cells, cell_regions=regions,
                interface_facets=interface, boundary_facets=boundary,
                case_tag=CaseTag.BOTH_REACH_BOUNDARY)


def _structured_triangles(nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    """Vertices and triangles of an nx-by-ny grid on the unit square.

    Each grid square is cut along its lower-left to upper-right diagonal;
    vertex (i, j) has index j*(nx+1) + i.
    """
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.column_stack([gx.ravel(), gy.ravel()])
    cells = []
    for j in range(ny):
        for i in range(nx):
            v00 = j * (nx + 1) + i
            v10 = v00 + 1
            v01 = v00 + (nx + 1)
            v11 = v01 + 1
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return vertices, np.array(cells, dtype=int)


def build_split_rectangle_mesh(nx: int, ny: int, split: float) -> Mesh:
    """Structured triangulation of the unit square split by the line x = split.

    The split must align with the grid: split*nx has to be an integer (within
    1e-12), with at least one cell column on each side.
    """
    if nx < 2 or ny < 1:
        raise ConfigurationError("split rectangle needs nx >= 2 and ny >= 1")
    if not (0.0 < split < 1.0):
        raise ConfigurationError(f"split must lie strictly inside (0, 1), got {split}")
    col = split * nx
    if abs(col - round(col)) > 1e-12:
        raise ConfigurationError(
            f"split {split} does not align with the grid: split*nx = {col} is not integral")
    col = int(round(col))
    if not (1 <= col <= nx - 1):
        raise ConfigurationError("split leaves an empty region")
    vertices, cells = _structured_triangles(nx, ny)
    centroids_x = vertices[cells, 0].mean(axis=1)
    regions = np.where(centroids_x < split, Region.HEALTHY, Region.DAMAGED)
    interface, boundary = _build_facets(vertices, cells, regions, dim=2)
    return Mesh(dim=2, vertices=vertices, cells=cells, cell_regions=regions,
                interface_facets=interface, boundary_facets=boundary,
                case_tag=CaseTag.BOTH_REACH_BOUNDARY)


def build_inclusion_mesh(n: int, boxes) -> Mesh:
    """Unit-square triangulation with damaged rectangles strictly inside.

    Parameters
    ----------
    n : int
        Grid resolution (n-by-n squares), n >= 3.
    boxes : tuple or list of tuples
        Each box is (i0, i1, j0, j1) in grid-cell indices: squares with
        i0 <= i < i1 and j0 <= j < j1 are damaged.  Boxes must be strictly
        inside the grid and pairwise disjoint.
    """
    if n < 3:
        raise ConfigurationError("inclusion mesh needs n >= 3")
    boxes = list(boxes)
    if boxes and np.isscalar(boxes[0]):
        boxes = [tuple(boxes)]
    boxes = [tuple(int(v) for v in box) for box in boxes]
    if not boxes:
        raise ConfigurationError("inclusion mesh needs at least one box")
    claimed: set[tuple[int, int]] = set()
    for box in boxes:
        if len(box) != 4:
            raise ConfigurationError(f"box must be (i0, i1, j0, j1), got {box}")
        i0, i1, j0, j1 = box
        if not (i0 < i1 and j0 < j1):
            raise ConfigurationError(f"box {box} is empty")
        if not (1 <= i0 and i1 <= n - 1 and 1 <= j0 and j1 <= n - 1):
            raise ConfigurationError(
                f"box {box} is not strictly inside the {n}x{n} grid")
        squares = {(i, j) for i in range(i0, i1) for j in range(j0, j1)}
        if claimed & squares:
            raise ConfigurationError("inclusion boxes overlap")
        claimed |= squares
    vertices, cells = _structured_triangles(n, n)
    regions = np.full(cells.shape[0], Region.HEALTHY, dtype=int)
    for i, j in claimed:
        base = 2 * (j * n + i)
        regions[base] = Region.DAMAGED
        regions[base + 1] = Region.DAMAGED
    interface, boundary = _build_facets(vertices, cells, regions, dim=2)
    return Mesh(dim=2, vertices=vertices, cells=cells, cell_regions=regions,
                interface_facets=interface, boundary_facets=boundary,
                case_tag=CaseTag.ENCLOSED_INCLUSION)


def validate_mesh(mesh: Mesh) -> MeshDiagnostics:
    """Check mesh invariants and return a diagnostics report.

    Never raises: every violated invariant contributes one entry to
    ``violations`` and flips ``ok`` to False.
    """
    violations: list[str] = []
    measures = mesh.cell_measures()
    if np.any(measures <= 0.0):
        violations.append("degenerate cell with nonpositive measure")

    adjacency = _facet_adjacency(mesh.cells, mesh.dim)
    boundary_facets = {f for f, owners in adjacency.items() if len(owners) == 1}
    marked = {f.vertices for f in mesh.boundary_facets}
    if marked != boundary_facets:
        violations.append("boundary markers do not cover exactly the one-cell facets")
    for facet in mesh.boundary_facets:
        owners = adjacency.get(facet.vertices, [])
        if len(owners) == 1:
            region = mesh.cell_regions[owners[0]]
            expected = (BoundaryMarker.DIRICHLET_HEALTHY
                        if region == Region.HEALTHY
                        else BoundaryMarker.DIRICHLET_DAMAGED)
            if facet.marker != expected:
                violations.append(
                    f"boundary facet {facet.vertices} marked {facet.marker.name}, "
                    f"adjacent cell is {Region(region).name}")

    expected_interface = set()
    for facet, owners in adjacency.items():
        if len(owners) == 2:
            r0, r1 = mesh.cell_regions[owners[0]], mesh.cell_regions[owners[1]]
            if r0 != r1:
                expected_interface.add(facet)
    stored_interface = {f.vertices for f in mesh.interface_facets}
    if stored_interface != expected_interface:
        violations.append("stored interface facets do not match region adjacency")

    for facet in mesh.interface_facets:
        if not (0 <= facet.healthy_cell < mesh.n_cells
                and mesh.cell_regions[facet.healthy_cell] == Region.HEALTHY):
            violations.append(f"interface facet {facet.vertices}: bad healthy cell")
            continue
        if not (0 <= facet.damaged_cell < mesh.n_cells
                and mesh.cell_regions[facet.damaged_cell] == Region.DAMAGED):
            violations.append(f"interface facet {facet.vertices}: bad damaged cell")
            continue
        normal = np.asarray(facet.normal, dtype=float)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-12:
            violations.append(f"interface facet {facet.vertices}: normal not unit")
        if mesh.dim == 2:
            tangent = (mesh.vertices[facet.vertices[1]]
                       - mesh.vertices[facet.vertices[0]])
            if abs(np.dot(normal, tangent)) > 1e-12 * np.linalg.norm(tangent):
                violations.append(
                    f"interface facet {facet.vertices}: normal not orthogonal")
        ch = _cell_centroid(mesh.vertices, mesh.cells[facet.healthy_cell])
        cd = _cell_centroid(mesh.vertices, mesh.cells[facet.damaged_cell])
        if np.dot(normal, ch - cd) <= 0.0:
            violations.append(
                f"interface facet {facet.vertices}: normal points into the damaged side")

    n_dirichlet_damaged = sum(
        1 for f in mesh.boundary_facets if f.marker == BoundaryMarker.DIRICHLET_DAMAGED)
    enclosed = mesh.case_tag == CaseTag.ENCLOSED_INCLUSION
    if enclosed != (n_dirichlet_damaged == 0):
        violations.append(
            f"case tag {mesh.case_tag.value} inconsistent with "
            f"{n_dirichlet_damaged} damaged-side boundary facets")

    # tiling checks: total measure and Euler characteristic of a disk-like domain
    total = float(measures.sum())
    if abs(total - 1.0) > 1e-12:
        violations.append(f"cell measures sum to {total}, expected 1")
    if mesh.dim == 1:
        euler = mesh.n_vertices - mesh.n_cells
    else:
        euler = mesh.n_vertices - len(adjacency) + mesh.n_cells
    if euler != 1:
        violations.append(f"Euler characteristic {euler}, expected 1")

    return MeshDiagnostics(
        ok=not violations,
        violations=violations,
        n_vertices=mesh.n_vertices,
        n_cells=mesh.n_cells,
        n_interface_facets=len(mesh.interface_facets),
        euler_characteristic=euler,
        min_cell_measure=float(measures.min()),
        max_cell_measure=float(measures.max()),
        measure_healthy=mesh.region_measure(Region.HEALTHY),
        measure_damaged=mesh.region_measure(Region.DAMAGED),
        n_dirichlet_healthy=sum(1 for f in mesh.boundary_facets
                                if f.marker == BoundaryMarker.DIRICHLET_HEALTHY),
        n_dirichlet_damaged=n_dirichlet_damaged,
    )
