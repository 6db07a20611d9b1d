"""P1 finite elements on two-region meshes with duplicated interface dofs.

The broken potential space carries three dof families laid out in one
global vector:

* ``v``          transmembrane potential, one dof per healthy-region vertex
                 that is not on the healthy Dirichlet boundary,
* ``u_healthy``  healthy-side tissue potential, same vertex set as ``v``,
* ``u_damaged``  damaged-side tissue potential, interface vertices
                 duplicated so the jump across the interface is a real
                 unknown.

Dirichlet vertices carry no dofs; where the interface reaches the outer
boundary its endpoint vertices are Dirichlet on both sides, so the jump
unknowns live at the interior interface vertices.  The jump at an
interface vertex is healthy-side value minus damaged-side value.  All
orderings are sorted by vertex index, so assembly is deterministic and
runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, NumericBreakdownError
from .mesh import BoundaryMarker, CaseTag, Mesh, Region
from .model import ConductivityField, conductivity_field
from .sparse_linalg import (LinearSystem, cg_solve,
                            smallest_generalized_eigenvalue)

STIFFNESS_BLOCKS = ("v-v", "v-u", "u-u")
LOAD_FAMILIES = ("v", "u_healthy", "u_damaged")
INTERFACE_TARGETS = ("jump", "healthy_trace")


# --- dof layout ---------------------------------------------------------------

@dataclass(frozen=True)
class DofMap:
    """Dof families of the broken space and their global layout.

    The global solution vector is [v | u_healthy | u_damaged].  The ``v``
    and ``u_healthy`` families live on the same vertices, so
    ``healthy_vertices`` serves both.  ``jump_pairs`` holds, per interface
    vertex in sorted order, the local healthy-family dof and the local
    damaged-family dof whose difference is the jump there.
    """

    mesh: Mesh
    healthy_vertices: np.ndarray
    damaged_vertices: np.ndarray
    gamma_vertices: np.ndarray
    jump_pairs: np.ndarray
    healthy_index: np.ndarray
    damaged_index: np.ndarray

    @property
    def n_v(self) -> int:
        return len(self.healthy_vertices)

    @property
    def n_u_healthy(self) -> int:
        return len(self.healthy_vertices)

    @property
    def n_u_damaged(self) -> int:
        return len(self.damaged_vertices)

    @property
    def n_gamma(self) -> int:
        return len(self.gamma_vertices)

    @property
    def n_u(self) -> int:
        """Size of the combined tissue-potential block [u_healthy | u_damaged]."""
        return self.n_u_healthy + self.n_u_damaged

    @property
    def n_total(self) -> int:
        return self.n_v + self.n_u

    @property
    def u_healthy_offset(self) -> int:
        """Offset of u_healthy inside the global vector."""
        return self.n_v

    @property
    def u_damaged_offset(self) -> int:
        return self.n_v + self.n_u_healthy

    def family_vertices(self, family: str) -> np.ndarray:
        if family in ("v", "u_healthy"):
            return self.healthy_vertices
        if family == "u_damaged":
            return self.damaged_vertices
        raise ConfigurationError(f"unknown dof family {family!r}")

    def family_index(self, family: str) -> np.ndarray:
        """Vertex-to-local-dof map of a family (-1 where the vertex has no dof)."""
        if family in ("v", "u_healthy"):
            return self.healthy_index
        if family == "u_damaged":
            return self.damaged_index
        raise ConfigurationError(f"unknown dof family {family!r}")


def build_dof_map(mesh: Mesh) -> DofMap:
    """Enumerate the dof families of the broken space on a validated mesh."""
    healthy = mesh.region_vertices(Region.HEALTHY)
    damaged = mesh.region_vertices(Region.DAMAGED)
    fixed_h = set(mesh.dirichlet_vertices(BoundaryMarker.DIRICHLET_HEALTHY).tolist())
    fixed_d = set(mesh.dirichlet_vertices(BoundaryMarker.DIRICHLET_DAMAGED).tolist())
    fixed = fixed_h | fixed_d
    gamma = np.array([g for g in mesh.interface_vertices() if g not in fixed],
                     dtype=int)

    healthy_vertices = np.array([v for v in healthy if v not in fixed_h], dtype=int)
    damaged_vertices = np.array([v for v in damaged if v not in fixed_d], dtype=int)

    nv = mesh.n_vertices
    healthy_index = np.full(nv, -1, dtype=int)
    healthy_index[healthy_vertices] = np.arange(len(healthy_vertices))
    damaged_index = np.full(nv, -1, dtype=int)
    damaged_index[damaged_vertices] = np.arange(len(damaged_vertices))

    pairs = []
    for g in gamma:
        i_h = healthy_index[g]
        i_d = damaged_index[g]
        if i_h < 0 or i_d < 0:
            raise ConfigurationError(
                f"interface vertex {g} lost a dof; interface vertices must "
                "carry dofs on both sides")
        pairs.append((i_h, i_d))
    jump_pairs = np.array(pairs, dtype=int).reshape(len(gamma), 2)

    return DofMap(mesh=mesh, healthy_vertices=healthy_vertices,
                  damaged_vertices=damaged_vertices, gamma_vertices=gamma,
                  jump_pairs=jump_pairs, healthy_index=healthy_index,
                  damaged_index=damaged_index)


# --- element kernels ----------------------------------------------------------

def _region_cells(mesh: Mesh, region: Region) -> np.ndarray:
    return np.flatnonzero(mesh.cell_regions == region)

def _cell_gradients(mesh: Mesh, cell_ids: np.ndarray):
    """Measures and constant P1 basis gradients of the given cells.

    Returns (measures, grads) with grads of shape (n_cells, dim+1, dim).
    """
    cells = mesh.cells[cell_ids]
    coords = mesh.vertices[cells]
    if mesh.dim == 1:
        h = coords[:, 1, 0] - coords[:, 0, 0]
        if np.any(h == 0.0):
            raise ConfigurationError("degenerate 1D cell in assembly")
        grads = np.empty((len(cell_ids), 2, 1))
        grads[:, 0, 0] = -1.0 / h
        grads[:, 1, 0] = 1.0 / h
        return np.abs(h), grads
    d1 = coords[:, 1] - coords[:, 0]
    d2 = coords[:, 2] - coords[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det == 0.0):
        raise ConfigurationError("degenerate triangle in assembly")
    grads = np.empty((len(cell_ids), 3, 2))
    grads[:, 1, 0] = d2[:, 1] / det
    grads[:, 1, 1] = -d2[:, 0] / det
    grads[:, 2, 0] = -d1[:, 1] / det
    grads[:, 2, 1] = d1[:, 0] / det
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    return 0.5 * np.abs(det), grads


def _scatter(mesh: Mesh, cell_ids: np.ndarray, local: np.ndarray,
             row_map: np.ndarray | None, col_map: np.ndarray | None,
             n_rows: int, n_cols: int) -> sp.csr_matrix:
    """Scatter per-cell local matrices into a CSR matrix.

    ``row_map``/``col_map`` translate vertex ids to dof ids (-1 drops the
    entry); None keeps raw vertex indexing.
    """
    cells = mesh.cells[cell_ids]
    n_loc = cells.shape[1]
    rows = np.repeat(cells, n_loc, axis=1).ravel()
    cols = np.tile(cells, (1, n_loc)).ravel()
    vals = local.ravel()
    if row_map is not None:
        rows = row_map[rows]
    if col_map is not None:
        cols = col_map[cols]
    keep = (rows >= 0) & (cols >= 0)
    out = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                        shape=(n_rows, n_cols))
    out.sum_duplicates()
    out.sort_indices()
    return out


def _resolve_block(mesh: Mesh, dofmap: DofMap, region: Region, block: str,
                   reduced: bool):
    """Row/col dof maps and shape for one stiffness/mass block."""
    if block not in STIFFNESS_BLOCKS:
        raise ConfigurationError(
            f"unknown block {block!r}; expected one of {STIFFNESS_BLOCKS}")
    if block in ("v-v", "v-u") and region != Region.HEALTHY:
        raise ConfigurationError(
            f"block {block!r} lives on the healthy region, got {region!r}")
    if not reduced:
        n = mesh.n_vertices
        return None, None, n, n
    if region == Region.HEALTHY:
        fam = dofmap.healthy_index
        n = dofmap.n_v
    else:
        fam = dofmap.damaged_index
        n = dofmap.n_u_damaged
    return fam, fam, n, n


def assemble_stiffness(mesh: Mesh, dofmap: DofMap, sigma: ConductivityField,
                       region: Region, block: str,
                       reduced: bool = True) -> sp.csr_matrix:
    """Stiffness matrix of one region: entries of cell integrals sigma grad
    phi_i . grad phi_j.

    ``block`` names the dof families the matrix acts between ("v-v", "v-u"
    or "u-u"); the healthy-side families share vertices, so those three
    blocks coincide entrywise and the name only fixes bookkeeping intent.
    ``reduced=False`` returns the raw all-vertex matrix, used by the
    partition-of-unity and kernel checks.
    """
    if sigma.region != region:
        raise ConfigurationError(
            f"conductivity is for {sigma.region!r}, requested {region!r}")
    row_map, col_map, n_rows, n_cols = _resolve_block(mesh, dofmap, region,
                                                      block, reduced)
    cell_ids = _region_cells(mesh, region)
    measures, grads = _cell_gradients(mesh, cell_ids)
    coeff = sigma.values[cell_ids] * measures
    local = coeff[:, None, None] * np.einsum("cik,cjk->cij", grads, grads)
    return _scatter(mesh, cell_ids, local, row_map, col_map, n_rows, n_cols)


def assemble_mass(mesh: Mesh, dofmap: DofMap, region: Region,
                  lumped: bool = False, reduced: bool = True) -> sp.csr_matrix:
    """P1 mass matrix of one region (consistent, or row-sum lumped diagonal).

    The reduced matrix lives on the region's dof family (healthy side: the
    shared v/u_healthy family; damaged side: u_damaged).  The raw variant
    (``reduced=False``) keeps every region vertex and satisfies
    1^T M 1 = |region| exactly up to rounding.
    """
    row_map, col_map, n_rows, n_cols = _resolve_block(mesh, dofmap, region,
                                                      "u-u", reduced)
    cell_ids = _region_cells(mesh, region)
    measures, _ = _cell_gradients(mesh, cell_ids)
    n_loc = mesh.dim + 1
    base = (np.ones((n_loc, n_loc)) + np.eye(n_loc)) / (n_loc * (n_loc + 1))
    local = measures[:, None, None] * base[None, :, :]
    if lumped:
        diag = local.sum(axis=2)
        local = np.zeros_like(local)
        local[:, np.arange(n_loc), np.arange(n_loc)] = diag
    return _scatter(mesh, cell_ids, local, row_map, col_map, n_rows, n_cols)


# --- interface operators --------------------------------------------------------

def assemble_interface_mass(mesh: Mesh, dofmap: DofMap) -> sp.csr_matrix:
    """Facet mass matrix on the interface, indexed by sorted interface vertex.

    1D interfaces are single points of measure one; 2D interfaces get the
    consistent P1 edge mass.
    """
    n = dofmap.n_gamma
    gamma_index = np.full(mesh.n_vertices, -1, dtype=int)
    gamma_index[dofmap.gamma_vertices] = np.arange(n)
    rows, cols, vals = [], [], []
    # facet vertices without a jump dof (interface endpoints on the outer
    # Dirichlet boundary) are skipped: the jump vanishes there
    for facet in mesh.interface_facets:
        verts = facet.vertices
        measure = mesh.facet_measure(verts)
        if len(verts) == 1:
            g = gamma_index[verts[0]]
            if g < 0:
                continue
            rows.append(g)
            cols.append(g)
            vals.append(measure)
            continue
        a, b = (gamma_index[v] for v in verts)
        for (i, j, w) in ((a, a, 2.0), (b, b, 2.0), (a, b, 1.0), (b, a, 1.0)):
            if i < 0 or j < 0:
                continue
            rows.append(i)
            cols.append(j)
            vals.append(measure * w / 6.0)
    out = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    out.sum_duplicates()
    out.sort_indices()
    return out


def assemble_jump_operator(dofmap: DofMap) -> sp.csr_matrix:
    """Jump map J from the tissue block [u_healthy | u_damaged] to nodal
    interface jumps, healthy-side value minus damaged-side value."""
    n = dofmap.n_gamma
    rows = np.repeat(np.arange(n), 2)
    cols = np.empty(2 * n, dtype=int)
    cols[0::2] = dofmap.jump_pairs[:, 0]
    cols[1::2] = dofmap.n_u_healthy + dofmap.jump_pairs[:, 1]
    vals = np.tile([1.0, -1.0], n)
    out = sp.csr_matrix((vals, (rows, cols)), shape=(n, dofmap.n_u))
    out.sort_indices()
    return out


def assemble_interface_jump_mass(mesh: Mesh, dofmap: DofMap) -> sp.csr_matrix:
    """Jump coupling G = J^T M_Gamma J on the tissue block, so that
    Phi^T G U integrates [U][Phi] over the interface."""
    j = assemble_jump_operator(dofmap)
    m_gamma = assemble_interface_mass(mesh, dofmap)
    out = (j.T @ m_gamma @ j).tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


# --- load vectors ----------------------------------------------------------------

def _vertex_quadrature_weights(mesh: Mesh, region: Region) -> np.ndarray:
    """Vertex-rule weights over all mesh vertices: |cell|/(dim+1) summed
    over the region's cells at each vertex."""
    cell_ids = _region_cells(mesh, region)
    measures, _ = _cell_gradients(mesh, cell_ids)
    weights = np.zeros(mesh.n_vertices)
    share = measures / (mesh.dim + 1)
    np.add.at(weights, mesh.cells[cell_ids].ravel(),
              np.repeat(share, mesh.dim + 1))
    return weights


def assemble_volume_load(mesh: Mesh, dofmap: DofMap, f, region: Region,
                         family: str, t: float = 0.0,
                         reduced: bool = True) -> np.ndarray:
    """Load vector of f(., t) against region basis functions, vertex rule.

    ``f`` is called as f(points, t) with points of shape (n, dim).  The
    reduced vector lives on the requested dof family; ``reduced=False``
    returns the raw all-vertex vector.
    """
    if family not in LOAD_FAMILIES:
        raise ConfigurationError(
            f"unknown family {family!r}; expected one of {LOAD_FAMILIES}")
    expected = Region.HEALTHY if family in ("v", "u_healthy") else Region.DAMAGED
    if region != expected:
        raise ConfigurationError(
            f"family {family!r} lives on {expected!r}, got {region!r}")
    weights = _vertex_quadrature_weights(mesh, region)
    support = np.flatnonzero(weights != 0.0)
    values = np.asarray(f(mesh.vertices[support], t), dtype=float)
    if values.shape != (len(support),):
        raise ConfigurationError(
            f"volume source returned shape {values.shape}, "
            f"expected ({len(support)},)")
    if not np.all(np.isfinite(values)):
        raise NumericBreakdownError("volume source evaluated non-finite")
    raw = np.zeros(mesh.n_vertices)
    raw[support] = weights[support] * values
    if not reduced:
        return raw
    fam = dofmap.family_index(family)
    out = np.zeros(len(dofmap.family_vertices(family)))
    has_dof = fam[support] >= 0
    out[fam[support[has_dof]]] = raw[support[has_dof]]
    return out


def interface_load_from_values(dofmap: DofMap, m_gamma: sp.csr_matrix,
                               values: np.ndarray, target: str) -> np.ndarray:
    """Interface load from nodal values on the interface (sorted vertex
    order), returned on the tissue block [u_healthy | u_damaged].

    target="jump" pairs against jump test functions (J^T M_Gamma values);
    target="healthy_trace" pairs against healthy-side traces only.
    """
    if target not in INTERFACE_TARGETS:
        raise ConfigurationError(
            f"unknown target {target!r}; expected one of {INTERFACE_TARGETS}")
    values = np.asarray(values, dtype=float)
    if values.shape != (dofmap.n_gamma,):
        raise ConfigurationError(
            f"interface values shape {values.shape}, "
            f"expected ({dofmap.n_gamma},)")
    weighted = m_gamma @ values
    out = np.zeros(dofmap.n_u)
    out[dofmap.jump_pairs[:, 0]] += weighted
    if target == "jump":
        out[dofmap.n_u_healthy + dofmap.jump_pairs[:, 1]] -= weighted
    return out


def assemble_interface_load(mesh: Mesh, dofmap: DofMap, g, target: str,
                            t: float = 0.0) -> np.ndarray:
    """Interface load of g(., t) against jump or healthy-trace test
    functions; g is evaluated at interface vertices and integrated with the
    consistent facet mass."""
    points = mesh.vertices[dofmap.gamma_vertices]
    values = np.asarray(g(points, t), dtype=float)
    if values.shape != (dofmap.n_gamma,):
        raise ConfigurationError(
            f"interface source returned shape {values.shape}, "
            f"expected ({dofmap.n_gamma},)")
    if not np.all(np.isfinite(values)):
        raise NumericBreakdownError("interface source evaluated non-finite")
    m_gamma = assemble_interface_mass(mesh, dofmap)
    return interface_load_from_values(dofmap, m_gamma, values, target)


# --- operator bundle --------------------------------------------------------------

@dataclass(frozen=True)
class Operators:
    """All matrices one simulation needs, assembled once per mesh."""

    dofmap: DofMap
    stiffness_intra: sp.csr_matrix
    stiffness_extra: sp.csr_matrix
    stiffness_intra_extra: sp.csr_matrix
    stiffness_damaged: sp.csr_matrix
    mass_healthy: sp.csr_matrix
    mass_healthy_lumped: sp.csr_matrix
    mass_damaged: sp.csr_matrix
    interface_mass: sp.csr_matrix
    jump_operator: sp.csr_matrix
    interface_jump_mass: sp.csr_matrix


def build_operators(mesh: Mesh, dofmap: DofMap, conductivities) -> Operators:
    a_i = assemble_stiffness(mesh, dofmap, conductivities.intra,
                             Region.HEALTHY, "u-u")
    a_e = assemble_stiffness(mesh, dofmap, conductivities.extra,
                             Region.HEALTHY, "u-u")
    a_ie = (a_i + a_e).tocsr()
    a_ie.sort_indices()
    a_d = assemble_stiffness(mesh, dofmap, conductivities.damaged,
                             Region.DAMAGED, "u-u")
    return Operators(
        dofmap=dofmap,
        stiffness_intra=a_i,
        stiffness_extra=a_e,
        stiffness_intra_extra=a_ie,
        stiffness_damaged=a_d,
        mass_healthy=assemble_mass(mesh, dofmap, Region.HEALTHY),
        mass_healthy_lumped=assemble_mass(mesh, dofmap, Region.HEALTHY,
                                          lumped=True),
        mass_damaged=assemble_mass(mesh, dofmap, Region.DAMAGED),
        interface_mass=assemble_interface_mass(mesh, dofmap),
        jump_operator=assemble_jump_operator(dofmap),
        interface_jump_mass=assemble_interface_jump_mass(mesh, dofmap),
    )


# --- prescribed-jump elimination ----------------------------------------------------

@dataclass(frozen=True)
class JumpElimination:
    """Change of variables U = T u_hat + R s enforcing nodal jumps J U = s.

    The damaged-side interface dofs are eliminated: each equals its
    healthy partner minus the prescribed jump.  T spans the zero-jump
    subspace (J T = 0 exactly), R carries the jump data, and ``keep``
    lists the tissue-block indices that remain unknowns, in order.
    """

    keep: np.ndarray
    t_matrix: sp.csr_matrix
    r_matrix: sp.csr_matrix


def build_jump_elimination(dofmap: DofMap) -> JumpElimination:
    n_u = dofmap.n_u
    eliminated = dofmap.n_u_healthy + dofmap.jump_pairs[:, 1]
    keep_mask = np.ones(n_u, dtype=bool)
    keep_mask[eliminated] = False
    keep = np.flatnonzero(keep_mask)
    place = np.full(n_u, -1, dtype=int)
    place[keep] = np.arange(len(keep))

    rows = list(keep)
    cols = list(place[keep])
    vals = [1.0] * len(keep)
    for g in range(dofmap.n_gamma):
        healthy_dof = dofmap.jump_pairs[g, 0]
        rows.append(dofmap.n_u_healthy + dofmap.jump_pairs[g, 1])
        cols.append(place[healthy_dof])
        vals.append(1.0)
    t_matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n_u, len(keep)))
    t_matrix.sort_indices()

    r_rows = dofmap.n_u_healthy + dofmap.jump_pairs[:, 1]
    r_matrix = sp.csr_matrix((-np.ones(dofmap.n_gamma),
                              (r_rows, np.arange(dofmap.n_gamma))),
                             shape=(n_u, dofmap.n_gamma))
    r_matrix.sort_indices()
    return JumpElimination(keep=keep, t_matrix=t_matrix, r_matrix=r_matrix)


def solve_constrained_jump(matrix: sp.csr_matrix, rhs: np.ndarray,
                           jump_values: np.ndarray,
                           elimination: JumpElimination,
                           tol: float = 1e-10,
                           maxiter: int | None = None) -> np.ndarray:
    """Solve a tissue-block system subject to prescribed nodal jumps.

    Minimizes the quadratic form of ``matrix`` under J U = jump_values by
    eliminating the damaged-side interface dofs, solves the reduced SPD
    system with CG, and returns the full tissue-block vector.  The jump
    constraint holds exactly by construction.
    """
    t = elimination.t_matrix
    r = elimination.r_matrix
    jump_values = np.asarray(jump_values, dtype=float)
    particular = r @ jump_values
    reduced_matrix = (t.T @ matrix @ t).tocsr()
    reduced_matrix.sort_indices()
    reduced_rhs = t.T @ (rhs - matrix @ particular)
    solution = cg_solve(LinearSystem(reduced_matrix, reduced_rhs, tol=tol,
                                     maxiter=maxiter)).x
    return t @ solution + particular


# --- mesh nesting -----------------------------------------------------------------

def build_prolongation(coarse_mesh: Mesh, coarse_map: DofMap,
                       fine_mesh: Mesh, fine_map: DofMap,
                       family: str) -> sp.csr_matrix:
    """P1 prolongation of one dof family from a coarse mesh to a nested
    refinement: entry (f, c) is the coarse hat of dof c evaluated at the
    fine dof vertex f.  Point location is restricted to the family's
    region, so duplicated interface dofs pick up the correct side.
    """
    region = (Region.DAMAGED if family == "u_damaged" else Region.HEALTHY)
    coarse_cells = _region_cells(coarse_mesh, region)
    cells = coarse_mesh.cells[coarse_cells]
    coords = coarse_mesh.vertices[cells]
    points = fine_mesh.vertices[fine_map.family_vertices(family)]
    coarse_index = coarse_map.family_index(family)
    n_fine = len(points)
    n_coarse = len(coarse_map.family_vertices(family))

    rows, cols, vals = [], [], []
    unassigned = np.arange(n_fine)
    geom_tol = 1e-12
    for c in range(len(coarse_cells)):
        if len(unassigned) == 0:
            break
        p = points[unassigned]
        if coarse_mesh.dim == 1:
            x0, x1 = coords[c, 0, 0], coords[c, 1, 0]
            lam1 = (p[:, 0] - x0) / (x1 - x0)
            bary = np.stack([1.0 - lam1, lam1], axis=1)
        else:
            v0 = coords[c, 0]
            d1 = coords[c, 1] - v0
            d2 = coords[c, 2] - v0
            det = d1[0] * d2[1] - d1[1] * d2[0]
            rel = p - v0
            lam1 = (rel[:, 0] * d2[1] - rel[:, 1] * d2[0]) / det
            lam2 = (d1[0] * rel[:, 1] - d1[1] * rel[:, 0]) / det
            bary = np.stack([1.0 - lam1 - lam2, lam1, lam2], axis=1)
        inside = np.all(bary >= -geom_tol, axis=1)
        hit = unassigned[inside]
        hit_bary = bary[inside]
        for local in range(coarse_mesh.dim + 1):
            dof = coarse_index[cells[c, local]]
            if dof < 0:
                continue
            weight = hit_bary[:, local]
            significant = weight > geom_tol
            rows.extend(hit[significant].tolist())
            cols.extend([dof] * int(np.sum(significant)))
            vals.extend(weight[significant].tolist())
        unassigned = unassigned[~inside]
    if len(unassigned) > 0:
        raise ConfigurationError(
            f"{len(unassigned)} fine dofs of family {family!r} lie outside "
            "every coarse cell; the meshes are not nested")
    out = sp.csr_matrix((vals, (rows, cols)), shape=(n_fine, n_coarse))
    out.sum_duplicates()
    out.sort_indices()
    return out


def build_tissue_prolongation(coarse_mesh: Mesh, coarse_map: DofMap,
                              fine_mesh: Mesh, fine_map: DofMap) -> sp.csr_matrix:
    """Block-diagonal prolongation of the whole tissue block."""
    p_h = build_prolongation(coarse_mesh, coarse_map, fine_mesh, fine_map,
                             "u_healthy")
    p_d = build_prolongation(coarse_mesh, coarse_map, fine_mesh, fine_map,
                             "u_damaged")
    out = sp.block_diag([p_h, p_d], format="csr")
    out.sort_indices()
    return out


# --- broken Poincare constant --------------------------------------------------------

def broken_poincare_constant(mesh: Mesh, dofmap: DofMap,
                             include_jump: bool = True,
                             tol: float = 1e-8) -> float:
    """Sharp discrete constant C with ||U||^2 over the whole domain bounded
    by C times (gradient energy on both regions + jump mass on the
    interface).

    Computed as 1/lambda_min of the generalized eigenvalue problem pairing
    the unit-coefficient broken stiffness (plus jump coupling when
    ``include_jump``) against the broken mass.  Dropping the jump term is
    only admissible when both regions reach the outer boundary, otherwise
    damaged-side constants make the right side degenerate.
    """
    if not include_jump and mesh.case_tag != CaseTag.BOTH_REACH_BOUNDARY:
        raise ConfigurationError(
            "the jump term can only be dropped when both regions reach the "
            "outer boundary")
    unit_h = conductivity_field(mesh, Region.HEALTHY, 1.0)
    unit_d = conductivity_field(mesh, Region.DAMAGED, 1.0)
    s_h = assemble_stiffness(mesh, dofmap, unit_h, Region.HEALTHY, "u-u")
    s_d = assemble_stiffness(mesh, dofmap, unit_d, Region.DAMAGED, "u-u")
    energy = sp.block_diag([s_h, s_d], format="csr")
    if include_jump:
        energy = (energy + assemble_interface_jump_mass(mesh, dofmap)).tocsr()
    energy.sort_indices()
    mass = sp.block_diag([assemble_mass(mesh, dofmap, Region.HEALTHY),
                          assemble_mass(mesh, dofmap, Region.DAMAGED)],
                         format="csr")
    lam, _ = smallest_generalized_eigenvalue(energy, mass, tol=tol)
    if not np.isfinite(lam) or lam <= 0.0:
        raise NumericBreakdownError(
            f"broken Poincare eigenvalue degenerate: {lam!r}")
    return 1.0 / lam
