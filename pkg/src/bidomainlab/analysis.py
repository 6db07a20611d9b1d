"""Verification laboratory for the coupled tissue model.

This module turns the well-posedness machinery behind the solver into
executable checks: the auxiliary source-shift problem and the interface
charge it induces, the jump-lifting operator and the symmetric coercive
bilinear form built from it, the discrete energy ledger, manufactured
convergence studies, perturbation stability, and the stiff-coupling
limit.  Everything here is assembled from the same discrete operators
the stepper uses, but recombined along independent routes so that
agreement is evidence rather than tautology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .discretization import (DofMap, JumpElimination, Operators,
                             _vertex_quadrature_weights, assemble_stiffness,
                             build_dof_map, build_jump_elimination,
                             build_operators, solve_constrained_jump)
from .errors import ConfigurationError
from .manufactured import ManufacturedCase
from .mesh import Mesh, Region
from .model import (Conductivities, IonicModel, composed_lipschitz_bound,
                    conductivity_field, make_conductivities)
from .sparse_linalg import (LinearSystem, cg_solve,
                            smallest_generalized_eigenvalue)
from .stepper import (InitialData, SourceSet, State, StepperConfig,
                      Trajectory, run)


@dataclass
class Workspace:
    """Static discrete operators shared by the analysis routines."""

    mesh: Mesh
    dofmap: DofMap
    operators: Operators
    elimination: JumpElimination
    stiff_unit_healthy: sp.csr_matrix
    stiff_unit_damaged: sp.csr_matrix
    healthy_weights: np.ndarray
    damaged_weights: np.ndarray

    @property
    def healthy_points(self) -> np.ndarray:
        return self.mesh.vertices[self.dofmap.healthy_vertices]

    @property
    def damaged_points(self) -> np.ndarray:
        return self.mesh.vertices[self.dofmap.damaged_vertices]

    @property
    def gamma_points(self) -> np.ndarray:
        return self.mesh.vertices[self.dofmap.gamma_vertices]


def build_workspace(mesh: Mesh, conductivities: Conductivities) -> Workspace:
    dofmap = build_dof_map(mesh)
    operators = build_operators(mesh, dofmap, conductivities)
    weights = _vertex_quadrature_weights(mesh, Region.HEALTHY)
    weights_d = _vertex_quadrature_weights(mesh, Region.DAMAGED)
    return Workspace(
        mesh=mesh, dofmap=dofmap, operators=operators,
        elimination=build_jump_elimination(dofmap),
        stiff_unit_healthy=assemble_stiffness(
            mesh, dofmap, conductivity_field(mesh, Region.HEALTHY, 1.0),
            Region.HEALTHY, "u-u"),
        stiff_unit_damaged=assemble_stiffness(
            mesh, dofmap, conductivity_field(mesh, Region.DAMAGED, 1.0),
            Region.DAMAGED, "u-u"),
        healthy_weights=weights[dofmap.healthy_vertices],
        damaged_weights=weights_d[dofmap.damaged_vertices],
    )


# ---------------------------------------------------------------------------
# source shift and the interface charge it induces


def solve_source_shift(workspace: Workspace, stimulus_intra, stimulus_extra,
                       t: float = 0.0, tol: float = 1e-12) -> np.ndarray:
    """Auxiliary healthy-region field absorbing the stimulus difference.

    Solves the elliptic problem with the summed conductivity, homogeneous
    Dirichlet data on the outer healthy boundary, and the natural
    (zero-flux) condition on the interface; conceptually the field is
    extended by zero into the damaged region, so its interface jump is
    its healthy-side trace.  Returns nodal values on the v dofs.
    """
    points = workspace.healthy_points
    rhs = np.zeros(workspace.dofmap.n_v)
    if stimulus_intra is not None:
        rhs += workspace.healthy_weights * np.asarray(
            stimulus_intra(points, t), dtype=float)
    if stimulus_extra is not None:
        rhs -= workspace.healthy_weights * np.asarray(
            stimulus_extra(points, t), dtype=float)
    system = LinearSystem(workspace.operators.stiffness_intra_extra, rhs,
                          tol=tol)
    return cg_solve(system).x


def interface_charge_source(jump_levels: np.ndarray, capacitance: float,
                            conductance: float, dt: float) -> np.ndarray:
    """Interface charge induced by a time-dependent shift field.

    Given nodal interface jumps at consecutive time levels (rows 0..N),
    returns, for each level n >= 1, the source

        q^n = -capacitance * (jump^n - jump^{n-1}) / dt - conductance * jump^n

    using the same backward difference as the stepper, which is what makes
    the shifted scheme algebraically equivalent to the direct one.
    """
    jumps = np.asarray(jump_levels, dtype=float)
    if jumps.ndim != 2 or jumps.shape[0] < 2:
        raise ConfigurationError(
            "interface charge needs jumps at two or more time levels")
    if dt <= 0.0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    diff = (jumps[1:] - jumps[:-1]) / dt
    return -capacitance * diff - conductance * jumps[1:]


# ---------------------------------------------------------------------------
# lifting operator and the bilinear form


@dataclass
class LiftingSolution:
    """Broken field with prescribed interface jump and its norms."""

    field: np.ndarray
    potential_input: np.ndarray
    jump_input: np.ndarray
    grad_healthy_sq: float
    grad_damaged_sq: float
    l2_healthy_sq: float
    l2_damaged_sq: float
    jump_l2_sq: float

    @property
    def broken_norm_sq(self) -> float:
        """Squared broken H1 norm plus the interface jump term."""
        return (self.grad_healthy_sq + self.grad_damaged_sq
                + self.l2_healthy_sq + self.l2_damaged_sq + self.jump_l2_sq)


def solve_lifting(workspace: Workspace, potential: np.ndarray,
                  jump_data: np.ndarray, tol: float = 1e-12) -> LiftingSolution:
    """Broken elliptic solve with the jump constrained to the given data.

    The healthy block carries the summed conductivity and is loaded by the
    intracellular stiffness applied to the potential input; the damaged
    block is purely diffusive.  The jump constraint is eliminated exactly,
    so the returned field satisfies it nodewise by construction.
    """
    dm = workspace.dofmap
    ops = workspace.operators
    potential = np.asarray(potential, dtype=float)
    jump_data = np.asarray(jump_data, dtype=float)
    if potential.shape != (dm.n_v,):
        raise ConfigurationError(
            f"potential input has shape {potential.shape}, expected ({dm.n_v},)")
    if jump_data.shape != (dm.n_gamma,):
        raise ConfigurationError(
            f"jump input has shape {jump_data.shape}, expected ({dm.n_gamma},)")
    k_u = sp.block_diag([ops.stiffness_intra_extra, ops.stiffness_damaged],
                        format="csr")
    rhs = np.zeros(dm.n_u)
    rhs[:dm.n_u_healthy] -= ops.stiffness_intra @ potential
    field = solve_constrained_jump(k_u, rhs, jump_data, workspace.elimination,
                                   tol=tol)
    f_h = field[:dm.n_u_healthy]
    f_d = field[dm.n_u_healthy:]
    jump = f_h[dm.jump_pairs[:, 0]] - f_d[dm.jump_pairs[:, 1]]
    return LiftingSolution(
        field=field, potential_input=potential, jump_input=jump_data,
        grad_healthy_sq=float(f_h @ (workspace.stiff_unit_healthy @ f_h)),
        grad_damaged_sq=float(f_d @ (workspace.stiff_unit_damaged @ f_d)),
        l2_healthy_sq=float(f_h @ (ops.mass_healthy @ f_h)),
        l2_damaged_sq=float(f_d @ (ops.mass_damaged @ f_d)),
        jump_l2_sq=float(jump @ (ops.interface_mass @ jump)),
    )


def two_stage_lifting(workspace: Workspace, potential: np.ndarray,
                      jump_data: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Independent oracle for the lifting: carry the jump first, correct after.

    Stage one extends the jump data into the healthy region by a Dirichlet
    solve with the summed conductivity (zero in the damaged region), which
    already has the right jump.  Stage two adds a zero-jump correction
    solving the residual problem.  By uniqueness the sum must equal the
    single constrained solve.
    """
    dm = workspace.dofmap
    ops = workspace.operators
    stage_one = np.zeros(dm.n_u)
    stage_one[:dm.n_u_healthy] = dirichlet_interface_extension(
        workspace, np.asarray(jump_data, dtype=float),
        matrix=ops.stiffness_intra_extra, tol=tol)
    k_u = sp.block_diag([ops.stiffness_intra_extra, ops.stiffness_damaged],
                        format="csr")
    rhs = np.zeros(dm.n_u)
    rhs[:dm.n_u_healthy] -= ops.stiffness_intra @ np.asarray(potential,
                                                             dtype=float)
    rhs -= k_u @ stage_one
    correction = solve_constrained_jump(k_u, rhs, np.zeros(dm.n_gamma),
                                        workspace.elimination, tol=tol)
    return stage_one + correction


def dirichlet_interface_extension(workspace: Workspace, values: np.ndarray,
                                  matrix=None, tol: float = 1e-12) -> np.ndarray:
    """Extend interface nodal values into the healthy region.

    Solves the healthy-family elliptic system with the interface dofs
    pinned to the given values and zero on the outer boundary.  With the
    default unit-coefficient matrix this is the discrete harmonic
    extension used by the interface-norm surrogate.
    """
    dm = workspace.dofmap
    values = np.asarray(values, dtype=float)
    if values.shape != (dm.n_gamma,):
        raise ConfigurationError(
            f"interface values have shape {values.shape}, "
            f"expected ({dm.n_gamma},)")
    if matrix is None:
        matrix = workspace.stiff_unit_healthy
    gamma_dofs = dm.jump_pairs[:, 0]
    keep = np.setdiff1d(np.arange(dm.n_u_healthy), gamma_dofs)
    out = np.zeros(dm.n_u_healthy)
    out[gamma_dofs] = values
    if len(keep) > 0:
        matrix = matrix.tocsr()
        interior = matrix[keep][:, keep]
        coupling = matrix[keep][:, gamma_dofs]
        rhs = -(coupling @ values)
        out[keep] = cg_solve(LinearSystem(interior, rhs, tol=tol)).x
    return out


def h_half_norm_sq(workspace: Workspace, values: np.ndarray,
                   tol: float = 1e-12) -> float:
    """Discrete interface-norm surrogate for jump data.

    Interface L2 norm squared plus the H1 seminorm squared of the discrete
    harmonic extension into the healthy region; a computable equivalent of
    the trace-space norm the estimates are stated in.
    """
    values = np.asarray(values, dtype=float)
    extension = dirichlet_interface_extension(workspace, values, tol=tol)
    m_gamma = workspace.operators.interface_mass
    return (float(values @ (m_gamma @ values))
            + float(extension @ (workspace.stiff_unit_healthy @ extension)))


def bilinear_form(workspace: Workspace, conductance: float,
                  pair_a, pair_b, tol: float = 1e-12) -> float:
    """Symmetric energy pairing of two (potential, jump) pairs.

    Each pair is lifted to a broken field; the form sums the
    intracellular energy of potential-plus-lifting, the extracellular and
    damaged diffusion energies of the liftings, and the conductance-
    weighted interface product of the jump data.
    """
    w_a, r_a = pair_a
    w_b, r_b = pair_b
    lift_a = solve_lifting(workspace, w_a, r_a, tol=tol)
    lift_b = solve_lifting(workspace, w_b, r_b, tol=tol)
    return _bilinear_from_liftings(workspace, conductance, lift_a, lift_b)


def _bilinear_from_liftings(workspace: Workspace, conductance: float,
                            lift_a: LiftingSolution,
                            lift_b: LiftingSolution) -> float:
    dm = workspace.dofmap
    ops = workspace.operators
    a_i = ops.stiffness_intra
    a_e = (ops.stiffness_intra_extra - ops.stiffness_intra).tocsr()
    total_a = lift_a.potential_input + lift_a.field[:dm.n_u_healthy]
    total_b = lift_b.potential_input + lift_b.field[:dm.n_u_healthy]
    value = float(total_a @ (a_i @ total_b))
    value += float(lift_a.field[:dm.n_u_healthy]
                   @ (a_e @ lift_b.field[:dm.n_u_healthy]))
    value += float(lift_a.field[dm.n_u_healthy:]
                   @ (ops.stiffness_damaged @ lift_b.field[dm.n_u_healthy:]))
    value += conductance * float(
        lift_a.jump_input @ (ops.interface_mass @ lift_b.jump_input))
    return value


def build_lifting_matrix(workspace: Workspace) -> np.ndarray:
    """Dense matrix of the lifting operator, one column per (w, r) dof.

    Uses a single dense factorization of the jump-eliminated block, so it
    is meant for the coarse meshes the coercivity estimate runs on.  The
    columns agree with solve_lifting applied to unit vectors.
    """
    dm = workspace.dofmap
    ops = workspace.operators
    elim = workspace.elimination
    t_mat = elim.t_matrix
    r_mat = elim.r_matrix
    k_u = sp.block_diag([ops.stiffness_intra_extra, ops.stiffness_damaged],
                        format="csr")
    reduced = (t_mat.T @ k_u @ t_mat).toarray()
    pad = sp.vstack([ops.stiffness_intra,
                     sp.csr_matrix((dm.n_u_damaged, dm.n_v))]).tocsr()
    rhs_w = -(t_mat.T @ pad).toarray()
    rhs_r = -(t_mat.T @ (k_u @ r_mat)).toarray()
    solution = np.linalg.solve(reduced, np.hstack([rhs_w, rhs_r]))
    lifted = t_mat.toarray() @ solution
    lifted[:, dm.n_v:] += r_mat.toarray()
    return lifted


def coercivity_estimate(workspace: Workspace, conductance: float,
                        tol: float = 1e-10) -> float:
    """Smallest eigenvalue of the bilinear form against the graph norm.

    Assembles the quadratic form of the bilinear pairing on the full
    (potential, jump) space by lifting every unit dof, assembles the Gram
    matrix of the squared healthy H1 norm plus the interface-norm
    surrogate, and returns the smallest generalized eigenvalue.  Positive
    values certify discrete coercivity.
    """
    dm = workspace.dofmap
    ops = workspace.operators
    n_v, n_g = dm.n_v, dm.n_gamma
    lifted = build_lifting_matrix(workspace)
    lifted_h = lifted[:dm.n_u_healthy]
    lifted_d = lifted[dm.n_u_healthy:]
    total = lifted_h.copy()
    total[:, :n_v] += np.eye(n_v)
    a_e = (ops.stiffness_intra_extra - ops.stiffness_intra).tocsr()
    form = total.T @ (ops.stiffness_intra @ total)
    form += lifted_h.T @ (a_e @ lifted_h)
    form += lifted_d.T @ (ops.stiffness_damaged @ lifted_d)
    m_gamma = ops.interface_mass.toarray()
    form[n_v:, n_v:] += conductance * m_gamma
    form = 0.5 * (form + form.T)

    gamma_dofs = dm.jump_pairs[:, 0]
    keep = np.setdiff1d(np.arange(dm.n_u_healthy), gamma_dofs)
    s_unit = workspace.stiff_unit_healthy.toarray()
    extension = np.zeros((dm.n_u_healthy, n_g))
    extension[gamma_dofs] = np.eye(n_g)
    if len(keep) > 0:
        interior = s_unit[np.ix_(keep, keep)]
        coupling = s_unit[np.ix_(keep, gamma_dofs)]
        extension[keep] = -np.linalg.solve(interior, coupling)
    gram = np.zeros_like(form)
    gram[:n_v, :n_v] = s_unit + ops.mass_healthy.toarray()
    gram[n_v:, n_v:] = m_gamma + extension.T @ s_unit @ extension
    gram = 0.5 * (gram + gram.T)
    # the lowest eigenvalues of this pencil cluster, so the inverse power
    # iteration needs a generous step budget; the systems are small
    value, _ = smallest_generalized_eigenvalue(
        sp.csr_matrix(form), sp.csr_matrix(gram), tol=tol, maxiter=20000)
    return float(value)


# ---------------------------------------------------------------------------
# energy ledger


@dataclass
class EnergyReport:
    """Every term of the discrete energy inequality for one trajectory.

    Dissipation sums run over steps n >= 1 with weight dt; suprema run
    over all recorded levels including the initial one.  The data
    functional collects the squared space-time norms of the stimuli and
    the squared norms of the initial data, with the interface part
    weighted by the capacitance like the energy itself.
    """

    sup_v_mass_sq: float
    dissipation_grad_v: float
    dissipation_grad_u_healthy: float
    dissipation_grad_u_damaged: float
    jump_sup_weighted: float
    jump_dissipation_weighted: float
    lhs_total: float
    data_total: float
    ratio: float


def energy_report(mesh: Mesh, conductivities: Conductivities,
                  trajectory: Trajectory, sources: SourceSet | None,
                  initial: InitialData | None) -> EnergyReport:
    workspace = build_workspace(mesh, conductivities)
    cfg = trajectory.config
    records = trajectory.records
    dt = cfg.dt
    sup_v = max(r.v_mass_sq for r in records)
    diss_v = dt * sum(r.grad_v_sq for r in records[1:])
    diss_uh = dt * sum(r.grad_u_healthy_sq for r in records[1:])
    diss_ud = dt * sum(r.grad_u_damaged_sq for r in records[1:])
    sup_jump = cfg.capacitance * max(r.jump_mass_sq for r in records)
    diss_jump = cfg.conductance * dt * sum(r.jump_mass_sq for r in records[1:])
    lhs = sup_v + diss_v + diss_uh + diss_ud + sup_jump + diss_jump

    sources = sources if sources is not None else SourceSet()
    initial = initial if initial is not None else InitialData()
    times = [r.t for r in records[1:]]
    data = 0.0
    data += _time_quadrature_sq(sources.stimulus_intra,
                                workspace.healthy_points,
                                workspace.healthy_weights, times, dt)
    data += _time_quadrature_sq(sources.stimulus_extra,
                                workspace.healthy_points,
                                workspace.healthy_weights, times, dt)
    data += _time_quadrature_sq(sources.stimulus_damaged,
                                workspace.damaged_points,
                                workspace.damaged_weights, times, dt)
    if initial.v0 is not None:
        v0 = np.asarray(initial.v0(workspace.healthy_points), dtype=float)
        data += float(v0 @ (workspace.operators.mass_healthy @ v0))
    if initial.s0 is not None:
        s0 = np.asarray(initial.s0(workspace.gamma_points), dtype=float)
        data += cfg.capacitance * float(
            s0 @ (workspace.operators.interface_mass @ s0))
    ratio = 0.0 if data == 0.0 else lhs / data
    return EnergyReport(
        sup_v_mass_sq=sup_v, dissipation_grad_v=diss_v,
        dissipation_grad_u_healthy=diss_uh, dissipation_grad_u_damaged=diss_ud,
        jump_sup_weighted=sup_jump, jump_dissipation_weighted=diss_jump,
        lhs_total=lhs, data_total=data, ratio=ratio)


def _time_quadrature_sq(source, points, weights, times, dt) -> float:
    if source is None:
        return 0.0
    total = 0.0
    for t in times:
        values = np.asarray(source(points, t), dtype=float)
        total += dt * float(weights @ (values * values))
    return total


@dataclass
class EnergyStudyResult:
    """Energy-inequality ratios across meshes and randomized data sets."""

    ratios: np.ndarray            # shape (n_meshes, n_samples)
    calibrated_constant: float    # max ratio on the first (coarsest) mesh

    @property
    def worst_refined_factor(self) -> float:
        """Largest ratio on the finer meshes divided by the calibration."""
        if self.ratios.shape[0] < 2 or self.calibrated_constant == 0.0:
            return 0.0
        return float(self.ratios[1:].max() / self.calibrated_constant)


def energy_inequality_study(meshes: list, conductivity=(1.0, 1.0, 1.0),
                            capacitance: float = 1.0,
                            conductance: float = 1.0, dt: float = 0.025,
                            t_end: float = 0.5, n_samples: int = 20,
                            seed: int = 0,
                            cg_tol: float = 1e-10) -> EnergyStudyResult:
    """Randomized sweep of the energy inequality on a mesh ladder.

    The same continuum data (random trigonometric stimuli and initial
    fields) is run on every mesh; the bound constant is calibrated as the
    worst ratio on the first mesh.
    """
    if len(meshes) < 1:
        raise ConfigurationError("energy study needs at least one mesh")
    rng = np.random.default_rng(seed)
    datasets = []
    dim = meshes[0].dim
    for _ in range(n_samples):
        datasets.append((
            SourceSet(stimulus_intra=_random_source(rng, dim),
                      stimulus_extra=_random_source(rng, dim)),
            InitialData(v0=_random_field(rng, dim),
                        s0=_random_field(rng, dim)),
        ))
    cfg = StepperConfig(dt=dt, t_end=t_end, capacitance=capacitance,
                        conductance=conductance, ionic_enabled=False,
                        cg_tol=cg_tol)
    ratios = np.zeros((len(meshes), n_samples))
    for i, mesh in enumerate(meshes):
        cond = make_conductivities(mesh, *conductivity)
        for j, (sources, initial) in enumerate(datasets):
            trajectory = run(mesh, cond, None, cfg, sources=sources,
                             initial=initial)
            report = energy_report(mesh, cond, trajectory, sources, initial)
            ratios[i, j] = report.ratio
    return EnergyStudyResult(ratios=ratios,
                             calibrated_constant=float(ratios[0].max()))


def _random_field(rng, dim: int):
    amps = rng.normal(size=3)
    if dim == 1:
        def field(p):
            x = p[:, 0]
            return sum(a * np.sin((k + 1) * np.pi * x)
                       for k, a in enumerate(amps))
    else:
        phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
        def field(p):
            x, y = p[:, 0], p[:, 1]
            return sum(a * np.sin((k + 1) * np.pi * x)
                       * np.cos((k + 1) * np.pi * y + phases[k])
                       for k, a in enumerate(amps))
    return field


def _random_source(rng, dim: int):
    spatial = _random_field(rng, dim)
    omega = float(rng.uniform(0.5, 3.0))
    shift = float(rng.uniform(-0.5, 0.5))

    def source(p, t):
        return spatial(p) * (shift + np.cos(omega * t))

    return source


# ---------------------------------------------------------------------------
# shifted-problem equivalence


@dataclass
class ShiftedEquivalenceResult:
    discrepancy: float
    scale: float

    @property
    def relative(self) -> float:
        return 0.0 if self.scale == 0.0 else self.discrepancy / self.scale


def shifted_equivalence_check(mesh: Mesh, conductivities: Conductivities,
                              config: StepperConfig, stimulus_intra,
                              stimulus_extra,
                              initial: InitialData | None = None,
                              ) -> ShiftedEquivalenceResult:
    """Run the direct and the source-shifted schemes and compare.

    The shifted scheme absorbs the stimulus difference into an auxiliary
    per-level elliptic field: both stimuli are replaced by the
    intracellular one, the transmembrane row is loaded with the negative
    intracellular stiffness applied to the shift field, the interface law
    receives the induced charge, and the initial jump is reduced by the
    initial shift trace.  Algebraically the two schemes coincide step by
    step, so the reconstructed fields must agree to solver tolerance.
    """
    if config.ionic_enabled:
        raise ConfigurationError(
            "the shifted-problem equivalence is a linear statement; "
            "disable the ionic term")
    workspace = build_workspace(mesh, conductivities)
    dm = workspace.dofmap
    ops = workspace.operators
    cfg = replace(config, record_every=1)
    n_steps = cfg.n_steps
    shift_levels = np.array([
        solve_source_shift(workspace, stimulus_intra, stimulus_extra,
                           t=n * cfg.dt, tol=cfg.cg_tol)
        for n in range(n_steps + 1)])
    jump_levels = shift_levels[:, dm.jump_pairs[:, 0]]
    charge = interface_charge_source(jump_levels, cfg.capacitance,
                                     cfg.conductance, cfg.dt)

    def level_of(t: float) -> int:
        return int(round(t / cfg.dt))

    def extra_v_load(t: float) -> np.ndarray:
        return -(ops.stiffness_intra @ shift_levels[level_of(t)])

    def charge_nodal(t: float) -> np.ndarray:
        return charge[level_of(t) - 1]

    initial = initial if initial is not None else InitialData()

    def shifted_s0(points: np.ndarray) -> np.ndarray:
        base = (np.asarray(initial.s0(points), dtype=float)
                if initial.s0 is not None else np.zeros(len(points)))
        return base - jump_levels[0]

    direct = run(mesh, conductivities, None, cfg,
                 sources=SourceSet(stimulus_intra=stimulus_intra,
                                   stimulus_extra=stimulus_extra),
                 initial=initial)
    shifted = run(mesh, conductivities, None, cfg,
                  sources=SourceSet(stimulus_intra=stimulus_intra,
                                    stimulus_extra=stimulus_intra,
                                    extra_v_load=extra_v_load,
                                    interface_current_nodal=charge_nodal),
                  initial=InitialData(v0=initial.v0, s0=shifted_s0,
                                      w0=initial.w0))

    mass_h = ops.mass_healthy
    mass_d = ops.mass_damaged
    discrepancy = 0.0
    scale = 0.0
    for n, (state_a, state_b) in enumerate(zip(direct.snapshots,
                                               shifted.snapshots)):
        reconstructed_u = state_b.u.copy()
        reconstructed_u[:dm.n_u_healthy] += shift_levels[n]
        dv = state_a.v - state_b.v
        du = state_a.u - reconstructed_u
        norm_dv = math.sqrt(float(dv @ (mass_h @ dv)))
        norm_du = math.sqrt(
            float(du[:dm.n_u_healthy] @ (mass_h @ du[:dm.n_u_healthy]))
            + float(du[dm.n_u_healthy:] @ (mass_d @ du[dm.n_u_healthy:])))
        discrepancy = max(discrepancy, norm_dv + norm_du)
        norm_v = math.sqrt(float(state_a.v @ (mass_h @ state_a.v)))
        u_a = state_a.u
        norm_u = math.sqrt(
            float(u_a[:dm.n_u_healthy] @ (mass_h @ u_a[:dm.n_u_healthy]))
            + float(u_a[dm.n_u_healthy:] @ (mass_d @ u_a[dm.n_u_healthy:])))
        scale = max(scale, norm_v + norm_u)
    return ShiftedEquivalenceResult(discrepancy=discrepancy, scale=scale)


# ---------------------------------------------------------------------------
# manufactured convergence


@dataclass
class ConvergenceRow:
    level: int
    h: float
    dt: float
    error_v: float
    error_u: float


@dataclass
class ConvergenceTable:
    rows: list

    @property
    def rates_v(self) -> np.ndarray:
        e = np.array([r.error_v for r in self.rows])
        return np.log2(e[:-1] / e[1:])

    @property
    def rates_u(self) -> np.ndarray:
        e = np.array([r.error_u for r in self.rows])
        return np.log2(e[:-1] / e[1:])


def _manufactured_errors(case: ManufacturedCase, mesh: Mesh,
                         trajectory: Trajectory) -> tuple[float, float]:
    workspace = build_workspace(mesh, case.conductivities(mesh))
    dm = workspace.dofmap
    ops = workspace.operators
    state = trajectory.final_state
    t = state.t
    dv = state.v - case.v_exact(workspace.healthy_points, t)
    du_h = (state.u[:dm.n_u_healthy]
            - case.u_healthy_exact(workspace.healthy_points, t))
    du_d = (state.u[dm.n_u_healthy:]
            - case.u_damaged_exact(workspace.damaged_points, t))
    err_v = math.sqrt(float(dv @ (ops.mass_healthy @ dv)))
    err_u = math.sqrt(float(du_h @ (ops.mass_healthy @ du_h))
                      + float(du_d @ (ops.mass_damaged @ du_d)))
    return err_v, err_u


def mms_convergence(case: ManufacturedCase, levels: int = 3,
                    n_steps_base: int = 8, t_end: float = 0.1,
                    cg_tol: float = 1e-12) -> ConvergenceTable:
    """Spatial refinement ladder with dt shrinking like h squared.

    Because the time step is slaved to the square of the mesh size, both
    error components contract by the same factor per level and the fitted
    rate isolates the spatial order.
    """
    rows = []
    for level in range(levels):
        mesh = case.mesh(level)
        n_steps = n_steps_base * 4 ** level
        dt = t_end / n_steps
        cfg = case.config(dt=dt, t_end=t_end, cg_tol=cg_tol)
        trajectory = run(mesh, case.conductivities(mesh), None, cfg,
                         sources=case.sources(), initial=case.initial_data())
        err_v, err_u = _manufactured_errors(case, mesh, trajectory)
        rows.append(ConvergenceRow(level=level, h=2.0 ** (-level), dt=dt,
                                   error_v=err_v, error_u=err_u))
    return ConvergenceTable(rows=rows)


def mms_temporal_convergence(case: ManufacturedCase, level: int = 2,
                             n_steps_ladder=(4, 8, 16),
                             reference_multiplier: int = 16,
                             t_end: float = 0.1,
                             cg_tol: float = 1e-12) -> ConvergenceTable:
    """Time-step ladder at fixed mesh against a much finer reference run.

    The error is measured against the same discretization run with the
    finest ladder step divided by the reference multiplier, so the spatial
    error cancels and the fitted rate isolates the temporal order.
    """
    mesh = case.mesh(level)
    cond = case.conductivities(mesh)

    def final_state(n_steps: int) -> State:
        cfg = case.config(dt=t_end / n_steps, t_end=t_end, cg_tol=cg_tol)
        return run(mesh, cond, None, cfg, sources=case.sources(),
                   initial=case.initial_data()).final_state

    reference = final_state(max(n_steps_ladder) * reference_multiplier)
    workspace = build_workspace(mesh, cond)
    dm = workspace.dofmap
    ops = workspace.operators
    rows = []
    for n_steps in n_steps_ladder:
        state = final_state(n_steps)
        dv = state.v - reference.v
        du = state.u - reference.u
        err_v = math.sqrt(float(dv @ (ops.mass_healthy @ dv)))
        err_u = math.sqrt(
            float(du[:dm.n_u_healthy] @ (ops.mass_healthy
                                         @ du[:dm.n_u_healthy]))
            + float(du[dm.n_u_healthy:] @ (ops.mass_damaged
                                           @ du[dm.n_u_healthy:])))
        rows.append(ConvergenceRow(level=level, h=2.0 ** (-level),
                                   dt=t_end / n_steps, error_v=err_v,
                                   error_u=err_u))
    return ConvergenceTable(rows=rows)


# ---------------------------------------------------------------------------
# stability under data perturbation


@dataclass
class StabilityRow:
    delta: float
    dt: float
    amplification: float


@dataclass
class StabilityResult:
    rows: list
    gronwall_bound: float | None

    def amplification(self, delta: float, dt: float) -> float:
        for row in self.rows:
            if row.delta == delta and row.dt == dt:
                return row.amplification
        raise KeyError((delta, dt))


def stability_study(mesh: Mesh, conductivities: Conductivities,
                    ionic: IonicModel | None, capacitance: float = 1.0,
                    conductance: float = 1.0, t_end: float = 0.25,
                    deltas=(1e-2, 1e-4), dts=(0.025, 0.0125),
                    sources: SourceSet | None = None, seed: int = 0,
                    cg_tol: float = 1e-12) -> StabilityResult:
    """Amplification of an initial-data perturbation along the flow.

    Runs pairs of trajectories from v0 and v0 + delta * (unit-norm
    perturbation) and reports sup over time of the mass norm of the
    difference divided by delta.  With the ionic term off and no sources
    the difference obeys the pure decay estimate, so the amplification
    cannot exceed one; with the ionic term on it stays below the Gronwall
    envelope of the declared Lipschitz bound.
    """
    rng = np.random.default_rng(seed)
    workspace = build_workspace(mesh, conductivities)
    base_v0 = _random_field(rng, mesh.dim)
    base_s0 = _random_field(rng, mesh.dim)
    perturb_raw = _random_field(rng, mesh.dim)
    points = workspace.healthy_points
    raw = np.asarray(perturb_raw(points), dtype=float)
    norm = math.sqrt(float(raw @ (workspace.operators.mass_healthy @ raw)))
    if norm == 0.0:
        raise ConfigurationError("degenerate perturbation sample")

    def perturbation(p):
        return np.asarray(perturb_raw(p), dtype=float) / norm

    ionic_enabled = ionic is not None
    rows = []
    mass = workspace.operators.mass_healthy
    for dt in dts:
        for delta in deltas:
            cfg = StepperConfig(dt=dt, t_end=t_end, capacitance=capacitance,
                                conductance=conductance,
                                ionic_enabled=ionic_enabled, cg_tol=cg_tol)
            initial_a = InitialData(v0=base_v0, s0=base_s0)
            initial_b = InitialData(
                v0=lambda p: base_v0(p) + delta * perturbation(p),
                s0=base_s0)
            traj_a = run(mesh, conductivities, ionic, cfg, sources=sources,
                         initial=initial_a)
            traj_b = run(mesh, conductivities, ionic, cfg, sources=sources,
                         initial=initial_b)
            if delta == 0.0:
                rows.append(StabilityRow(delta=delta, dt=dt,
                                         amplification=0.0))
                continue
            worst = 0.0
            for sa, sb in zip(traj_a.snapshots, traj_b.snapshots):
                diff = sa.v - sb.v
                worst = max(worst, math.sqrt(float(diff @ (mass @ diff))))
            rows.append(StabilityRow(delta=delta, dt=dt,
                                     amplification=worst / delta))
    bound = None
    if ionic_enabled:
        bound = math.exp(composed_lipschitz_bound(ionic, t_end) * t_end)
    return StabilityResult(rows=rows, gronwall_bound=bound)


# ---------------------------------------------------------------------------
# stiff-coupling limit


@dataclass
class BetaRow:
    conductance: float
    jump_norm: float          # L2 over interface and time
    distance_to_perfect: float


@dataclass
class BetaStudyResult:
    rows: list
    slope: float

    @property
    def jump_norms(self) -> np.ndarray:
        return np.array([r.jump_norm for r in self.rows])

    @property
    def distances(self) -> np.ndarray:
        return np.array([r.distance_to_perfect for r in self.rows])


def beta_limit_study(mesh: Mesh, conductivities: Conductivities,
                     conductances, capacitance: float = 1.0,
                     dt: float = 1e-4, t_end: float = 0.1,
                     initial: InitialData | None = None,
                     sources: SourceSet | None = None,
                     cg_tol: float = 1e-10) -> BetaStudyResult:
    """Interface-jump decay as the coupling conductance grows.

    The energy bound makes the conductance-weighted space-time jump norm
    data-bounded, so the jump itself must shrink like the inverse square
    root of the conductance; the fitted log-log slope checks that.  A
    perfect-coupling run (jump eliminated) serves as the limit reference;
    distances to it must not increase along the ladder.

    The time step has to resolve the fastest interface relaxation time
    (capacitance over the largest conductance); the defaults do for
    conductances up to 1e4.
    """
    conductances = list(conductances)
    if len(conductances) < 2:
        raise ConfigurationError(
            "conductance ladder needs at least two values to fit a slope")
    if min(conductances) <= 0.0:
        raise ConfigurationError("conductances must be positive")
    span = math.log10(max(conductances) / min(conductances))
    if span < 3.0 - 1e-9:
        raise ConfigurationError(
            f"conductance ladder spans {span:.2f} decades, need >= 3")
    if initial is None:
        initial = InitialData(s0=lambda p: np.full(len(p), 1.0))
    workspace = build_workspace(mesh, conductivities)
    dm = workspace.dofmap
    mass_h = workspace.operators.mass_healthy
    mass_d = workspace.operators.mass_damaged

    perfect_cfg = StepperConfig(dt=dt, t_end=t_end, capacitance=capacitance,
                                conductance=1.0, ionic_enabled=False,
                                coupling="perfect", cg_tol=cg_tol)
    perfect_initial = InitialData(v0=initial.v0, s0=None, w0=initial.w0)
    perfect = run(mesh, conductivities, None, perfect_cfg, sources=sources,
                  initial=perfect_initial)

    rows = []
    for beta in conductances:
        cfg = StepperConfig(dt=dt, t_end=t_end, capacitance=capacitance,
                            conductance=float(beta), ionic_enabled=False,
                            cg_tol=cg_tol)
        traj = run(mesh, conductivities, None, cfg, sources=sources,
                   initial=initial)
        jump_sq = dt * sum(r.jump_mass_sq for r in traj.records[1:])
        dist_sq = 0.0
        for sa, sb in zip(traj.snapshots[1:], perfect.snapshots[1:]):
            du = sa.u - sb.u
            dist_sq += dt * (
                float(du[:dm.n_u_healthy] @ (mass_h @ du[:dm.n_u_healthy]))
                + float(du[dm.n_u_healthy:] @ (mass_d @ du[dm.n_u_healthy:])))
        rows.append(BetaRow(conductance=float(beta),
                            jump_norm=math.sqrt(jump_sq),
                            distance_to_perfect=math.sqrt(dist_sq)))
    logs = np.log10([r.conductance for r in rows])
    vals = np.log10([max(r.jump_norm, 1e-300) for r in rows])
    slope = float(np.polyfit(logs, vals, 1)[0])
    return BetaStudyResult(rows=rows, slope=slope)
