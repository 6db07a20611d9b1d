"""Semi-implicit time integration of the coupled tissue model.

One step advances the pair (V, U) with backward Euler on every diffusion
and interface term and an explicit ionic term: the gating field is updated
first by its exact exponential step, then the ionic current is evaluated
at the old potential and the new gate.  The resulting block system on
[v | u_healthy | u_damaged] is symmetric positive definite, so a single
CG solve per step advances the state.

Time derivatives act only on V and on the interface jump of U; the tissue
potential itself carries no volume inertia.  The damaged block is still
anchored every step because the interface capacitance contributes
capacitance/dt + conductance > 0 to the jump coupling (or, in perfect
coupling mode, because the jump is eliminated outright).

Interface condition ("rc" coupling, unit normal pointing from the damaged
region into the healthy one):

    capacitance * d[U]/dt + conductance * [U]
        = extracellular flux + interface_current,

with [U] = healthy-side trace minus damaged-side trace.  Verification
sources (flux mismatches on the interface, damaged-side volume source)
default to zero, which is the physical model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .discretization import (DofMap, JumpElimination, Operators,
                             _vertex_quadrature_weights, build_dof_map,
                             build_jump_elimination, build_operators,
                             interface_load_from_values, solve_constrained_jump)
from .errors import ConfigurationError, NumericBreakdownError
from .mesh import Mesh, Region
from .model import (Conductivities, IonicModel, conductivity_field,
                    gating_exact_step)
from .sparse_linalg import LinearSystem, cg_solve
from .discretization import assemble_stiffness

COUPLING_MODES = ("rc", "perfect")


@dataclass
class StepperConfig:
    """Time-stepping parameters.

    capacitance and conductance are the interface constants of the RC law
    (per unit interface area); capacitance must be positive so the jump
    always carries inertia, conductance may be zero.
    """

    dt: float
    t_end: float
    capacitance: float = 1.0
    conductance: float = 1.0
    cg_tol: float = 1e-10
    cg_maxiter: int | None = None
    ionic_enabled: bool = True
    coupling: str = "rc"
    record_every: int = 1

    def __post_init__(self):
        if not (self.dt > 0.0 and np.isfinite(self.dt)):
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0.0 or not np.isfinite(self.t_end):
            raise ConfigurationError(f"t_end must be >= 0, got {self.t_end}")
        if not (self.capacitance > 0.0):
            raise ConfigurationError(
                f"interface capacitance must be positive, got {self.capacitance}")
        if self.conductance < 0.0:
            raise ConfigurationError(
                f"interface conductance must be >= 0, got {self.conductance}")
        if not (self.cg_tol > 0.0):
            raise ConfigurationError(f"cg_tol must be positive, got {self.cg_tol}")
        if self.coupling not in COUPLING_MODES:
            raise ConfigurationError(
                f"unknown coupling {self.coupling!r}; expected {COUPLING_MODES}")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(0, int(math.ceil(self.t_end / self.dt - 1e-9)))


@dataclass
class SourceSet:
    """Right-hand-side data.  All entries default to zero (None).

    Volume sources are called as f(points, t); interface sources as
    g(points, t) at interface vertices.  ``interface_current_nodal`` and
    ``extra_v_load`` are exact hooks used by the verification studies: the
    first returns nodal interface values for a given time, the second a
    ready-made vector on the v dofs.
    """

    stimulus_intra: Callable | None = None       # healthy volume, intra eq.
    stimulus_extra: Callable | None = None       # healthy volume, extra eq.
    stimulus_damaged: Callable | None = None     # damaged volume (verification)
    flux_mismatch_intra: Callable | None = None  # interface (verification)
    flux_mismatch_extra: Callable | None = None  # interface (verification)
    interface_current: Callable | None = None    # interface RC source
    interface_current_nodal: Callable | None = None
    extra_v_load: Callable | None = None

    @property
    def is_physical(self) -> bool:
        """True when only the physical stimuli are active."""
        return all(s is None for s in (
            self.stimulus_damaged, self.flux_mismatch_intra,
            self.flux_mismatch_extra, self.interface_current,
            self.interface_current_nodal, self.extra_v_load))


@dataclass
class InitialData:
    """Initial fields: v0(points) on the healthy region, s0(points) nodal
    interface jump, w0 a constant or callable gate value (default 0)."""

    v0: Callable | None = None
    s0: Callable | None = None
    w0: Callable | float | None = None


@dataclass
class State:
    t: float
    v: np.ndarray
    u: np.ndarray
    w: np.ndarray


def interface_jump(state: State, dofmap: DofMap) -> np.ndarray:
    """Nodal jump of the tissue potential, healthy minus damaged side."""
    healthy = state.u[dofmap.jump_pairs[:, 0]]
    damaged = state.u[dofmap.n_u_healthy + dofmap.jump_pairs[:, 1]]
    return healthy - damaged


def recover_potentials(state: State, dofmap: DofMap) -> dict:
    """The physical potentials carried by the transformed state."""
    u_healthy = state.u[:dofmap.n_u_healthy]
    u_damaged = state.u[dofmap.n_u_healthy:]
    return {
        "intracellular": state.v + u_healthy,
        "extracellular": u_healthy,
        "damaged": u_damaged,
        "transmembrane": state.v,
    }


@dataclass
class StepRecord:
    step: int
    t: float
    v_mass_sq: float
    grad_v_sq: float
    grad_u_healthy_sq: float
    grad_u_damaged_sq: float
    jump_mass_sq: float
    energy: float
    cg_iterations: int
    cg_residual: float


@dataclass
class Trajectory:
    config: StepperConfig
    records: list
    snapshots: list
    final_state: State

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records])

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])


@dataclass
class StepContext:
    """Everything one run needs, assembled once."""

    mesh: Mesh
    dofmap: DofMap
    operators: Operators
    config: StepperConfig
    sources: SourceSet
    ionic: IonicModel | None
    matrix: sp.csr_matrix
    elimination: JumpElimination
    unit_stiffness_healthy: sp.csr_matrix
    unit_stiffness_damaged: sp.csr_matrix
    healthy_points: np.ndarray
    damaged_points: np.ndarray
    gamma_points: np.ndarray
    healthy_weights: np.ndarray
    damaged_weights: np.ndarray
    lumped_diag: np.ndarray


def build_step_matrix(operators: Operators, config: StepperConfig) -> sp.csr_matrix:
    """Symmetric block matrix advancing (V, U) one backward-Euler step."""
    dm = operators.dofmap
    n_v, n_ub, n_ud = dm.n_v, dm.n_u_healthy, dm.n_u_damaged
    m_dt = operators.mass_healthy / config.dt
    a_i = operators.stiffness_intra
    c = config.capacitance / config.dt + config.conductance
    g = operators.interface_jump_mass.tocsr()
    g_bb = g[:n_ub, :n_ub]
    g_bd = g[:n_ub, n_ub:]
    g_db = g[n_ub:, :n_ub]
    g_dd = g[n_ub:, n_ub:]
    top = sp.hstack([m_dt + a_i, a_i, sp.csr_matrix((n_v, n_ud))])
    mid = sp.hstack([a_i, operators.stiffness_intra_extra + c * g_bb, c * g_bd])
    bot = sp.hstack([sp.csr_matrix((n_ud, n_v)), c * g_db,
                     operators.stiffness_damaged + c * g_dd])
    out = sp.vstack([top, mid, bot]).tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


def build_perfect_step_matrix(operators: Operators, config: StepperConfig,
                              elimination: JumpElimination) -> sp.csr_matrix:
    """Block matrix with the interface jump eliminated (perfect coupling)."""
    t = elimination.t_matrix
    a_i = operators.stiffness_intra
    m_dt = operators.mass_healthy / config.dt
    k_u = sp.block_diag([operators.stiffness_intra_extra,
                         operators.stiffness_damaged], format="csr")
    n_v = operators.dofmap.n_v
    coupling = sp.hstack([a_i, sp.csr_matrix((n_v,
                          operators.dofmap.n_u_damaged))]).tocsr() @ t
    top = sp.hstack([m_dt + a_i, coupling])
    bot = sp.hstack([coupling.T, t.T @ k_u @ t])
    out = sp.vstack([top, bot]).tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


def build_step_context(mesh: Mesh, conductivities: Conductivities,
                       ionic: IonicModel | None, config: StepperConfig,
                       sources: SourceSet | None = None) -> StepContext:
    if sources is None:
        sources = SourceSet()
    if config.ionic_enabled and ionic is None:
        raise ConfigurationError("ionic stepping enabled but no ionic model given")
    dofmap = build_dof_map(mesh)
    operators = build_operators(mesh, dofmap, conductivities)
    elimination = build_jump_elimination(dofmap)
    if config.coupling == "perfect":
        matrix = build_perfect_step_matrix(operators, config, elimination)
    else:
        matrix = build_step_matrix(operators, config)
    unit_h = assemble_stiffness(mesh, dofmap,
                                conductivity_field(mesh, Region.HEALTHY, 1.0),
                                Region.HEALTHY, "u-u")
    unit_d = assemble_stiffness(mesh, dofmap,
                                conductivity_field(mesh, Region.DAMAGED, 1.0),
                                Region.DAMAGED, "u-u")
    weights = _vertex_quadrature_weights(mesh, Region.HEALTHY)
    weights_d = _vertex_quadrature_weights(mesh, Region.DAMAGED)
    return StepContext(
        mesh=mesh, dofmap=dofmap, operators=operators, config=config,
        sources=sources, ionic=ionic, matrix=matrix, elimination=elimination,
        unit_stiffness_healthy=unit_h, unit_stiffness_damaged=unit_d,
        healthy_points=mesh.vertices[dofmap.healthy_vertices],
        damaged_points=mesh.vertices[dofmap.damaged_vertices],
        gamma_points=mesh.vertices[dofmap.gamma_vertices],
        healthy_weights=weights[dofmap.healthy_vertices],
        damaged_weights=weights_d[dofmap.damaged_vertices],
        lumped_diag=operators.mass_healthy_lumped.diagonal().copy(),
    )


def _evaluate(f, points: np.ndarray, t: float, label: str) -> np.ndarray:
    values = np.asarray(f(points, t), dtype=float)
    if values.shape != (len(points),):
        raise ConfigurationError(
            f"{label} returned shape {values.shape}, expected ({len(points)},)")
    if not np.all(np.isfinite(values)):
        raise NumericBreakdownError(f"{label} evaluated non-finite at t={t}")
    return values


def _interface_nodal(context: StepContext, t: float) -> np.ndarray | None:
    src = context.sources
    if src.interface_current_nodal is not None:
        values = np.asarray(src.interface_current_nodal(t), dtype=float)
        if values.shape != (context.dofmap.n_gamma,):
            raise ConfigurationError(
                f"interface_current_nodal returned shape {values.shape}, "
                f"expected ({context.dofmap.n_gamma},)")
        return values
    if src.interface_current is not None:
        return _evaluate(src.interface_current, context.gamma_points, t,
                         "interface_current")
    return None


def _tissue_rhs(context: StepContext, state: State, t_new: float) -> np.ndarray:
    """Right side of the tissue rows at the new time level."""
    dm = context.dofmap
    ops = context.operators
    cfg = context.config
    src = context.sources
    rhs = np.zeros(dm.n_u)
    if src.stimulus_intra is not None:
        f1 = _evaluate(src.stimulus_intra, context.healthy_points, t_new,
                       "stimulus_intra")
        rhs[:dm.n_u_healthy] += context.healthy_weights * f1
    if src.stimulus_extra is not None:
        f2 = _evaluate(src.stimulus_extra, context.healthy_points, t_new,
                       "stimulus_extra")
        rhs[:dm.n_u_healthy] -= context.healthy_weights * f2
    if src.stimulus_damaged is not None:
        fd = _evaluate(src.stimulus_damaged, context.damaged_points, t_new,
                       "stimulus_damaged")
        rhs[dm.n_u_healthy:] += context.damaged_weights * fd
    rhs += (cfg.capacitance / cfg.dt) * (ops.interface_jump_mass @ state.u)
    q = _interface_nodal(context, t_new)
    if q is not None:
        rhs += interface_load_from_values(dm, ops.interface_mass, q, "jump")
    if src.flux_mismatch_intra is not None:
        g1 = _evaluate(src.flux_mismatch_intra, context.gamma_points, t_new,
                       "flux_mismatch_intra")
        rhs -= interface_load_from_values(dm, ops.interface_mass, g1,
                                          "healthy_trace")
    if src.flux_mismatch_extra is not None:
        g2 = _evaluate(src.flux_mismatch_extra, context.gamma_points, t_new,
                       "flux_mismatch_extra")
        rhs -= interface_load_from_values(dm, ops.interface_mass, g2,
                                          "healthy_trace")
        rhs += interface_load_from_values(dm, ops.interface_mass, g2, "jump")
    return rhs


def _transmembrane_rhs(context: StepContext, state: State,
                       w_new: np.ndarray, t_new: float) -> np.ndarray:
    dm = context.dofmap
    ops = context.operators
    cfg = context.config
    src = context.sources
    rhs = (ops.mass_healthy @ state.v) / cfg.dt
    if src.stimulus_intra is not None:
        f1 = _evaluate(src.stimulus_intra, context.healthy_points, t_new,
                       "stimulus_intra")
        rhs += context.healthy_weights * f1
    if cfg.ionic_enabled:
        current = context.ionic.ionic_current(state.v, w_new)
        rhs -= context.lumped_diag * current
    if src.flux_mismatch_intra is not None:
        g1 = _evaluate(src.flux_mismatch_intra, context.gamma_points, t_new,
                       "flux_mismatch_intra")
        load = interface_load_from_values(dm, ops.interface_mass, g1,
                                          "healthy_trace")
        rhs -= load[:dm.n_u_healthy]
    if src.extra_v_load is not None:
        extra = np.asarray(src.extra_v_load(t_new), dtype=float)
        if extra.shape != (dm.n_v,):
            raise ConfigurationError(
                f"extra_v_load returned shape {extra.shape}, "
                f"expected ({dm.n_v},)")
        rhs += extra
    return rhs


def step(context: StepContext, state: State,
         t_new: float) -> tuple[State, int, float]:
    """Advance one backward-Euler step to time t_new.

    Returns the new state together with the CG iteration count and final
    relative residual of the block solve.
    """
    cfg = context.config
    dm = context.dofmap
    if cfg.ionic_enabled:
        w_new = gating_exact_step(context.ionic, state.w, state.v, cfg.dt)
    else:
        w_new = state.w
    rhs_v = _transmembrane_rhs(context, state, w_new, t_new)
    rhs_u = _tissue_rhs(context, state, t_new)
    if cfg.coupling == "perfect":
        rhs = np.concatenate([rhs_v, context.elimination.t_matrix.T @ rhs_u])
    else:
        rhs = np.concatenate([rhs_v, rhs_u])
    result = cg_solve(LinearSystem(context.matrix, rhs, tol=cfg.cg_tol,
                                   maxiter=cfg.cg_maxiter))
    v_new = result.x[:dm.n_v]
    if cfg.coupling == "perfect":
        u_new = context.elimination.t_matrix @ result.x[dm.n_v:]
    else:
        u_new = result.x[dm.n_v:]
    if not (np.all(np.isfinite(v_new)) and np.all(np.isfinite(u_new))):
        raise NumericBreakdownError(f"non-finite state after step to t={t_new}")
    new_state = State(t=t_new, v=v_new, u=u_new, w=w_new)
    return new_state, result.iterations, result.residual


def initialize_state(context: StepContext,
                     initial: InitialData | None) -> State:
    """Interpolate v0, reconstruct U(0) by the constrained elliptic solve,
    set the gate.

    The tissue potential is not free initial data: it is pinned by the
    elliptic balance at t = 0 with the jump constrained to s0 and the
    transmembrane potential held at its interpolant.
    """
    if initial is None:
        initial = InitialData()
    dm = context.dofmap
    cfg = context.config
    src = context.sources
    if initial.v0 is not None:
        v0 = np.asarray(initial.v0(context.healthy_points), dtype=float)
        if v0.shape != (dm.n_v,):
            raise ConfigurationError(
                f"v0 returned shape {v0.shape}, expected ({dm.n_v},)")
    else:
        v0 = np.zeros(dm.n_v)
    if initial.s0 is not None:
        s0 = np.asarray(initial.s0(context.gamma_points), dtype=float)
        if s0.shape != (dm.n_gamma,):
            raise ConfigurationError(
                f"s0 returned shape {s0.shape}, expected ({dm.n_gamma},)")
    else:
        s0 = np.zeros(dm.n_gamma)
    if not (np.all(np.isfinite(v0)) and np.all(np.isfinite(s0))):
        raise NumericBreakdownError("non-finite initial data")
    if cfg.coupling == "perfect" and np.any(s0 != 0.0):
        raise ConfigurationError(
            "perfect coupling pins the jump to zero; s0 must vanish")

    if initial.w0 is None:
        w0 = np.zeros(dm.n_v)
    elif callable(initial.w0):
        w0 = np.asarray(initial.w0(context.healthy_points), dtype=float)
    else:
        w0 = np.full(dm.n_v, float(initial.w0))
    if w0.shape != (dm.n_v,):
        raise ConfigurationError(
            f"w0 has shape {w0.shape}, expected ({dm.n_v},)")
    if np.any((w0 < 0.0) | (w0 > 1.0)):
        raise ConfigurationError("gating initial data must lie in [0, 1]")

    ops = context.operators
    k_u = sp.block_diag([ops.stiffness_intra_extra, ops.stiffness_damaged],
                        format="csr")
    rhs = np.zeros(dm.n_u)
    if src.stimulus_intra is not None:
        f1 = _evaluate(src.stimulus_intra, context.healthy_points, 0.0,
                       "stimulus_intra")
        rhs[:dm.n_u_healthy] += context.healthy_weights * f1
    if src.stimulus_extra is not None:
        f2 = _evaluate(src.stimulus_extra, context.healthy_points, 0.0,
                       "stimulus_extra")
        rhs[:dm.n_u_healthy] -= context.healthy_weights * f2
    if src.stimulus_damaged is not None:
        fd = _evaluate(src.stimulus_damaged, context.damaged_points, 0.0,
                       "stimulus_damaged")
        rhs[dm.n_u_healthy:] += context.damaged_weights * fd
    if src.flux_mismatch_intra is not None:
        g1 = _evaluate(src.flux_mismatch_intra, context.gamma_points, 0.0,
                       "flux_mismatch_intra")
        rhs -= interface_load_from_values(dm, ops.interface_mass, g1,
                                          "healthy_trace")
    if src.flux_mismatch_extra is not None:
        g2 = _evaluate(src.flux_mismatch_extra, context.gamma_points, 0.0,
                       "flux_mismatch_extra")
        rhs -= interface_load_from_values(dm, ops.interface_mass, g2,
                                          "healthy_trace")
        rhs += interface_load_from_values(dm, ops.interface_mass, g2, "jump")
    rhs[:dm.n_u_healthy] -= ops.stiffness_intra @ v0
    u0 = solve_constrained_jump(k_u, rhs, s0, context.elimination,
                                tol=cfg.cg_tol, maxiter=cfg.cg_maxiter)
    return State(t=0.0, v=v0, u=u0, w=w0)


def make_record(context: StepContext, step_index: int, state: State,
                cg_iterations: int, cg_residual: float) -> StepRecord:
    dm = context.dofmap
    ops = context.operators
    u_h = state.u[:dm.n_u_healthy]
    u_d = state.u[dm.n_u_healthy:]
    jump = interface_jump(state, dm)
    v_mass = float(state.v @ (ops.mass_healthy @ state.v))
    jump_mass = float(jump @ (ops.interface_mass @ jump))
    return StepRecord(
        step=step_index,
        t=state.t,
        v_mass_sq=v_mass,
        grad_v_sq=float(state.v @ (context.unit_stiffness_healthy @ state.v)),
        grad_u_healthy_sq=float(u_h @ (context.unit_stiffness_healthy @ u_h)),
        grad_u_damaged_sq=float(u_d @ (context.unit_stiffness_damaged @ u_d)),
        jump_mass_sq=jump_mass,
        energy=0.5 * v_mass + 0.5 * context.config.capacitance * jump_mass,
        cg_iterations=cg_iterations,
        cg_residual=cg_residual,
    )


def run(mesh: Mesh, conductivities: Conductivities, ionic: IonicModel | None,
        config: StepperConfig, sources: SourceSet | None = None,
        initial: InitialData | None = None) -> Trajectory:
    """Integrate from t = 0 to t_end and collect the per-step ledger.

    Yields ceil(t_end/dt) steps at exact multiples of dt.  Snapshots keep
    the initial state, every record_every-th step, and the final step.
    """
    context = build_step_context(mesh, conductivities, ionic, config, sources)
    state = initialize_state(context, initial)
    records = [make_record(context, 0, state, 0, 0.0)]
    snapshots = [state]
    n_steps = config.n_steps
    for n in range(1, n_steps + 1):
        t_new = n * config.dt
        state, iterations, residual = step(context, state, t_new)
        records.append(make_record(context, n, state, iterations, residual))
        if n % config.record_every == 0 or n == n_steps:
            snapshots.append(state)
    return Trajectory(config=config, records=records, snapshots=snapshots,
                      final_state=state)
