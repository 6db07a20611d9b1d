"""Configuration parsing, run orchestration, and bit-stable text output.

Configs are TOML documents validated against a strict allowlist: unknown
keys are rejected with their full key path, every constraint violation
names the offending key, and parsing is total (a config either yields a
complete RunConfig or an error, never a partial one).  Outputs are plain
text (CSV series, legacy ASCII VTK snapshots) written deterministically,
so identical configs produce byte-identical files.

The command-line entry point exposes the verification studies as
subcommands; each prints PASS/FAIL verdict lines and exits nonzero when a
verdict fails, so the laboratory can gate a CI pipeline.
"""

from __future__ import annotations

import io
import math
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                       # Python < 3.11
    import tomli as tomllib

from . import analysis
from .discretization import build_dof_map
from .errors import (ConfigurationError, NonConvergenceError,
                     NumericBreakdownError, SingularMatrixError)
from .manufactured import transient_case_1d, transient_case_2d
from .mesh import (Mesh, build_inclusion_mesh, build_interval_mesh,
                   build_split_rectangle_mesh)
from .model import make_conductivities, make_ionic_model
from .stepper import (InitialData, SourceSet, State, StepperConfig,
                      Trajectory, run)

COMMANDS = ("run", "mms", "energy", "coercivity", "beta-sweep", "stability")
MESH_BUILDERS = ("interval", "split_rectangle", "inclusion")
IONIC_MODELS = ("off", "sigmoid_gate", "linear_current")
OUTDIR_ENV_VAR = "BIDOMAINLAB_OUTDIR"


# ---------------------------------------------------------------------------
# analytic presets for sources and initial data


def _zero_preset(points, t=0.0):
    return np.zeros(len(points))


def _sine_product(points):
    out = np.sin(np.pi * points[:, 0])
    if points.shape[1] > 1:
        out = out * np.sin(np.pi * points[:, 1])
    return out


def _edge_bump(points):
    out = points[:, 0] * (1.0 - points[:, 0])
    if points.shape[1] > 1:
        out = out * np.sin(np.pi * points[:, 1])
    return out


STIMULUS_PRESETS = {
    "zero": None,
    "sine_pulse": lambda p, t: _sine_product(p) * (1.0 + 0.5 * np.cos(2.0 * t)),
    "ramp_bump": lambda p, t: _edge_bump(p) * (0.3 + 0.1 * t),
}

FIELD_PRESETS = {
    "zero": None,
    "sine_product": lambda p: _sine_product(p),
    "edge_bump": lambda p: _edge_bump(p),
    "uniform_one": lambda p: np.ones(len(p)),
}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class MeshSpec:
    builder: str = "split_rectangle"
    n_healthy: int = 8          # interval
    n_damaged: int = 8          # interval
    nx: int = 8                 # split_rectangle
    ny: int = 8                 # split_rectangle
    split: float = 0.5          # interval and split_rectangle
    n: int = 8                  # inclusion
    box: tuple = (2, 6, 2, 6)   # inclusion

    def build(self) -> Mesh:
        if self.builder == "interval":
            return build_interval_mesh(self.n_healthy, self.n_damaged,
                                       self.split)
        if self.builder == "split_rectangle":
            return build_split_rectangle_mesh(self.nx, self.ny, self.split)
        return build_inclusion_mesh(self.n, self.box)

    def refined(self) -> "MeshSpec":
        """The same geometry at twice the resolution."""
        return replace(self, n_healthy=2 * self.n_healthy,
                       n_damaged=2 * self.n_damaged, nx=2 * self.nx,
                       ny=2 * self.ny, n=2 * self.n,
                       box=tuple(2 * b for b in self.box))


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run description.

    Defaults: unit conductivities, capacitance 1, conductance 1, ionic off,
    zero sources and initial data, dt 1e-3, horizon 0.05, an 8x8 split
    rectangle, and output under ./out.  An empty document is a valid
    config.
    """

    command: str = "run"
    mesh: MeshSpec = field(default_factory=MeshSpec)
    conductivity_intra: float = 1.0
    conductivity_extra: float = 1.0
    conductivity_damaged: float = 1.0
    capacitance: float = 1.0
    conductance: float = 1.0
    ionic_model: str = "off"
    w_init: float = 0.0
    stimulus_intra: str = "zero"
    stimulus_extra: str = "zero"
    stimulus_damaged: str = "zero"
    v0: str = "zero"
    s0: str = "zero"
    dt: float = 1e-3
    t_end: float = 0.05
    record_every: int = 1
    outdir: str = "out"


class _ConfigReader:
    """Strict section/key walker that tracks consumed keys."""

    def __init__(self, data: dict, path: str = ""):
        if not isinstance(data, dict):
            raise ConfigurationError(
                f"config section {path or '<root>'} must be a table")
        self.data = data
        self.path = path
        self.used = set()

    def _full(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def section(self, key: str) -> "_ConfigReader":
        self.used.add(key)
        return _ConfigReader(self.data.get(key, {}), self._full(key))

    def value(self, key: str, kind, default):
        self.used.add(key)
        if key not in self.data:
            return default
        raw = self.data[key]
        if kind is float and isinstance(raw, int) and not isinstance(raw, bool):
            raw = float(raw)
        if kind is not None and (not isinstance(raw, kind)
                                 or isinstance(raw, bool)):
            raise ConfigurationError(
                f"config key {self._full(key)} must be "
                f"{getattr(kind, '__name__', kind)}, got {type(raw).__name__}")
        return raw

    def choice(self, key: str, options, default: str) -> str:
        out = self.value(key, str, default)
        if out not in options:
            raise ConfigurationError(
                f"config key {self._full(key)} must be one of "
                f"{', '.join(options)}; got {out!r}")
        return out

    def reject_unknown(self):
        unknown = sorted(set(self.data) - self.used)
        if unknown:
            raise ConfigurationError(
                f"unknown config key {self._full(unknown[0])}")


def _require_positive(value: float, key: str) -> float:
    if not (value > 0.0):
        raise ConfigurationError(f"config key {key} must be > 0, got {value}")
    return value


def _require_nonnegative(value: float, key: str) -> float:
    if not (value >= 0.0):
        raise ConfigurationError(f"config key {key} must be >= 0, got {value}")
    return value


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a TOML config document.

    Unknown keys anywhere are rejected, each error names the offending key
    path, and all module preconditions are enforced here so a returned
    RunConfig always builds.
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config is not valid TOML: {exc}") from exc
    root = _ConfigReader(data)

    command = root.choice("command", COMMANDS, "run")

    mesh_sec = root.section("mesh")
    builder = mesh_sec.choice("builder", MESH_BUILDERS, "split_rectangle")
    box_raw = mesh_sec.value("box", list, list(MeshSpec().box))
    if len(box_raw) != 4 or not all(
            isinstance(b, int) and not isinstance(b, bool) for b in box_raw):
        raise ConfigurationError(
            "config key mesh.box must be a list of four integers")
    mesh_spec = MeshSpec(
        builder=builder,
        n_healthy=mesh_sec.value("n_healthy", int, MeshSpec.n_healthy),
        n_damaged=mesh_sec.value("n_damaged", int, MeshSpec.n_damaged),
        nx=mesh_sec.value("nx", int, MeshSpec.nx),
        ny=mesh_sec.value("ny", int, MeshSpec.ny),
        split=mesh_sec.value("split", float, MeshSpec.split),
        n=mesh_sec.value("n", int, MeshSpec.n),
        box=tuple(box_raw),
    )
    mesh_sec.reject_unknown()

    cond_sec = root.section("conductivity")
    intra = _require_positive(cond_sec.value("intra", float, 1.0),
                              "conductivity.intra")
    extra = _require_positive(cond_sec.value("extra", float, 1.0),
                              "conductivity.extra")
    damaged = _require_positive(cond_sec.value("damaged", float, 1.0),
                                "conductivity.damaged")
    cond_sec.reject_unknown()

    iface = root.section("interface")
    capacitance = _require_positive(iface.value("capacitance", float, 1.0),
                                    "interface.capacitance")
    conductance = _require_nonnegative(iface.value("conductance", float, 1.0),
                                       "interface.conductance")
    iface.reject_unknown()

    ionic = root.section("ionic")
    ionic_model = ionic.choice("model", IONIC_MODELS, "off")
    w_init = ionic.value("w_init", float, 0.0)
    if not (0.0 <= w_init <= 1.0):
        raise ConfigurationError(
            f"config key ionic.w_init must lie in [0, 1], got {w_init}")
    ionic.reject_unknown()

    sources = root.section("sources")
    stim_names = {}
    for key in ("stimulus_intra", "stimulus_extra", "stimulus_damaged"):
        stim_names[key] = sources.choice(key, tuple(STIMULUS_PRESETS), "zero")
    sources.reject_unknown()

    initial = root.section("initial")
    v0 = initial.choice("v0", tuple(FIELD_PRESETS), "zero")
    s0 = initial.choice("s0", tuple(FIELD_PRESETS), "zero")
    initial.reject_unknown()

    time_sec = root.section("time")
    dt = _require_positive(time_sec.value("dt", float, 1e-3), "time.dt")
    t_end = _require_nonnegative(time_sec.value("t_end", float, 0.05),
                                 "time.t_end")
    record_every = time_sec.value("record_every", int, 1)
    if record_every < 1:
        raise ConfigurationError(
            f"config key time.record_every must be >= 1, got {record_every}")
    time_sec.reject_unknown()

    output = root.section("output")
    outdir = output.value("directory", str, "out")
    output.reject_unknown()

    root.reject_unknown()
    return RunConfig(
        command=command, mesh=mesh_spec, conductivity_intra=intra,
        conductivity_extra=extra, conductivity_damaged=damaged,
        capacitance=capacitance, conductance=conductance,
        ionic_model=ionic_model, w_init=w_init,
        stimulus_intra=stim_names["stimulus_intra"],
        stimulus_extra=stim_names["stimulus_extra"],
        stimulus_damaged=stim_names["stimulus_damaged"],
        v0=v0, s0=s0, dt=dt, t_end=t_end, record_every=record_every,
        outdir=outdir)


def serialize_config(config: RunConfig) -> str:
    """Emit a TOML document that parses back to an equal RunConfig."""
    def fmt(value):
        if isinstance(value, bool):
            raise ConfigurationError("no boolean config values exist")
        if isinstance(value, float):
            return repr(value)
        if isinstance(value, int):
            return str(value)
        return f'"{value}"'

    m = config.mesh
    lines = [
        f"command = {fmt(config.command)}",
        "",
        "[mesh]",
        f"builder = {fmt(m.builder)}",
        f"n_healthy = {m.n_healthy}",
        f"n_damaged = {m.n_damaged}",
        f"nx = {m.nx}",
        f"ny = {m.ny}",
        f"split = {fmt(m.split)}",
        f"n = {m.n}",
        f"box = [{', '.join(str(b) for b in m.box)}]",
        "",
        "[conductivity]",
        f"intra = {fmt(config.conductivity_intra)}",
        f"extra = {fmt(config.conductivity_extra)}",
        f"damaged = {fmt(config.conductivity_damaged)}",
        "",
        "[interface]",
        f"capacitance = {fmt(config.capacitance)}",
        f"conductance = {fmt(config.conductance)}",
        "",
        "[ionic]",
        f"model = {fmt(config.ionic_model)}",
        f"w_init = {fmt(config.w_init)}",
        "",
        "[sources]",
        f"stimulus_intra = {fmt(config.stimulus_intra)}",
        f"stimulus_extra = {fmt(config.stimulus_extra)}",
        f"stimulus_damaged = {fmt(config.stimulus_damaged)}",
        "",
        "[initial]",
        f"v0 = {fmt(config.v0)}",
        f"s0 = {fmt(config.s0)}",
        "",
        "[time]",
        f"dt = {fmt(config.dt)}",
        f"t_end = {fmt(config.t_end)}",
        f"record_every = {config.record_every}",
        "",
        "[output]",
        f"directory = {fmt(config.outdir)}",
        "",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# building run ingredients from a config


def sources_from_config(config: RunConfig) -> SourceSet:
    return SourceSet(
        stimulus_intra=STIMULUS_PRESETS[config.stimulus_intra],
        stimulus_extra=STIMULUS_PRESETS[config.stimulus_extra],
        stimulus_damaged=STIMULUS_PRESETS[config.stimulus_damaged])


def initial_from_config(config: RunConfig) -> InitialData:
    w0 = config.w_init if config.ionic_model != "off" else None
    return InitialData(v0=FIELD_PRESETS[config.v0],
                       s0=FIELD_PRESETS[config.s0], w0=w0)


def stepper_config_from(config: RunConfig) -> StepperConfig:
    return StepperConfig(dt=config.dt, t_end=config.t_end,
                         capacitance=config.capacitance,
                         conductance=config.conductance,
                         ionic_enabled=config.ionic_model != "off",
                         record_every=config.record_every)


def execute_run(config: RunConfig) -> tuple:
    """Build everything from the config and run; returns (mesh, trajectory)."""
    mesh = config.mesh.build()
    conductivities = make_conductivities(mesh, config.conductivity_intra,
                                         config.conductivity_extra,
                                         config.conductivity_damaged)
    ionic = (make_ionic_model(config.ionic_model)
             if config.ionic_model != "off" else None)
    trajectory = run(mesh, conductivities, ionic, stepper_config_from(config),
                     sources=sources_from_config(config),
                     initial=initial_from_config(config))
    return mesh, trajectory


# ---------------------------------------------------------------------------
# text outputs


CSV_COLUMNS = ("step", "t", "v_l2", "jump_l2", "energy", "grad_v_sq",
               "grad_u_healthy_sq", "grad_u_damaged_sq", "cg_iterations")


def write_csv_series(trajectory: Trajectory, path: str) -> None:
    """Write per-step diagnostics as CSV: header plus one row per step.

    The initial level is not a step and gets no row.  Floats carry 17
    significant digits and lines end with LF, so reruns of the same config
    are byte-identical.
    """
    out = io.StringIO()
    out.write(",".join(CSV_COLUMNS) + "\n")
    for record in trajectory.records[1:]:
        row = (str(record.step),
               f"{record.t:.17g}",
               f"{math.sqrt(record.v_mass_sq):.17g}",
               f"{math.sqrt(record.jump_mass_sq):.17g}",
               f"{record.energy:.17g}",
               f"{record.grad_v_sq:.17g}",
               f"{record.grad_u_healthy_sq:.17g}",
               f"{record.grad_u_damaged_sq:.17g}",
               str(record.cg_iterations))
        out.write(",".join(row) + "\n")
    with open(path, "w", newline="\n") as handle:
        handle.write(out.getvalue())


def write_vtk_snapshot(mesh: Mesh, dofmap, state: State, path: str) -> None:
    """Write one state as a legacy ASCII VTK unstructured grid (2D only).

    Point data: the transmembrane potential and the healthy-side tissue
    potential (zero-padded onto Dirichlet and damaged-only vertices), the
    damaged-side tissue potential (zero-padded likewise), and the gating
    field.  The interface duplication is visible as the two tissue fields
    disagreeing on interface vertices.
    """
    if mesh.dim != 2:
        raise ConfigurationError(
            f"VTK snapshots are for 2D meshes, got dim {mesh.dim}")
    n = mesh.n_vertices
    v_field = np.zeros(n)
    v_field[dofmap.healthy_vertices] = state.v
    u_healthy = np.zeros(n)
    u_healthy[dofmap.healthy_vertices] = state.u[:dofmap.n_u_healthy]
    u_damaged = np.zeros(n)
    u_damaged[dofmap.damaged_vertices] = state.u[dofmap.n_u_healthy:]
    gating = np.zeros(n)
    if state.w.size:
        gating[dofmap.healthy_vertices] = state.w

    out = io.StringIO()
    out.write("# vtk DataFile Version 3.0\n")
    out.write(f"tissue state at t={state.t:.17g}\n")
    out.write("ASCII\n")
    out.write("DATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {n} double\n")
    for x, y in mesh.vertices:
        out.write(f"{x:.17g} {y:.17g} 0\n")
    n_cells = mesh.n_cells
    out.write(f"CELLS {n_cells} {4 * n_cells}\n")
    for cell in mesh.cells:
        out.write(f"3 {cell[0]} {cell[1]} {cell[2]}\n")
    out.write(f"CELL_TYPES {n_cells}\n")
    for _ in range(n_cells):
        out.write("5\n")
    out.write(f"POINT_DATA {n}\n")
    for name, values in (("transmembrane", v_field),
                         ("tissue_healthy", u_healthy),
                         ("tissue_damaged", u_damaged),
                         ("gating", gating)):
        out.write(f"SCALARS {name} double 1\n")
        out.write("LOOKUP_TABLE default\n")
        for value in values:
            out.write(f"{value:.17g}\n")
    with open(path, "w", newline="\n") as handle:
        handle.write(out.getvalue())


def read_vtk_snapshot(path: str) -> dict:
    """Minimal legacy-VTK reader for checking our own snapshots.

    Returns points, cells, and the point-data arrays by name.  Only the
    exact subset of the format written by write_vtk_snapshot is supported.
    """
    with open(path) as handle:
        lines = [line.rstrip("\n") for line in handle]
    if (len(lines) < 5 or not lines[0].startswith("# vtk DataFile")
            or lines[2] != "ASCII" or lines[3] != "DATASET UNSTRUCTURED_GRID"):
        raise ConfigurationError(f"{path} is not a legacy ASCII VTK file")
    idx = 4

    def expect(prefix):
        nonlocal idx
        if not lines[idx].startswith(prefix):
            raise ConfigurationError(
                f"{path}: expected {prefix!r} at line {idx + 1}")
        parts = lines[idx].split()
        idx += 1
        return parts

    parts = expect("POINTS")
    n_points = int(parts[1])
    points = np.array([[float(v) for v in lines[idx + k].split()]
                       for k in range(n_points)])
    idx += n_points
    parts = expect("CELLS")
    n_cells = int(parts[1])
    cells = np.array([[int(v) for v in lines[idx + k].split()[1:]]
                      for k in range(n_cells)], dtype=int)
    idx += n_cells
    expect("CELL_TYPES")
    cell_types = [int(lines[idx + k]) for k in range(n_cells)]
    idx += n_cells
    expect("POINT_DATA")
    data = {}
    while idx < len(lines) and lines[idx].startswith("SCALARS"):
        name = lines[idx].split()[1]
        idx += 2                         # SCALARS line + LOOKUP_TABLE line
        data[name] = np.array([float(lines[idx + k])
                               for k in range(n_points)])
        idx += n_points
    return {"points": points, "cells": cells, "cell_types": cell_types,
            "point_data": data}


# ---------------------------------------------------------------------------
# study runners for the verification subcommands


def _verdict(label: str, passed: bool, detail: str) -> tuple:
    word = "PASS" if passed else "FAIL"
    return passed, f"{word} {label}: {detail}"


def _run_study_run(config: RunConfig, outdir: str, seed: int) -> tuple:
    mesh, trajectory = execute_run(config)
    series_path = os.path.join(outdir, "series.csv")
    write_csv_series(trajectory, series_path)
    lines = [f"completed {len(trajectory.records) - 1} steps, "
             f"final t = {trajectory.final_state.t:.17g}",
             f"wrote {series_path}"]
    if mesh.dim == 2:
        dofmap = build_dof_map(mesh)
        snap_path = os.path.join(outdir, "final_state.vtk")
        write_vtk_snapshot(mesh, dofmap, trajectory.final_state, snap_path)
        lines.append(f"wrote {snap_path}")
    return True, lines


def _run_study_mms(config: RunConfig, outdir: str, seed: int) -> tuple:
    lines = []
    verdicts = []
    tables = [("spatial-1d", analysis.mms_convergence(transient_case_1d())),
              ("spatial-2d", analysis.mms_convergence(transient_case_2d(),
                                                      levels=4))]
    rows_out = ["study,level,h,dt,error_v,error_u"]
    for label, table in tables:
        for row in table.rows:
            rows_out.append(f"{label},{row.level},{row.h:.17g},{row.dt:.17g},"
                            f"{row.error_v:.17g},{row.error_u:.17g}")
        rate_v = table.rates_v[-1]
        rate_u = table.rates_u[-1]
        lines.append(f"{label}: rate_v = {rate_v:.3f}, rate_u = {rate_u:.3f}")
        ok, line = _verdict(f"mms {label}", rate_v >= 1.9 and rate_u >= 1.9,
                            f"rates {rate_v:.3f}/{rate_u:.3f} vs >= 1.9")
        verdicts.append(ok)
        lines.append(line)
    temporal = analysis.mms_temporal_convergence(transient_case_1d())
    for row in temporal.rows:
        rows_out.append(f"temporal-1d,{row.level},{row.h:.17g},{row.dt:.17g},"
                        f"{row.error_v:.17g},{row.error_u:.17g}")
    rate_t = min(temporal.rates_v[-1], temporal.rates_u[-1])
    ok, line = _verdict("mms temporal", rate_t >= 0.9,
                        f"rate {rate_t:.3f} vs >= 0.9")
    verdicts.append(ok)
    lines.append(line)
    path = os.path.join(outdir, "mms_rates.csv")
    with open(path, "w", newline="\n") as handle:
        handle.write("\n".join(rows_out) + "\n")
    lines.append(f"wrote {path}")
    return all(verdicts), lines


def _run_study_energy(config: RunConfig, outdir: str, seed: int) -> tuple:
    lines = []
    # decay: zero sources, random initial data, energy non-increasing
    mesh = config.mesh.build()
    conductivities = make_conductivities(mesh, config.conductivity_intra,
                                         config.conductivity_extra,
                                         config.conductivity_damaged)
    rng = np.random.default_rng(seed)
    coeff_v = rng.normal(size=3)
    coeff_s = rng.normal()

    def v0(points):
        out = np.zeros(len(points))
        for k, a in enumerate(coeff_v):
            term = np.sin((k + 1) * np.pi * points[:, 0])
            if points.shape[1] > 1:
                term = term * np.sin((k + 1) * np.pi * points[:, 1])
            out += a * term
        return out

    cfg = StepperConfig(dt=config.dt, t_end=config.t_end,
                        capacitance=config.capacitance,
                        conductance=config.conductance, ionic_enabled=False)
    trajectory = run(mesh, conductivities, None, cfg,
                     initial=InitialData(v0=v0, s0=lambda p: np.full(
                         len(p), coeff_s)))
    energies = trajectory.energies
    slack = 1e-12 * max(energies[0], 1.0)
    decay_ok = bool(np.all(np.diff(energies) <= slack))
    ok1, line = _verdict("energy decay", decay_ok,
                         f"max increase {max(np.diff(energies).max(), 0.0):.3e}"
                         f" vs slack {slack:.3e}")
    lines.append(line)

    # inequality: randomized datasets on the config mesh and one refinement
    study = analysis.energy_inequality_study(
        [config.mesh.build(), config.mesh.refined().build()],
        conductivity=(config.conductivity_intra, config.conductivity_extra,
                      config.conductivity_damaged),
        capacitance=config.capacitance, conductance=config.conductance,
        n_samples=20, seed=seed)
    factor = study.worst_refined_factor
    ok2, line = _verdict("energy inequality", factor <= 2.0,
                         f"calibrated C = {study.calibrated_constant:.6g}, "
                         f"refined within factor {factor:.3f} vs <= 2")
    lines.append(line)
    return ok1 and ok2, lines


def _run_study_coercivity(config: RunConfig, outdir: str, seed: int) -> tuple:
    lines = []
    verdicts = []
    rng = np.random.default_rng(seed)

    # symmetry probes on the configured mesh
    mesh = config.mesh.build()
    conductivities = make_conductivities(mesh, config.conductivity_intra,
                                         config.conductivity_extra,
                                         config.conductivity_damaged)
    workspace = analysis.build_workspace(mesh, conductivities)
    dm = workspace.dofmap
    worst = 0.0
    for _ in range(50):
        x = (rng.normal(size=dm.n_v), rng.normal(size=dm.n_gamma))
        y = (rng.normal(size=dm.n_v), rng.normal(size=dm.n_gamma))
        axy = analysis.bilinear_form(workspace, config.conductance, x, y)
        ayx = analysis.bilinear_form(workspace, config.conductance, y, x)
        axx = analysis.bilinear_form(workspace, config.conductance, x, x)
        ayy = analysis.bilinear_form(workspace, config.conductance, y, y)
        worst = max(worst, abs(axy - ayx) / max(abs(axx) + abs(ayy), 1e-300))
    ok, line = _verdict("bilinear symmetry", worst <= 1e-12,
                        f"worst relative asymmetry {worst:.3e} vs <= 1e-12")
    verdicts.append(ok)
    lines.append(line)

    meshes = [("interval", build_interval_mesh(8, 8, 0.5)),
              ("split_rectangle", build_split_rectangle_mesh(4, 4, 0.5)),
              ("inclusion", build_inclusion_mesh(6, (2, 4, 2, 4)))]
    for name, probe in meshes:
        ws = analysis.build_workspace(
            probe, make_conductivities(probe, config.conductivity_intra,
                                       config.conductivity_extra,
                                       config.conductivity_damaged))
        c_min = analysis.coercivity_estimate(ws, config.conductance)
        ok, line = _verdict(f"coercivity {name}", c_min > 0.0,
                            f"c_min = {c_min:.6g} vs > 0")
        verdicts.append(ok)
        lines.append(line)

    coarse_ws = analysis.build_workspace(
        build_split_rectangle_mesh(4, 4, 0.5),
        make_conductivities(build_split_rectangle_mesh(4, 4, 0.5),
                            config.conductivity_intra,
                            config.conductivity_extra,
                            config.conductivity_damaged))
    fine_ws = analysis.build_workspace(
        build_split_rectangle_mesh(8, 8, 0.5),
        make_conductivities(build_split_rectangle_mesh(8, 8, 0.5),
                            config.conductivity_intra,
                            config.conductivity_extra,
                            config.conductivity_damaged))
    ratio = (analysis.coercivity_estimate(fine_ws, config.conductance)
             / analysis.coercivity_estimate(coarse_ws, config.conductance))
    ok, line = _verdict("coercivity refinement", ratio >= 0.5,
                        f"ratio {ratio:.3f} vs >= 0.5")
    verdicts.append(ok)
    lines.append(line)
    return all(verdicts), lines


def _run_study_beta(config: RunConfig, outdir: str, seed: int) -> tuple:
    mesh = config.mesh.build()
    conductivities = make_conductivities(mesh, config.conductivity_intra,
                                         config.conductivity_extra,
                                         config.conductivity_damaged)
    initial = InitialData(v0=FIELD_PRESETS["sine_product"],
                          s0=FIELD_PRESETS["uniform_one"])
    result = analysis.beta_limit_study(mesh, conductivities,
                                       [10.0, 100.0, 1000.0, 10000.0],
                                       capacitance=config.capacitance,
                                       initial=initial)
    rows = ["conductance,jump_norm,distance_to_perfect"]
    for row in result.rows:
        rows.append(f"{row.conductance:.17g},{row.jump_norm:.17g},"
                    f"{row.distance_to_perfect:.17g}")
    path = os.path.join(outdir, "beta_sweep.csv")
    with open(path, "w", newline="\n") as handle:
        handle.write("\n".join(rows) + "\n")
    distances = result.distances
    monotone = bool(np.all(np.diff(distances) <= 1e-15))
    ok1, line1 = _verdict("beta slope", -0.65 <= result.slope <= -0.35,
                          f"slope {result.slope:.3f} vs [-0.65, -0.35]")
    ok2, line2 = _verdict("beta limit monotone", monotone,
                          "distance to perfect coupling non-increasing"
                          if monotone else "distance to perfect increased")
    return ok1 and ok2, [line1, line2, f"wrote {path}"]


def _run_study_stability(config: RunConfig, outdir: str, seed: int) -> tuple:
    lines = []
    mesh = config.mesh.build()
    conductivities = make_conductivities(mesh, config.conductivity_intra,
                                         config.conductivity_extra,
                                         config.conductivity_damaged)
    # determinism: identical configs give bitwise-identical trajectories
    cfg = StepperConfig(dt=0.025, t_end=0.1, capacitance=config.capacitance,
                        conductance=config.conductance, ionic_enabled=False)
    initial = InitialData(v0=FIELD_PRESETS["sine_product"])
    t_a = run(mesh, conductivities, None, cfg, initial=initial)
    t_b = run(mesh, conductivities, None, cfg, initial=initial)
    bitwise = (np.array_equal(t_a.final_state.v, t_b.final_state.v)
               and np.array_equal(t_a.final_state.u, t_b.final_state.u))
    ok1, line = _verdict("stability determinism", bitwise,
                         "identical runs bitwise equal" if bitwise
                         else "identical runs diverged")
    lines.append(line)

    linear = analysis.stability_study(mesh, conductivities, None, t_end=0.2,
                                      capacitance=config.capacitance,
                                      conductance=config.conductance,
                                      seed=seed)
    worst_lin = max(row.amplification for row in linear.rows)
    ok2, line = _verdict("stability linear", worst_lin <= 1.0 + 1e-10,
                         f"amplification {worst_lin:.12f} vs <= 1 + 1e-10")
    lines.append(line)

    model = make_ionic_model("sigmoid_gate")
    ionic = analysis.stability_study(mesh, conductivities, model, t_end=0.2,
                                     capacitance=config.capacitance,
                                     conductance=config.conductance,
                                     seed=seed)
    finite = all(np.isfinite(row.amplification) for row in ionic.rows)
    ratios_ok = True
    for delta in (1e-2, 1e-4):
        coarse = ionic.amplification(delta, 0.025)
        fine = ionic.amplification(delta, 0.0125)
        ratio = fine / coarse
        ratios_ok = ratios_ok and 0.8 <= ratio <= 1.25
    ok3, line = _verdict("stability ionic", finite and ratios_ok,
                         f"amplifications finite={finite}, "
                         f"dt-ratio within [0.8, 1.25]={ratios_ok}, "
                         f"envelope {ionic.gronwall_bound:.3f}")
    lines.append(line)
    return ok1 and ok2 and ok3, lines


STUDY_RUNNERS = {
    "run": _run_study_run,
    "mms": _run_study_mms,
    "energy": _run_study_energy,
    "coercivity": _run_study_coercivity,
    "beta-sweep": _run_study_beta,
    "stability": _run_study_stability,
}

USAGE = ("usage: bidomainlab {run|mms|energy|coercivity|beta-sweep|stability}"
         " --config <path> [--out <dir>] [--seed <u64>]")


def main(argv=None) -> int:
    """Command-line entry point; returns the process exit status.

    The output directory is resolved as --out if given, else the
    BIDOMAINLAB_OUTDIR environment variable, else the config's
    output.directory.  Verification subcommands print PASS/FAIL verdict
    lines and fail the process when any verdict fails.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE)
        return 0 if argv else 2
    command = argv[0]
    if command not in COMMANDS:
        print(f"unknown subcommand {command!r}", file=sys.stderr)
        print(USAGE, file=sys.stderr)
        return 2

    config_path = None
    out_override = None
    seed = 0
    rest = argv[1:]
    try:
        i = 0
        while i < len(rest):
            flag = rest[i]
            if flag in ("--config", "--out", "--seed"):
                if i + 1 >= len(rest):
                    raise ConfigurationError(f"{flag} needs a value")
                value = rest[i + 1]
                if flag == "--config":
                    config_path = value
                elif flag == "--out":
                    out_override = value
                else:
                    seed = int(value)
                    if not (0 <= seed < 2 ** 64):
                        raise ConfigurationError(
                            f"--seed must be an unsigned 64-bit value, "
                            f"got {value}")
                i += 2
            else:
                raise ConfigurationError(f"unknown argument {flag!r}")
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(USAGE, file=sys.stderr)
        return 2

    try:
        if config_path is None:
            config = RunConfig()
        else:
            with open(config_path) as handle:
                config = parse_config(handle.read())
        config = replace(config, command=command)
        outdir = (out_override
                  or os.environ.get(OUTDIR_ENV_VAR)
                  or config.outdir)
        os.makedirs(outdir, exist_ok=True)
        passed, lines = STUDY_RUNNERS[command](config, outdir, seed)
    except (ConfigurationError, NonConvergenceError, NumericBreakdownError,
            SingularMatrixError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for line in lines:
        print(line)
    if not passed:
        print("verdict: FAIL", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
