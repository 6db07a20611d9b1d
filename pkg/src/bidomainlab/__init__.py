"""Finite-element laboratory for bidomain tissue coupled to a passive inclusion.

The package simulates a two-potential (bidomain) model of electrically active
tissue occupying part of the domain, coupled across an internal membrane to a
passive diffusive region, with a capacitive-resistive exchange law on the
membrane and a one-gate ionic model in the active region.  Besides the time
stepper it ships the verification machinery used to check the scheme: energy
ledgers, a jump-lifting construction, coercivity estimates for the underlying
bilinear form, manufactured-solution convergence studies, and a source-shift
equivalence check.
"""

from .analysis import (beta_limit_study, bilinear_form, build_workspace,
                       coercivity_estimate, energy_inequality_study,
                       energy_report, h_half_norm_sq, mms_convergence,
                       mms_temporal_convergence, shifted_equivalence_check,
                       solve_lifting, stability_study, two_stage_lifting)
from .cli_io import (RunConfig, execute_run, main, parse_config,
                     serialize_config, write_csv_series, write_vtk_snapshot)
from .discretization import build_dof_map, build_operators
from .errors import (ConfigurationError, NonConvergenceError,
                     NumericBreakdownError, SingularMatrixError)
from .manufactured import (stationary_case_1d, transient_case_1d,
                           transient_case_2d)
from .mesh import (BoundaryMarker, CaseTag, Mesh, Region,
                   build_inclusion_mesh, build_interval_mesh,
                   build_split_rectangle_mesh, validate_mesh)
from .model import (IonicModel, gating_exact_step, make_conductivities,
                    make_ionic_model, register_ionic_model)
from .stepper import (InitialData, SourceSet, State, StepperConfig,
                      Trajectory, interface_jump, recover_potentials, run)

__all__ = [
    "ConfigurationError",
    "NonConvergenceError",
    "NumericBreakdownError",
    "SingularMatrixError",
    "BoundaryMarker",
    "CaseTag",
    "Mesh",
    "Region",
    "build_inclusion_mesh",
    "build_interval_mesh",
    "build_split_rectangle_mesh",
    "validate_mesh",
    "build_dof_map",
    "build_operators",
    "IonicModel",
    "gating_exact_step",
    "make_conductivities",
    "make_ionic_model",
    "register_ionic_model",
    "InitialData",
    "SourceSet",
    "State",
    "StepperConfig",
    "Trajectory",
    "interface_jump",
    "recover_potentials",
    "run",
    "stationary_case_1d",
    "transient_case_1d",
    "transient_case_2d",
    "build_workspace",
    "solve_lifting",
    "two_stage_lifting",
    "h_half_norm_sq",
    "bilinear_form",
    "coercivity_estimate",
    "energy_report",
    "energy_inequality_study",
    "shifted_equivalence_check",
    "mms_convergence",
    "mms_temporal_convergence",
    "stability_study",
    "beta_limit_study",
    "RunConfig",
    "parse_config",
    "serialize_config",
    "execute_run",
    "write_csv_series",
    "write_vtk_snapshot",
    "main",
]
