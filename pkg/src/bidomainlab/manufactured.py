"""Manufactured solutions with hand-derived sources.

Each case prescribes smooth exact fields per region and derives, by hand,
every source the solver accepts so that the fields solve the full coupled
system including the interface law.  The derivations below use the split
geometries (healthy region x < s, damaged region x > s), whose interface
normal, oriented from the damaged into the healthy side, is -e_x.  All
conductivities are 1, the ionic term is off.

Transient 1D case, s = split, decay = exp(-t), c = damaged amplitude:

    V   = decay * sin(pi x / s)
    U_B = decay * x / s
    U_D = -c * decay * (1 - x) / (1 - s)
    [U] = (1 + c) * decay

    f1  = dV/dt - (V + U_B)''       = ((pi/s)^2 - 1) V
    f2  = f1 - ( -(V+U_B)'' - U_B'' ) ... constant-coefficient sum
        = -V
    f_d = -U_D''                    = 0            (U_D linear in x)
    g1  = (V + U_B)'(s) * n         = decay (pi - 1)/s
          [V'(s) = -(pi/s) decay, U_B'(s) = decay/s, n = -1]
    g2  = (U_B' - U_D')(s) * n      = -decay (1/s - c/(1-s))
    q   = alpha d[U]/dt + beta [U] - U_B'(s) * n
        = (beta - alpha)(1+c) decay + decay / s

Transient 2D case on the unit square, sy = sin(pi y):

    V   = decay * sin(pi x / (2 s)) * sy     (x-slope vanishes at x = s)
    U_B = decay * (x/s) * sy
    U_D = -c * decay * ((1-x)/(1-s)) * sy
    [U] = (1 + c) * decay * sy

    f1  = ((pi/(2s))^2 + pi^2 - 1) V + pi^2 U_B
    f2  = -V - pi^2 U_B
    f_d = pi^2 U_D
    g1  = -decay * sy / s
    g2  = -decay * sy * (1/s - c/(1-s))
    q   = (beta - alpha) [U] + decay * sy / s

Stationary piecewise-linear case (discrete fixed point): V = 0,
U_B = x, U_D = 1 - x with s = 1/2, zero jump, g1 = -1, g2 = -2, q = 1.
P1 elements and the vertex-rule loads reproduce these fields exactly, so
the stepper must hold them to solver tolerance for any dt.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .mesh import Mesh, build_interval_mesh, build_split_rectangle_mesh
from .model import Conductivities, make_conductivities
from .stepper import InitialData, SourceSet, StepperConfig


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact fields, matching sources, and mesh ladder for one scenario."""

    name: str
    dim: int
    split: float
    capacitance: float
    conductance: float
    v_exact: Callable
    u_healthy_exact: Callable
    u_damaged_exact: Callable
    jump_exact: Callable
    stimulus_intra: Callable | None
    stimulus_extra: Callable | None
    stimulus_damaged: Callable | None
    flux_mismatch_intra: Callable | None
    flux_mismatch_extra: Callable | None
    interface_current: Callable | None
    base_cells: int

    def mesh(self, level: int) -> Mesh:
        if level < 0:
            raise ConfigurationError(f"refinement level must be >= 0, got {level}")
        n = self.base_cells * (2 ** level)
        if self.dim == 1:
            return build_interval_mesh(n, n, self.split)
        return build_split_rectangle_mesh(n, n, self.split)

    def conductivities(self, mesh: Mesh) -> Conductivities:
        return make_conductivities(mesh, 1.0, 1.0, 1.0)

    def sources(self) -> SourceSet:
        return SourceSet(
            stimulus_intra=self.stimulus_intra,
            stimulus_extra=self.stimulus_extra,
            stimulus_damaged=self.stimulus_damaged,
            flux_mismatch_intra=self.flux_mismatch_intra,
            flux_mismatch_extra=self.flux_mismatch_extra,
            interface_current=self.interface_current,
        )

    def initial_data(self) -> InitialData:
        return InitialData(
            v0=lambda p: self.v_exact(p, 0.0),
            s0=lambda p: self.jump_exact(p, 0.0),
        )

    def config(self, dt: float, t_end: float,
               cg_tol: float = 1e-12) -> StepperConfig:
        return StepperConfig(dt=dt, t_end=t_end,
                             capacitance=self.capacitance,
                             conductance=self.conductance,
                             ionic_enabled=False, cg_tol=cg_tol)


def transient_case_1d(split: float = 0.5, damaged_scale: float = 0.7,
                      capacitance: float = 1.3,
                      conductance: float = 0.6) -> ManufacturedCase:
    """Decaying trig/linear pair on the interval; see the module docstring."""
    s = split
    c = damaged_scale
    k = np.pi / s

    def v(p, t):
        return np.exp(-t) * np.sin(k * p[:, 0])

    def u_b(p, t):
        return np.exp(-t) * p[:, 0] / s

    def u_d(p, t):
        return -c * np.exp(-t) * (1.0 - p[:, 0]) / (1.0 - s)

    def jump(p, t):
        return (1.0 + c) * np.exp(-t) * np.ones(len(p))

    def f1(p, t):
        return (k * k - 1.0) * v(p, t)

    def f2(p, t):
        return -v(p, t)

    def g1(p, t):
        return np.full(len(p), np.exp(-t) * (np.pi - 1.0) / s)

    def g2(p, t):
        return np.full(len(p), -np.exp(-t) * (1.0 / s - c / (1.0 - s)))

    def q(p, t):
        return ((conductance - capacitance) * jump(p, t)
                + np.exp(-t) / s * np.ones(len(p)))

    return ManufacturedCase(
        name="transient-1d", dim=1, split=s, capacitance=capacitance,
        conductance=conductance, v_exact=v, u_healthy_exact=u_b,
        u_damaged_exact=u_d, jump_exact=jump, stimulus_intra=f1,
        stimulus_extra=f2, stimulus_damaged=None, flux_mismatch_intra=g1,
        flux_mismatch_extra=g2, interface_current=q, base_cells=8)


def transient_case_2d(split: float = 0.5, damaged_scale: float = 0.8,
                      capacitance: float = 1.1,
                      conductance: float = 0.7) -> ManufacturedCase:
    """Decaying trig pair on the split unit square; see the module docstring."""
    s = split
    c = damaged_scale
    kx = np.pi / (2.0 * s)
    pi2 = np.pi * np.pi

    def v(p, t):
        return np.exp(-t) * np.sin(kx * p[:, 0]) * np.sin(np.pi * p[:, 1])

    def u_b(p, t):
        return np.exp(-t) * (p[:, 0] / s) * np.sin(np.pi * p[:, 1])

    def u_d(p, t):
        return (-c * np.exp(-t) * ((1.0 - p[:, 0]) / (1.0 - s))
                * np.sin(np.pi * p[:, 1]))

    def jump(p, t):
        return (1.0 + c) * np.exp(-t) * np.sin(np.pi * p[:, 1])

    def f1(p, t):
        return (kx * kx + pi2 - 1.0) * v(p, t) + pi2 * u_b(p, t)

    def f2(p, t):
        return -v(p, t) - pi2 * u_b(p, t)

    def f_d(p, t):
        return pi2 * u_d(p, t)

    def g1(p, t):
        return -np.exp(-t) * np.sin(np.pi * p[:, 1]) / s

    def g2(p, t):
        return (-np.exp(-t) * np.sin(np.pi * p[:, 1])
                * (1.0 / s - c / (1.0 - s)))

    def q(p, t):
        return ((conductance - capacitance) * jump(p, t)
                + np.exp(-t) * np.sin(np.pi * p[:, 1]) / s)

    return ManufacturedCase(
        name="transient-2d", dim=2, split=s, capacitance=capacitance,
        conductance=conductance, v_exact=v, u_healthy_exact=u_b,
        u_damaged_exact=u_d, jump_exact=jump, stimulus_intra=f1,
        stimulus_extra=f2, stimulus_damaged=f_d, flux_mismatch_intra=g1,
        flux_mismatch_extra=g2, interface_current=q, base_cells=4)


def stationary_case_1d(capacitance: float = 1.0,
                       conductance: float = 1.0) -> ManufacturedCase:
    """Piecewise-linear stationary pair with zero jump.

    P1 elements represent the fields exactly and every load is integrated
    exactly, so the discrete solution must match to solver tolerance.
    """
    s = 0.5

    def zero(p, t):
        return np.zeros(len(p))

    def u_b(p, t):
        return p[:, 0].copy()

    def u_d(p, t):
        return 1.0 - p[:, 0]

    def g1(p, t):
        return np.full(len(p), -1.0)

    def g2(p, t):
        return np.full(len(p), -2.0)

    def q(p, t):
        return np.full(len(p), 1.0)

    return ManufacturedCase(
        name="stationary-1d", dim=1, split=s, capacitance=capacitance,
        conductance=conductance, v_exact=zero, u_healthy_exact=u_b,
        u_damaged_exact=u_d, jump_exact=zero, stimulus_intra=None,
        stimulus_extra=None, stimulus_damaged=None, flux_mismatch_intra=g1,
        flux_mismatch_extra=g2, interface_current=q, base_cells=4)
