"""Finite-difference cross-checks of the manufactured-solution calculus.

Every source in a manufactured case was derived by hand from the exact
fields.  These tests rebuild each source numerically from the fields
alone, using finite differences, and compare.  A sign or factor slip in
the hand calculus cannot survive this: the checks share nothing with the
derivation except the fields themselves.
"""

import numpy as np
import pytest

from bidomainlab.manufactured import (ManufacturedCase, stationary_case_1d,
                                      transient_case_1d, transient_case_2d)
from bidomainlab.mesh import BoundaryMarker, Region
from bidomainlab.stepper import run


def lap_fd(f, p, t, delta=1e-3):
    base = f(p[None, :], t)[0]
    total = 0.0
    for i in range(len(p)):
        plus = p.copy()
        plus[i] += delta
        minus = p.copy()
        minus[i] -= delta
        total += (f(plus[None, :], t)[0] - 2.0 * base
                  + f(minus[None, :], t)[0]) / delta ** 2
    return total


def dt_fd(f, p, t, delta=1e-5):
    return (f(p[None, :], t + delta)[0]
            - f(p[None, :], t - delta)[0]) / (2.0 * delta)


def dx_from_healthy_side(f, p, t, delta=1e-4):
    # second-order one-sided x-derivative using points at x, x-d, x-2d
    p1 = p.copy()
    p1[0] -= delta
    p2 = p.copy()
    p2[0] -= 2.0 * delta
    return (3.0 * f(p[None, :], t)[0] - 4.0 * f(p1[None, :], t)[0]
            + f(p2[None, :], t)[0]) / (2.0 * delta)


def dx_from_damaged_side(f, p, t, delta=1e-4):
    p1 = p.copy()
    p1[0] += delta
    p2 = p.copy()
    p2[0] += 2.0 * delta
    return (-3.0 * f(p[None, :], t)[0] + 4.0 * f(p1[None, :], t)[0]
            - f(p2[None, :], t)[0]) / (2.0 * delta)


def healthy_probe_points(case: ManufacturedCase, rng, n=6):
    x = rng.uniform(0.1, case.split - 0.1, size=n)
    if case.dim == 1:
        return x.reshape(-1, 1)
    return np.column_stack([x, rng.uniform(0.2, 0.8, size=n)])


def damaged_probe_points(case: ManufacturedCase, rng, n=6):
    x = rng.uniform(case.split + 0.1, 0.9, size=n)
    if case.dim == 1:
        return x.reshape(-1, 1)
    return np.column_stack([x, rng.uniform(0.2, 0.8, size=n)])


def interface_probe_points(case: ManufacturedCase, rng, n=6):
    if case.dim == 1:
        return np.array([[case.split]])
    return np.column_stack([np.full(n, case.split),
                            rng.uniform(0.1, 0.9, size=n)])


def evaluate(f, points, t):
    if f is None:
        return np.zeros(len(points))
    return np.asarray(f(points, t), dtype=float)


TRANSIENT_CASES = [transient_case_1d, transient_case_2d]
ALL_CASES = TRANSIENT_CASES + [stationary_case_1d]


class TestVolumeResiduals:
    @pytest.mark.parametrize("factory", ALL_CASES)
    def test_intracellular_equation(self, factory):
        # f1 must equal dV/dt - lap(V + U_B) at interior healthy points
        case = factory()
        rng = np.random.default_rng(3)
        points = healthy_probe_points(case, rng)
        for t in (0.0, 0.3, 0.7):
            want = evaluate(case.stimulus_intra, points, t)
            for j, p in enumerate(points):
                got = (dt_fd(case.v_exact, p, t)
                       - lap_fd(case.v_exact, p, t)
                       - lap_fd(case.u_healthy_exact, p, t))
                assert got == pytest.approx(want[j], rel=1e-4, abs=1e-3)

    @pytest.mark.parametrize("factory", ALL_CASES)
    def test_summed_equation(self, factory):
        # f1 - f2 must equal -lap(V + U_B) - lap(U_B)
        case = factory()
        rng = np.random.default_rng(4)
        points = healthy_probe_points(case, rng)
        for t in (0.0, 0.3, 0.7):
            want = (evaluate(case.stimulus_intra, points, t)
                    - evaluate(case.stimulus_extra, points, t))
            for j, p in enumerate(points):
                got = (-lap_fd(case.v_exact, p, t)
                       - 2.0 * lap_fd(case.u_healthy_exact, p, t))
                assert got == pytest.approx(want[j], rel=1e-4, abs=1e-3)

    @pytest.mark.parametrize("factory", ALL_CASES)
    def test_damaged_equation(self, factory):
        case = factory()
        rng = np.random.default_rng(5)
        points = damaged_probe_points(case, rng)
        for t in (0.0, 0.3, 0.7):
            want = evaluate(case.stimulus_damaged, points, t)
            for j, p in enumerate(points):
                got = -lap_fd(case.u_damaged_exact, p, t)
                assert got == pytest.approx(want[j], rel=1e-4, abs=1e-3)


class TestInterfaceResiduals:
    @pytest.mark.parametrize("factory", ALL_CASES)
    def test_intracellular_flux_mismatch(self, factory):
        # with the interface normal -e_x, g1 = -(d/dx)(V + U_B) on the
        # healthy side of the interface
        case = factory()
        rng = np.random.default_rng(6)
        points = interface_probe_points(case, rng)
        for t in (0.0, 0.3, 0.7):
            want = evaluate(case.flux_mismatch_intra, points, t)
            for j, p in enumerate(points):
                got = -(dx_from_healthy_side(case.v_exact, p, t)
                        + dx_from_healthy_side(case.u_healthy_exact, p, t))
                assert got == pytest.approx(want[j], rel=1e-4, abs=1e-5)

    @pytest.mark.parametrize("factory", ALL_CASES)
    def test_extracellular_flux_mismatch(self, factory):
        # g2 = -(d/dx U_B - d/dx U_D) across the interface
        case = factory()
        rng = np.random.default_rng(7)
        points = interface_probe_points(case, rng)
        for t in (0.0, 0.3, 0.7):
            want = evaluate(case.flux_mismatch_extra, points, t)
            for j, p in enumerate(points):
                got = -(dx_from_healthy_side(case.u_healthy_exact, p, t)
                        - dx_from_damaged_side(case.u_damaged_exact, p, t))
                assert got == pytest.approx(want[j], rel=1e-4, abs=1e-5)

    @pytest.mark.parametrize("factory", ALL_CASES)
    def test_interface_law_source(self, factory):
        # q = alpha d[U]/dt + beta [U] + d/dx U_B (healthy side), since the
        # extracellular flux through the normal -e_x is -d/dx U_B
        case = factory()
        rng = np.random.default_rng(8)
        points = interface_probe_points(case, rng)
        for t in (0.0, 0.3, 0.7):
            want = evaluate(case.interface_current, points, t)
            jump_now = evaluate(case.jump_exact, points, t)
            for j, p in enumerate(points):
                got = (case.capacitance * dt_fd(case.jump_exact, p, t)
                       + case.conductance * jump_now[j]
                       + dx_from_healthy_side(case.u_healthy_exact, p, t))
                assert got == pytest.approx(want[j], rel=1e-4, abs=1e-5)

    @pytest.mark.parametrize("factory", ALL_CASES)
    def test_jump_is_trace_difference(self, factory):
        case = factory()
        rng = np.random.default_rng(9)
        points = interface_probe_points(case, rng)
        for t in (0.0, 0.4):
            diff = (evaluate(case.u_healthy_exact, points, t)
                    - evaluate(case.u_damaged_exact, points, t))
            np.testing.assert_allclose(evaluate(case.jump_exact, points, t),
                                       diff, rtol=0.0, atol=1e-12)


class TestBoundaryCompatibility:
    @pytest.mark.parametrize("factory", ALL_CASES)
    def test_fields_vanish_on_dirichlet_boundary(self, factory):
        case = factory()
        mesh = case.mesh(1)
        healthy_bnd = sorted({v for f in mesh.boundary_facets
                              if f.marker == BoundaryMarker.DIRICHLET_HEALTHY
                              for v in f.vertices})
        damaged_bnd = sorted({v for f in mesh.boundary_facets
                              if f.marker == BoundaryMarker.DIRICHLET_DAMAGED
                              for v in f.vertices})
        t = 0.3
        ph = mesh.vertices[healthy_bnd]
        pd = mesh.vertices[damaged_bnd]
        np.testing.assert_allclose(case.v_exact(ph, t), 0.0, atol=1e-12)
        np.testing.assert_allclose(case.u_healthy_exact(ph, t), 0.0,
                                   atol=1e-12)
        np.testing.assert_allclose(case.u_damaged_exact(pd, t), 0.0,
                                   atol=1e-12)


class TestStationaryFixedPoint:
    def test_discrete_solution_holds_exact_fields(self):
        # piecewise-linear stationary fields are reproduced exactly by P1,
        # so after any number of steps the solver must still sit on them
        case = stationary_case_1d()
        mesh = case.mesh(1)
        cfg = case.config(dt=0.2, t_end=0.6)
        traj = run(mesh, case.conductivities(mesh), None, cfg,
                   sources=case.sources(), initial=case.initial_data())
        from bidomainlab.discretization import build_dof_map
        dm = build_dof_map(mesh)
        final = traj.final_state
        t_end = cfg.t_end
        exact_v = case.v_exact(mesh.vertices[dm.healthy_vertices], t_end)
        exact_ub = case.u_healthy_exact(mesh.vertices[dm.healthy_vertices],
                                        t_end)
        exact_ud = case.u_damaged_exact(mesh.vertices[dm.damaged_vertices],
                                        t_end)
        assert np.max(np.abs(final.v - exact_v)) <= 1e-8
        assert np.max(np.abs(final.u[:dm.n_u_healthy] - exact_ub)) <= 1e-8
        assert np.max(np.abs(final.u[dm.n_u_healthy:] - exact_ud)) <= 1e-8


class TestCasePlumbing:
    def test_mesh_ladder_refines(self):
        case = transient_case_2d()
        m0, m1 = case.mesh(0), case.mesh(1)
        assert len(m1.vertices) > len(m0.vertices)
        with pytest.raises(Exception):
            case.mesh(-1)

    def test_config_carries_interface_constants(self):
        case = transient_case_1d()
        cfg = case.config(dt=0.01, t_end=0.1)
        assert cfg.capacitance == case.capacitance
        assert cfg.conductance == case.conductance
        assert not cfg.ionic_enabled

    def test_initial_data_matches_exact_fields(self):
        case = transient_case_2d()
        initial = case.initial_data()
        rng = np.random.default_rng(10)
        p = healthy_probe_points(case, rng)
        np.testing.assert_allclose(initial.v0(p), case.v_exact(p, 0.0),
                                   atol=1e-14)
        g = interface_probe_points(case, rng)
        np.testing.assert_allclose(initial.s0(g), case.jump_exact(g, 0.0),
                                   atol=1e-14)
