"""Conductivity invariants and the one-gate ionic model."""

import numpy as np
import pytest

from bidomainlab.errors import ConfigurationError
from bidomainlab.mesh import Region, build_interval_mesh
from bidomainlab.model import (IonicModel, composed_lipschitz_bound,
                               composed_lipschitz_probe, conductivity_field,
                               gating_exact_step, make_conductivities,
                               make_ionic_model, register_ionic_model)


def constant_rate_model(open_rate, close_rate):
    return IonicModel(
        name="test_constant",
        open_rate=lambda p: np.full_like(np.asarray(p, dtype=float), open_rate),
        close_rate=lambda p: np.full_like(np.asarray(p, dtype=float), close_rate),
        current_fixed=lambda p: np.zeros_like(np.asarray(p, dtype=float)),
        current_gated=lambda p: np.zeros_like(np.asarray(p, dtype=float)),
        lip_open=0.0, lip_close=0.0, lip_fixed=0.0, lip_gated=0.0,
        max_open=max(open_rate, 0.0), max_close=max(close_rate, 0.0),
        max_gated=0.0)


# --- conductivity ---------------------------------------------------------

def test_conductivity_scalar_and_bounds():
    mesh = build_interval_mesh(2, 2, 0.5)
    sigma = conductivity_field(mesh, Region.HEALTHY, 2.5)
    assert sigma.lower == sigma.upper == 2.5
    assert sigma.values.shape == (mesh.n_cells,)


def test_conductivity_rejects_zero():
    mesh = build_interval_mesh(2, 2, 0.5)
    with pytest.raises(ConfigurationError):
        conductivity_field(mesh, Region.HEALTHY, 0.0)
    with pytest.raises(ConfigurationError):
        conductivity_field(mesh, Region.HEALTHY, -1.0)


def test_conductivity_per_cell_values_and_bound_escape():
    mesh = build_interval_mesh(2, 2, 0.5)
    values = np.array([1.0, 2.0, 9.0, 9.0])  # damaged cells ignored for HEALTHY
    sigma = conductivity_field(mesh, Region.HEALTHY, values)
    assert sigma.lower == 1.0 and sigma.upper == 2.0
    with pytest.raises(ConfigurationError):
        conductivity_field(mesh, Region.HEALTHY, values, lower=1.5)


def test_conductivities_region_consistency():
    mesh = build_interval_mesh(2, 2, 0.5)
    bundle = make_conductivities(mesh, 1.0, 2.0, 0.5)
    assert bundle.intra.region == Region.HEALTHY
    assert bundle.damaged.region == Region.DAMAGED


# --- gating closed form ----------------------------------------------------

def test_gating_relaxes_to_half_for_equal_rates():
    # open = close = 1: w_inf = 1/2; large dt lands there
    model = constant_rate_model(1.0, 1.0)
    w = gating_exact_step(model, np.array([0.0]), np.array([0.0]), dt=50.0)
    np.testing.assert_allclose(w, 0.5, atol=1e-12)


def test_gating_pure_decay_half_life():
    # open = 0, close = 2: w(dt) = w * exp(-2 dt); dt = ln(2)/2 halves it
    model = constant_rate_model(0.0, 2.0)
    w = gating_exact_step(model, np.array([1.0]), np.array([0.0]), dt=np.log(2.0) / 2.0)
    np.testing.assert_allclose(w, 0.5, rtol=1e-14)


def test_gating_zero_rates_identity_bitwise():
    model = constant_rate_model(0.0, 0.0)
    w = np.array([0.123456789, 0.9, 0.0])
    out = gating_exact_step(model, w, np.zeros(3), dt=3.7)
    assert np.array_equal(out, w)


def test_gating_zero_dt_identity_bitwise():
    model = make_ionic_model("sigmoid_gate")
    rng = np.random.default_rng(7)
    w = rng.uniform(0.0, 1.0, size=50)
    out = gating_exact_step(model, w, rng.normal(size=50), dt=0.0)
    assert np.array_equal(out, w)


def test_gating_rejects_negative_dt():
    model = make_ionic_model("sigmoid_gate")
    with pytest.raises(ConfigurationError):
        gating_exact_step(model, np.array([0.5]), np.array([0.0]), dt=-1e-3)


def test_gating_stays_in_unit_interval():
    model = make_ionic_model("sigmoid_gate")
    rng = np.random.default_rng(42)
    for _ in range(200):
        w = rng.uniform(0.0, 1.0, size=50)
        v = rng.normal(scale=5.0, size=50)
        dt = float(rng.uniform(0.0, 10.0))
        out = gating_exact_step(model, w, v, dt)
        assert np.all(out >= -1e-14) and np.all(out <= 1.0 + 1e-14)


def test_gating_semigroup_property():
    # with v frozen, stepping dt1 then dt2 equals one step of dt1 + dt2
    model = make_ionic_model("sigmoid_gate")
    rng = np.random.default_rng(3)
    for _ in range(50):
        w = rng.uniform(0.0, 1.0, size=20)
        v = rng.normal(scale=3.0, size=20)
        dt1, dt2 = rng.uniform(0.01, 1.0, size=2)
        two_steps = gating_exact_step(model, gating_exact_step(model, w, v, dt1), v, dt2)
        one_step = gating_exact_step(model, w, v, dt1 + dt2)
        np.testing.assert_allclose(two_steps, one_step, atol=1e-13)


def test_gate_rhs_sign_conditions():
    # g(v, 1) = close_rate >= 0 and g(v, 0) = -open_rate <= 0
    model = make_ionic_model("sigmoid_gate")
    rng = np.random.default_rng(11)
    p = rng.normal(scale=10.0, size=1000)
    assert np.all(model.gate_rhs(p, np.ones_like(p)) >= 0.0)
    assert np.all(model.gate_rhs(p, np.zeros_like(p)) <= 0.0)


def test_declared_lipschitz_constants_hold():
    model = make_ionic_model("sigmoid_gate")
    rng = np.random.default_rng(5)
    p = rng.normal(scale=8.0, size=2000)
    q = p + rng.normal(scale=1.0, size=2000)
    dp = np.abs(p - q)
    mask = dp > 1e-12
    slack = 1.0 + 1e-9
    for fn, lip in [(model.open_rate, model.lip_open),
                    (model.close_rate, model.lip_close),
                    (model.current_fixed, model.lip_fixed),
                    (model.current_gated, model.lip_gated)]:
        quotient = np.abs(fn(p) - fn(q))[mask] / dp[mask]
        assert np.all(quotient <= lip * slack + 1e-15)
    assert np.all(model.open_rate(p) <= model.max_open + 1e-15)
    assert np.all(model.close_rate(p) <= model.max_close + 1e-15)
    assert np.all(np.abs(model.current_gated(p)) <= model.max_gated + 1e-15)
    assert np.all(model.open_rate(p) >= 0.0)
    assert np.all(model.close_rate(p) >= 0.0)


# --- composed Lipschitz probe ---------------------------------------------

def _random_samples(rng, n_samples, n_steps):
    samples = []
    for _ in range(n_samples):
        v1 = rng.normal(scale=2.0, size=n_steps)
        v2 = v1 + rng.normal(scale=1.0, size=n_steps)
        samples.append((v1, v2, float(rng.uniform(0.0, 1.0))))
    return samples


def test_probe_linear_model_is_identity_quotient():
    # gated current off and current_fixed = identity: quotient is exactly 1
    model = make_ionic_model("linear_current")
    rng = np.random.default_rng(9)
    estimate = composed_lipschitz_probe(model, _random_samples(rng, 20, 16), dt=0.05)
    assert estimate <= 1.0 + 1e-9
    assert estimate == pytest.approx(1.0, rel=1e-12)


def test_probe_respects_explicit_bound():
    model = make_ionic_model("sigmoid_gate")
    rng = np.random.default_rng(13)
    n_steps, dt = 40, 0.05
    estimate = composed_lipschitz_probe(model, _random_samples(rng, 30, n_steps), dt=dt)
    bound = composed_lipschitz_bound(model, t_final=n_steps * dt)
    assert 0.0 < estimate <= bound * (1.0 + 1e-9)


def test_probe_skips_identical_paths():
    model = make_ionic_model("sigmoid_gate")
    v = np.linspace(-1.0, 1.0, 10)
    assert composed_lipschitz_probe(model, [(v, v, 0.3)], dt=0.1) == 0.0


# --- registry ---------------------------------------------------------------

def test_registry_rejects_unknown_and_duplicate():
    with pytest.raises(ConfigurationError):
        make_ionic_model("no_such_model")
    register_ionic_model("test_dummy_model", lambda: make_ionic_model("sigmoid_gate"))
    assert make_ionic_model("test_dummy_model").name == "sigmoid_gate"
    with pytest.raises(ConfigurationError):
        register_ionic_model("test_dummy_model", lambda: None)
