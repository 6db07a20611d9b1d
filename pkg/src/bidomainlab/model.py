"""Tissue parameters: conductivities and the one-gate ionic model.

The ionic model follows the affine-in-the-gate structure

    gate rate      dw/dt = open_rate(v) * (1 - w) - close_rate(v) * w
    ionic current  i_ion(v, w) = current_fixed(v) + current_gated(v) * w

with nonnegative, bounded, Lipschitz rate functions.  Because the rate
equation is linear in w for frozen v, one step of the gate ODE has the
closed form

    w(dt) = w_inf + (w - w_inf) * exp(-(open + close) * dt),
    w_inf = open / (open + close),

which is what ``gating_exact_step`` evaluates (the identity map when both
rates vanish).  The gate stays in [0, 1] for any dt >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .mesh import Mesh, Region


@dataclass
class ConductivityField:
    """Per-cell conductivity on one region with enforced positive bounds.

    ``values`` has one entry per mesh cell; only entries of cells in
    ``region`` are meaningful.  The invariant 0 < lower <= value <= upper
    is checked on those cells at construction.
    """

    region: Region
    values: np.ndarray
    lower: float
    upper: float


def conductivity_field(mesh: Mesh, region: Region, value,
                       lower: float | None = None,
                       upper: float | None = None) -> ConductivityField:
    """Build a ConductivityField from a scalar or a per-cell array."""
    if np.isscalar(value):
        values = np.full(mesh.n_cells, float(value))
    else:
        values = np.asarray(value, dtype=float)
        if values.shape != (mesh.n_cells,):
            raise ConfigurationError(
                f"per-cell conductivity needs shape ({mesh.n_cells},), got {values.shape}")
    on_region = values[mesh.cell_regions == region]
    if on_region.size == 0:
        raise ConfigurationError(f"mesh has no cells in region {region.name}")
    lo = float(on_region.min()) if lower is None else float(lower)
    hi = float(on_region.max()) if upper is None else float(upper)
    if not (0.0 < lo <= hi):
        raise ConfigurationError(
            f"conductivity bounds must satisfy 0 < lower <= upper, got ({lo}, {hi})")
    if on_region.min() < lo - 1e-15 or on_region.max() > hi + 1e-15:
        raise ConfigurationError("conductivity values escape the declared bounds")
    return ConductivityField(region=region, values=values, lower=lo, upper=hi)


@dataclass
class Conductivities:
    """The three conductivities: intra/extra on healthy tissue, one on the inclusion."""

    intra: ConductivityField
    extra: ConductivityField
    damaged: ConductivityField

    def __post_init__(self):
        if self.intra.region != Region.HEALTHY or self.extra.region != Region.HEALTHY:
            raise ConfigurationError("intra/extra conductivities live on the healthy region")
        if self.damaged.region != Region.DAMAGED:
            raise ConfigurationError("damaged conductivity lives on the damaged region")


def make_conductivities(mesh: Mesh, intra, extra, damaged) -> Conductivities:
    return Conductivities(
        intra=conductivity_field(mesh, Region.HEALTHY, intra),
        extra=conductivity_field(mesh, Region.HEALTHY, extra),
        damaged=conductivity_field(mesh, Region.DAMAGED, damaged),
    )


@dataclass
class IonicModel:
    """One-gate ionic model with declared bounds and Lipschitz constants.

    The declared constants are contracts used by the stability machinery:
    ``lip_*`` bound the Lipschitz constants of the respective functions,
    ``max_*`` their sup norms.  ``open_rate`` and ``close_rate`` must be
    nonnegative and bounded; ``current_gated`` must be bounded.
    """

    name: str
    open_rate: Callable[[np.ndarray], np.ndarray]
    close_rate: Callable[[np.ndarray], np.ndarray]
    current_fixed: Callable[[np.ndarray], np.ndarray]
    current_gated: Callable[[np.ndarray], np.ndarray]
    lip_open: float
    lip_close: float
    lip_fixed: float
    lip_gated: float
    max_open: float
    max_close: float
    max_gated: float

    def gate_rhs(self, v, w):
        """Right-hand side g with dw/dt + g(v, w) = 0.

        g(v, 1) = close_rate(v) >= 0 and g(v, 0) = -open_rate(v) <= 0,
        which is what keeps the gate inside [0, 1].
        """
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        return self.open_rate(v) * (w - 1.0) + self.close_rate(v) * w

    def ionic_current(self, v, w):
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        return self.current_fixed(v) + self.current_gated(v) * w


def gating_exact_step(model: IonicModel, w, v, dt: float):
    """Advance the gate by dt with v frozen, using the exact exponential flow.

    dt = 0 and vanishing total rate both return w unchanged (bitwise).
    """
    if dt < 0.0:
        raise ConfigurationError(f"gating step needs dt >= 0, got {dt}")
    w = np.asarray(w, dtype=float)
    if dt == 0.0:
        return w.copy()
    v = np.asarray(v, dtype=float)
    open_rate = np.asarray(model.open_rate(v), dtype=float)
    close_rate = np.asarray(model.close_rate(v), dtype=float)
    total = open_rate + close_rate
    active = total > 0.0
    safe_total = np.where(active, total, 1.0)
    w_inf = np.where(active, open_rate / safe_total, 0.0)
    decay = np.exp(-safe_total * dt)
    return np.where(active, w_inf + (w - w_inf) * decay, w)


def composed_lipschitz_bound(model: IonicModel, t_final: float) -> float:
    """Explicit bound on the current-vs-potential Lipschitz quotient.

    Splitting the current difference into the direct part and the part routed
    through the gate, with the gate difference controlled by the rate
    Lipschitz constants integrated over [0, t_final], gives

        lip_fixed + lip_gated + max_gated * (2*lip_open + lip_close) * t_final.
    """
    return (model.lip_fixed + model.lip_gated
            + model.max_gated * (2.0 * model.lip_open + model.lip_close) * t_final)


def composed_lipschitz_probe(model: IonicModel, samples, dt: float) -> float:
    """Sampled Lipschitz quotient of the composed potential -> current map.

    Each sample is a triple (v_path_1, v_path_2, w_start) of two
    piecewise-constant-in-time potential paths (arrays indexed by step) and a
    common initial gate value.  Both paths drive the exact gate flow; the
    quotient is the discrete L2-in-time norm of the current difference over
    that of the potential difference.  Samples with identical paths are
    skipped.  Returns the maximum quotient over the samples.
    """
    worst = 0.0
    for v1_path, v2_path, w_start in samples:
        v1_path = np.asarray(v1_path, dtype=float)
        v2_path = np.asarray(v2_path, dtype=float)
        if v1_path.shape != v2_path.shape:
            raise ConfigurationError("potential paths must share a shape")
        w1 = np.asarray(w_start, dtype=float).copy()
        w2 = w1.copy()
        num = 0.0
        den = 0.0
        for v1, v2 in zip(v1_path, v2_path):
            w1 = gating_exact_step(model, w1, v1, dt)
            w2 = gating_exact_step(model, w2, v2, dt)
            di = model.ionic_current(v1, w1) - model.ionic_current(v2, w2)
            dv = np.asarray(v1, dtype=float) - np.asarray(v2, dtype=float)
            num += float(np.sum(di * di))
            den += float(np.sum(dv * dv))
        if den > 0.0:
            worst = max(worst, np.sqrt(num / den))
    return worst


def _sigmoid(p):
    # clipping keeps exp in range; beyond +-50 the sigmoid saturates in double
    p = np.clip(np.asarray(p, dtype=float), -50.0, 50.0)
    return 1.0 / (1.0 + np.exp(-p))


def _sigmoid_gate_model() -> IonicModel:
    # sup of the sigmoid derivative is 1/4, so the rates have slope <= 1/8
    return IonicModel(
        name="sigmoid_gate",
        open_rate=lambda p: 0.5 * _sigmoid(p),
        close_rate=lambda p: 0.5 * _sigmoid(-p),
        current_fixed=np.tanh,
        current_gated=lambda p: np.ones_like(np.asarray(p, dtype=float)),
        lip_open=0.125,
        lip_close=0.125,
        lip_fixed=1.0,
        lip_gated=0.0,
        max_open=0.5,
        max_close=0.5,
        max_gated=1.0,
    )


def _linear_current_model() -> IonicModel:
    # constant rates, purely direct current; handy as a transparent test model
    return IonicModel(
        name="linear_current",
        open_rate=lambda p: np.full_like(np.asarray(p, dtype=float), 0.25),
        close_rate=lambda p: np.full_like(np.asarray(p, dtype=float), 0.25),
        current_fixed=lambda p: np.asarray(p, dtype=float),
        current_gated=lambda p: np.zeros_like(np.asarray(p, dtype=float)),
        lip_open=0.0,
        lip_close=0.0,
        lip_fixed=1.0,
        lip_gated=0.0,
        max_open=0.25,
        max_close=0.25,
        max_gated=0.0,
    )


_MODEL_FACTORIES: dict[str, Callable[[], IonicModel]] = {
    "sigmoid_gate": _sigmoid_gate_model,
    "linear_current": _linear_current_model,
}


def register_ionic_model(name: str, factory: Callable[[], IonicModel]) -> None:
    """Register a custom ionic model factory under a config-selectable name."""
    if name in _MODEL_FACTORIES:
        raise ConfigurationError(f"ionic model {name!r} is already registered")
    _MODEL_FACTORIES[name] = factory


def make_ionic_model(name: str) -> IonicModel:
    try:
        factory = _MODEL_FACTORIES[name]
    except KeyError:
        known = ", ".join(sorted(_MODEL_FACTORIES))
        raise ConfigurationError(f"unknown ionic model {name!r} (known: {known})") from None
    return factory()
