"""Small-scale experiments: grids of coherent states in a Darboux chart and
rescaled dislocation, measured in the effective parameter s^-2 hbar."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .dynamics import QuantumHamiltonianPath, propagate, run_dislocation
from .exceptions import ChartOverflowError, EmptyGridError
from .harness.fitting import DecayFit, fit_decay_order
from .phase_space import (
    EquatorialChart,
    GridDensity,
    Observable,
    chart_bump,
    chart_function,
    chart_translation,
    density_state,
    displacement_check,
    rescale,
    sup_norm,
)
from .quantizer import QuantumSpace, build_space, product_rule, quantize_classical_state, toeplitz

MIN_MESH = 1e-4
ORACLE_RULE = (400, 800)


def _oracle_rule():
    return product_rule(*ORACLE_RULE)


# ---------------------------------------------------------------- grids


@dataclass
class GridSpec:
    """Lattice s Z^2 (anchored at the chart centre) carrying an envelope.

    ``envelope_radius`` is the chart radius of the envelope support; only
    lattice points inside it are kept since the others carry zero weight.
    """

    chart: EquatorialChart
    s: float
    envelope: Observable
    envelope_radius: float
    points: np.ndarray = field(repr=False)

    @property
    def sphere_points(self) -> np.ndarray:
        return self.chart.to_sphere(self.points)

    @property
    def size(self) -> int:
        return len(self.points)


def normalized_envelope(chart: EquatorialChart, radius: float, center=(0.0, 0.0)) -> Observable:
    """C-infinity chart bump rescaled so that the integral of its square is 1."""
    bump = chart_bump(chart, center, radius)
    rule = _oracle_rule()
    mass = float(rule.integrate(np.real(bump(rule.nodes)) ** 2).real)
    scale = 1.0 / math.sqrt(mass)
    c0 = np.asarray(center, dtype=float)

    def fn(c):
        q = np.sum((c - c0) ** 2, axis=1) / radius**2
        s = np.maximum(1.0 - q, 0.0)
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = scale * np.exp(1.0 - 1.0 / s[pos])
        return out

    return chart_function(chart, fn, name=f"envelope({radius:g})")


def grid_spec(chart: EquatorialChart, s: float, envelope_radius: float = 0.6, envelope: Optional[Observable] = None) -> GridSpec:
    if not MIN_MESH <= s <= 1.0:
        raise ValueError(f"mesh {s} must lie in [{MIN_MESH}, 1]")
    if envelope_radius >= chart.radius:
        raise ChartOverflowError("envelope escapes the chart")
    env = envelope or normalized_envelope(chart, envelope_radius)
    n = int(math.floor(envelope_radius / s))
    idx = np.arange(-n, n + 1)
    lat = s * np.stack(np.meshgrid(idx, idx, indexing="ij"), axis=-1).reshape(-1, 2)
    lat = lat[np.linalg.norm(lat, axis=1) < envelope_radius]
    if len(lat):
        lat = lat[np.abs(env(chart.to_sphere(lat))) > 0]
    if len(lat) == 0:
        raise EmptyGridError(f"no lattice point of mesh {s} carries envelope weight")
    return GridSpec(chart, float(s), env, float(envelope_radius), lat)


def radial_coherent_states(space: QuantumSpace, chart: EquatorialChart, x) -> np.ndarray:
    """Normalized coherent states with phases fixed by <xi_x, xi_center> > 0.

    This is the gauge of parallel transport along rays from the chart
    centre; any other gauge changes only phases of the grid terms.
    """
    xi = space.coherent_states(x)
    ref = space.coherent_states(chart.center[None, :])[0]
    ph = xi @ np.conj(ref)
    return xi * (np.conj(ph) / np.abs(ph))[:, None]


@dataclass
class GridVector:
    psi: np.ndarray
    norm: float
    spec: GridSpec

    @property
    def normalized(self) -> np.ndarray:
        return self.psi / self.norm


def grid_superposition(space: QuantumSpace, spec: GridSpec) -> GridVector:
    """Psi = s * sum over the grid of envelope(x) xi_x."""
    pts = spec.sphere_points
    weights = np.real(spec.envelope(pts))
    xi = radial_coherent_states(space, spec.chart, pts)
    psi = spec.s * (weights @ xi)
    return GridVector(psi, float(np.linalg.norm(psi)), spec)


@dataclass(frozen=True)
class PairingCheck:
    value: float
    target: float
    residual: float


def envelope_pairing_target(spec: GridSpec, g: Observable) -> float:
    """Integral of g |envelope|^2 by a fine product rule."""
    rule = _oracle_rule()
    vals = np.real(g(rule.nodes)) * np.abs(spec.envelope(rule.nodes)) ** 2
    return float(rule.integrate(vals).real)


def grid_pairing_check(space: QuantumSpace, spec: GridSpec, g: Observable, vector: Optional[GridVector] = None) -> PairingCheck:
    """<T(g) Psi, Psi> / |Psi|^2 against the integral of g |envelope|^2."""
    vec = vector or grid_superposition(space, spec)
    v = vec.normalized
    value = float(np.real(np.vdot(v, toeplitz(space, g) @ v)))
    target = envelope_pairing_target(spec, g)
    return PairingCheck(value, target, abs(value - target))


@dataclass(frozen=True)
class TranslationResult:
    k: int
    s: float
    overlap: complex

    @property
    def hbar(self) -> float:
        return 1.0 / self.k

    @property
    def s2inv_hbar(self) -> float:
        return self.hbar / self.s**2

    @property
    def modulus(self) -> float:
        return abs(self.overlap)


def half_mesh_generator(spec: GridSpec, inner: float = 0.8, outer: float = 0.93) -> Observable:
    """Generator equal to c1/2 near the envelope: time s shifts by s/2."""
    return chart_translation(spec.chart, (0.0, 0.5), inner, outer)


def translation_dislocation(
    space: QuantumSpace,
    spec: GridSpec,
    f: Optional[Observable] = None,
    inner: float = 0.8,
    vector: Optional[GridVector] = None,
) -> TranslationResult:
    """<U(s) Psi, Psi> / |Psi|^2 for the half-mesh translation flow."""
    if spec.envelope_radius + 0.5 * spec.s > inner:
        raise ChartOverflowError("translated envelope leaves the region where the generator is linear")
    gen = f if f is not None else half_mesh_generator(spec, inner)
    vec = vector or grid_superposition(space, spec)
    path = QuantumHamiltonianPath.from_observable(space, gen)
    u = propagate(path, 0.0, spec.s, 1).unitary
    v = vec.normalized
    return TranslationResult(space.k, spec.s, complex(np.vdot(v, u @ v)))


@dataclass
class TranslationSweep:
    rows: list
    fit: DecayFit


def translation_sweep(
    ks: Sequence[int],
    s_rule: Callable[[float], float],
    chart: Optional[EquatorialChart] = None,
    envelope_radius: float = 0.6,
    threshold: float = 3.0,
    spaces: Optional[dict] = None,
) -> TranslationSweep:
    """Half-mesh translation overlap across k, fitted against s^-2 hbar."""
    chart = chart or EquatorialChart()
    rows = []
    for k in sorted(ks):
        space = (spaces or {}).get(k) or build_space(k)
        spec = grid_spec(chart, s_rule(1.0 / k), envelope_radius)
        rows.append(translation_dislocation(space, spec))
    fit = fit_decay_order([(r.s2inv_hbar, r.modulus) for r in rows], threshold)
    return TranslationSweep(rows, fit)


# ---------------------------------------------------------------- lattice sums and envelopes


def lattice_sum(s: float, lam: float, exclude_origin: bool = True, cutoff: float = 40.0) -> float:
    """Sum of exp(-lam |x|^2) over x in s Z^2 (origin removed by default).

    With T the one-sided row sum, the punctured sum is 4T + 4T^2, which
    avoids cancellation against the origin term when s^2 lam is large.
    """
    a = s * s * lam
    n = int(math.ceil(math.sqrt(cutoff / a))) + 1
    m = np.arange(1, n + 1, dtype=float)
    tail = float(np.sum(np.exp(-a * m * m)))
    punctured = 4.0 * tail + 4.0 * tail * tail
    return punctured if exclude_origin else punctured + 1.0


def lattice_envelope_constant(a_values: Sequence[float]) -> np.ndarray:
    """Ratio of the punctured lattice sum to a^-1 exp(-a), per a = s^2 lam."""
    a = np.asarray(a_values, dtype=float)
    sums = np.array([lattice_sum(1.0, v) for v in a])
    return sums * a * np.exp(a)


@dataclass(frozen=True)
class EnvelopeFit:
    """Upper envelope C1 s^N + C2 hbar + C3 (s^-2 hbar)^(1+N) over a sweep.

    ``tightness`` is the largest envelope/residual ratio; ``bounds`` says
    the envelope dominates every point (up to rounding).
    """

    coefficients: tuple
    order: int
    tightness: float
    bounds: bool


def fit_three_term_envelope(s: Sequence[float], hbar: Sequence[float], residual: Sequence[float], order: int = 2) -> EnvelopeFit:
    """Smallest nonnegative three-term envelope lying above every residual.

    Minimizes the summed envelope/residual ratio subject to domination, so
    each constant is as small as the data allows.
    """
    s = np.asarray(s, dtype=float)
    h = np.asarray(hbar, dtype=float)
    r = np.maximum(np.asarray(residual, dtype=float), 1e-300)
    design = np.stack([s**order, h, (h / s**2) ** (1 + order)], axis=1)
    scaled = design / r[:, None]
    res = linprog(scaled.sum(axis=0), A_ub=-scaled, b_ub=-np.ones(len(r)), bounds=[(0, None)] * 3, method="highs")
    if not res.success:
        raise ValueError(f"envelope fit failed: {res.message}")
    ratio = scaled @ res.x
    return EnvelopeFit(tuple(float(c) for c in res.x), order, float(ratio.max()), bool(ratio.min() >= 1 - 1e-9))


# ---------------------------------------------------------------- rescaled dislocation


@dataclass
class RescaledRow:
    k: int
    s: float
    fidelity: float
    ell_q: float
    energy_cap: float
    displaced: bool
    regime_met: bool

    @property
    def hbar(self) -> float:
        return 1.0 / self.k

    @property
    def s2inv_hbar(self) -> float:
        return self.hbar / self.s**2


@dataclass
class RescaledTable:
    rows: list
    fit_hbar: Optional[DecayFit]
    fit_effective: Optional[DecayFit]
    max_f: float


def rescaled_experiment(
    ks: Sequence[int],
    f_bar: Observable,
    tau_bar: GridDensity,
    u_bar: Observable,
    s_rule: Callable[[float], float],
    chart: EquatorialChart,
    level: float = 0.05,
    threshold: float = 2.0,
    steps: int = 1,
    regime: tuple = (0.1, 0.1),
    spaces: Optional[dict] = None,
) -> RescaledTable:
    """Rescale (f_bar, tau_bar) by s = s_rule(hbar) and dislocate.

    ``level`` defines the region {u_bar > level * max u_bar}; ``regime``
    bounds s^-2 hbar and a / (s^-2 hbar) for the displacement conclusion.
    """
    unit_region = _superlevel_chart_samples(u_bar, chart, level)
    if not displacement_check(f_bar, unit_region).displaced:
        raise ValueError("f_bar does not displace the support region at unit scale")
    max_f = sup_norm(f_bar)
    rows = []
    for k in sorted(ks):
        hbar = 1.0 / k
        s = float(s_rule(hbar))
        space = (spaces or {}).get(k) or build_space(k)
        f_s = rescale(f_bar, chart, s)
        theta = quantize_classical_state(space, rescale(tau_bar, chart, s))
        rep = run_dislocation(space, theta, f_s, steps=steps)
        region = chart.to_sphere(s * chart.from_sphere(unit_region))
        displaced = displacement_check(f_s, region).displaced
        x = hbar / s**2
        regime_met = x <= regime[0] and rep.fidelity_a / x <= regime[1]
        rows.append(RescaledRow(k, s, rep.fidelity_a, rep.ell_q, s * s * max_f, displaced, bool(regime_met)))
    fit_h = fit_e = None
    if len(rows) >= 4:
        fit_h = fit_decay_order([(r.hbar, r.fidelity) for r in rows], threshold)
        if len({round(r.s2inv_hbar, 15) for r in rows}) >= 4:
            fit_e = fit_decay_order([(r.s2inv_hbar, r.fidelity) for r in rows], threshold)
    return RescaledTable(rows, fit_h, fit_e, max_f)


def _superlevel_chart_samples(u: Observable, chart: EquatorialChart, level: float, n: int = 301) -> np.ndarray:
    axis = np.linspace(-chart.radius, chart.radius, n)
    grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    grid = grid[np.linalg.norm(grid, axis=1) < chart.radius]
    pts = chart.to_sphere(grid)
    vals = np.real(u(pts))
    keep = vals > level * vals.max()
    return pts[keep]


def chart_disk_state(chart: EquatorialChart, center, radius: float, order: Optional[int] = None, n_theta: int = 400) -> tuple[GridDensity, Observable]:
    """Classical state with a chart-bump density, sampled on a fine rule."""
    u = chart_bump(chart, center, radius, order)
    rule = product_rule(n_theta, 2 * n_theta)
    return density_state(u, rule.nodes, rule.weights), u


def translation_problem(
    chart: Optional[EquatorialChart] = None,
    speed: float = 1.0,
    offset: float = 0.5,
    radius: float = 0.08,
    inner: float = 0.6,
    outer: float = 0.94,
) -> tuple[Observable, GridDensity, Observable]:
    """Unit-scale (f_bar, tau_bar, u_bar): a chart disk at (-offset, 0)
    pushed across the centre by a translation with a soft cutoff.

    A wide cutoff keeps the rescaled generator smooth on the coherent
    scale, which matters far more than the raw displacement length.
    """
    chart = chart or EquatorialChart()
    if offset + radius > inner:
        raise ChartOverflowError("disk path leaves the translation plateau")
    tau, u = chart_disk_state(chart, (-offset, 0.0), radius)
    return chart_translation(chart, (speed, 0.0), inner, outer), tau, u
