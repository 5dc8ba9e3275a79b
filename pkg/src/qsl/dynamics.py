"""Schrödinger evolution of quantized Hamiltonians, quantum energy, Egorov
residuals, the speed limit, and the two-sided overlap comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .exceptions import HypothesisViolatedError, IntegrationQualityError, InvalidStateError
from .phase_space import (
    Observable,
    ck_norms,
    fibonacci_grid,
    hofer_length,
    pair_norm,
    pair_norm_13,
    pullback_by_inverse_flow,
    simpson,
    sup_norm,
)
from .qstate import DensityOperator, fidelity, gamma_cl, gamma_q, op_norm
from .quantizer import QuantumSpace, toeplitz

UNITARITY_TOL = 1e-9
HERMITIAN_TOL = 1e-12
SLACK_TOL = 1e-9
DEFAULT_STEPS = 128
ENERGY_STEPS = 32
CONSTANT_GRID = 4000
FLOW_STEPS = 64


# ---------------------------------------------------------------- paths


class QuantumHamiltonianPath:
    """t -> F_t on [0, 1] with the Planck constant of the space it lives on.

    ``commuting`` marks paths of the form p(t) * F: every F_t commutes,
    so the midpoint product collapses to a single exponential.
    """

    def __init__(
        self,
        generator: Callable[[float], np.ndarray],
        hbar: float,
        autonomous: bool = False,
        commuting: Optional[tuple] = None,
    ):
        self._generator = generator
        self.hbar = float(hbar)
        self.autonomous = bool(autonomous)
        self.commuting = commuting
        self._cache = None

    @classmethod
    def from_observable(cls, space: QuantumSpace, f: Observable) -> "QuantumHamiltonianPath":
        hbar = 1.0 / space.k
        if not f.time_dependent:
            op = toeplitz(space, f)
            return cls(lambda t: op, hbar, autonomous=True)
        if f.separable is not None:
            base, profile = f.separable
            op = toeplitz(space, base)
            return cls(lambda t: float(profile(t)) * op, hbar, commuting=(op, profile))
        return cls(lambda t: toeplitz(space, f, t), hbar)

    @classmethod
    def constant(cls, matrix, hbar: float) -> "QuantumHamiltonianPath":
        m = np.asarray(matrix, dtype=complex)
        return cls(lambda t: m, hbar, autonomous=True)

    def __call__(self, t: float) -> np.ndarray:
        if self.autonomous and self._cache is not None:
            return self._cache
        m = np.asarray(self._generator(float(t)), dtype=complex)
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL * scale:
            raise InvalidStateError(f"generator is not Hermitian at t={t:g}")
        if self.autonomous:
            self._cache = m
        return m

    @property
    def dim(self) -> int:
        return self(0.0).shape[0]


@dataclass
class Propagator:
    unitary: np.ndarray
    t0: float
    t1: float
    steps: int
    unitarity_drift: float
    snapshots: Optional[list] = field(default=None, repr=False)


def hermitian_eigh(op: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of the Hermitian part of ``op``.

    The divide-and-conquer driver occasionally fails to converge on
    matrices with many exactly degenerate pairs; the relatively robust
    driver takes over then.
    """
    h = 0.5 * (op + op.conj().T)
    try:
        return sla.eigh(h, driver="evd")
    except np.linalg.LinAlgError:
        return sla.eigh(h, driver="evr")


def hermitian_exp(op: np.ndarray, scale: float) -> np.ndarray:
    """exp(-i * scale * op) for Hermitian ``op`` by eigendecomposition."""
    w, v = hermitian_eigh(op)
    return (v * np.exp(-1j * scale * w)) @ v.conj().T


def unitarity_drift(u: np.ndarray) -> float:
    d = u.conj().T @ u - np.eye(u.shape[0])
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))


def propagate(
    path: QuantumHamiltonianPath,
    t0: float = 0.0,
    t1: float = 1.0,
    steps: int = DEFAULT_STEPS,
    snapshots: bool = False,
) -> Propagator:
    """Midpoint-exponential solution of dU/dt = -(i/hbar) F_t U.

    With ``snapshots`` the propagators U(t_j) at every step boundary are
    kept (including the identity at ``t0``).
    """
    steps = int(steps)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    dt = (t1 - t0) / steps
    dim = path.dim
    if path.autonomous or path.commuting is not None:
        if path.autonomous:
            op = path(t0)
            weights = np.full(steps, 1.0)
        else:
            op, profile = path.commuting
            weights = np.array([profile(t0 + (j + 0.5) * dt) for j in range(steps)], dtype=float)
        w, v = hermitian_eigh(op)
        phase = -1j * dt / path.hbar * w
        u = (v * np.exp(phase * weights.sum())) @ v.conj().T
        snaps = None
        if snapshots:
            cum = np.concatenate([[0.0], np.cumsum(weights)])
            snaps = [(v * np.exp(phase * c)) @ v.conj().T for c in cum]
    else:
        u = np.eye(dim, dtype=complex)
        snaps = [u.copy()] if snapshots else None
        for j in range(steps):
            u = hermitian_exp(path(t0 + (j + 0.5) * dt), dt / path.hbar) @ u
            if snapshots:
                snaps.append(u.copy())
    drift = unitarity_drift(u)
    if drift > UNITARITY_TOL:
        raise IntegrationQualityError(f"unitarity drift {drift:.2e} exceeds {UNITARITY_TOL:g}")
    return Propagator(u, float(t0), float(t1), steps, drift, snaps)


def quantum_energy(path: QuantumHamiltonianPath, steps: int = ENERGY_STEPS) -> float:
    """ell_q = integral of ||F_t||_op over [0, 1] by composite Simpson."""
    if path.autonomous:
        return op_norm(path(0.0))
    if path.commuting is not None:
        op, profile = path.commuting
        base = op_norm(op)
        steps = int(steps) + int(steps) % 2
        ts = np.linspace(0.0, 1.0, steps + 1)
        return base * simpson(np.abs([profile(t) for t in ts]), 0.0, 1.0)
    steps = int(steps) + int(steps) % 2
    ts = np.linspace(0.0, 1.0, steps + 1)
    return simpson(np.array([op_norm(path(t)) for t in ts]), 0.0, 1.0)


# ---------------------------------------------------------------- constants b and c


@dataclass(frozen=True)
class SemiclassicalConstants:
    b: float
    c: float
    terms: tuple
    resolution_warning: bool = False


def _time_nodes(f: Observable, n: int) -> np.ndarray:
    n = int(n) + int(n) % 2
    return np.linspace(0.0, 1.0, n + 1)


def semiclassical_constants(
    g: Observable,
    f: Observable,
    alpha: float,
    beta: float,
    gamma: float,
    grid: Optional[np.ndarray] = None,
    time_steps: int = 4,
    flow_steps: int = FLOW_STEPS,
    check_refinement: bool = False,
) -> SemiclassicalConstants:
    """b(g, f) as the maximum of five weighted norms, and c(f).

    The norms are finite-difference C^k seminorms on a probe grid; time
    integrals use Simpson on ``time_steps`` intervals. With
    ``check_refinement`` the computation is repeated on a grid twice as
    dense and the warning is raised when b moves by more than 5%.
    """
    pts = fibonacci_grid(CONSTANT_GRID) if grid is None else np.asarray(grid)
    ts = _time_nodes(f, time_steps)
    warn = False

    def norms(obs, t=0.0):
        nonlocal warn
        out = ck_norms(obs, 3, pts, t)
        warn = warn or out.resolution_warning
        return out

    moved = pullback_by_inverse_flow(g, f, 1.0, flow_steps)
    ng = norms(g)
    nmoved = norms(moved)
    nprod = norms(Observable(lambda x: g(x) * moved(x), name="g*g@phi^-1"))
    bracket = []
    f_c2 = []
    for t in ts:
        gt = pullback_by_inverse_flow(g, f, float(t), flow_steps)
        nf = norms(f, float(t))
        bracket.append(pair_norm_13(nf, ng if t == 0.0 else norms(gt)))
        f_c2.append(nf[2])
    terms = (
        alpha * ng[2],
        alpha * nmoved[2],
        alpha * nprod[2],
        beta * simpson(np.array(bracket), 0.0, 1.0),
        gamma * pair_norm(ng, nmoved, 2),
    )
    b = float(max(terms))
    c = float(alpha * simpson(np.array(f_c2), 0.0, 1.0))
    if check_refinement:
        fine = semiclassical_constants(
            g, f, alpha, beta, gamma, fibonacci_grid(2 * len(pts)), time_steps, flow_steps
        )
        if b > 0 and abs(fine.b - b) > 0.05 * b:
            warn = True
    return SemiclassicalConstants(b, c, tuple(float(v) for v in terms), warn)


# ---------------------------------------------------------------- dislocation


@dataclass
class DislocationReport:
    fidelity_a: float
    ell_q: float
    ell_cl: float
    gamma_q: float
    gamma_cl: Optional[float]
    b: Optional[float]
    c: Optional[float]
    slacks: dict
    k: int = 0

    @property
    def hbar(self) -> float:
        return 1.0 / self.k if self.k else float("nan")

    def csv_row(self, experiment: str, seed: int = 0) -> dict:
        def num(v):
            return "" if v is None else repr(float(v))

        return {
            "experiment": experiment,
            "k": self.k,
            "hbar": repr(self.hbar),
            "fidelity": num(self.fidelity_a),
            "ell_q": num(self.ell_q),
            "ell_cl": num(self.ell_cl),
            "gamma_q": num(self.gamma_q),
            "gamma_cl": num(self.gamma_cl),
            "b": num(self.b),
            "c": num(self.c),
            "slack_qsl": num(self.slacks.get("qsl")),
            "slack_gamma_lo": num(self.slacks.get("gamma_lo")),
            "slack_gamma_hi": num(self.slacks.get("gamma_hi")),
            "seed": seed,
        }


DISLOCATION_COLUMNS = (
    "experiment", "k", "hbar", "fidelity", "ell_q", "ell_cl", "gamma_q", "gamma_cl",
    "b", "c", "slack_qsl", "slack_gamma_lo", "slack_gamma_hi", "seed",
)


def speed_limit_slack(ell_q: float, a: float, hbar: float) -> float:
    """ell_q - arccos(a) * hbar, with the fidelity clamped into [0, 1]."""
    return float(ell_q - math.acos(min(max(a, 0.0), 1.0)) * hbar)


def run_dislocation(
    space: QuantumSpace,
    theta: DensityOperator,
    f: Observable,
    steps: int = DEFAULT_STEPS,
    g: Optional[Observable] = None,
    constants: Optional[SemiclassicalConstants] = None,
    hofer_grid: Optional[np.ndarray] = None,
    flow_steps: int = FLOW_STEPS,
) -> DislocationReport:
    """Evolve ``theta`` by the quantized flow of ``f`` and measure it.

    ``g`` (a classical profile of the state) adds the classical overlap;
    ``constants`` adds the two overlap-comparison slacks.
    """
    if theta.dim != space.dim:
        raise InvalidStateError(f"state has dimension {theta.dim}, space has {space.dim}")
    path = QuantumHamiltonianPath.from_observable(space, f)
    prop = propagate(path, 0.0, 1.0, steps)
    sigma = theta.conjugate(prop.unitary)
    a = fidelity(theta, sigma)
    ell_q = quantum_energy(path)
    grid = fibonacci_grid(CONSTANT_GRID) if hofer_grid is None else hofer_grid
    ell_cl = hofer_length(f, grid=grid)
    gq = gamma_q(theta, sigma)
    slacks = {"qsl": speed_limit_slack(ell_q, a, path.hbar)}
    gc = None
    if g is not None:
        gc = gamma_cl(g, pullback_by_inverse_flow(g, f, 1.0, flow_steps), grid)
        if constants is not None:
            bh = constants.b * path.hbar
            slacks["gamma_lo"] = gq - (gc - 3.0 * bh)
            slacks["gamma_hi"] = (gc + 2.0 * bh) / (1.0 - bh) ** 2 - gq if bh < 1 else float("nan")
    return DislocationReport(
        a, ell_q, ell_cl, gq, gc,
        None if constants is None else constants.b,
        None if constants is None else constants.c,
        slacks, space.k,
    )


@dataclass(frozen=True)
class EgorovResult:
    residual: float
    bound_integral: Optional[float]


def egorov_residual(
    space: QuantumSpace,
    f: Observable,
    g: Observable,
    steps: int = DEFAULT_STEPS,
    flow_steps: int = FLOW_STEPS,
    with_bound: bool = False,
    time_steps: int = 4,
) -> EgorovResult:
    """||T(g o phi^{-1}) - U T(g) U^*||_op, optionally with the integral of
    |f_t, g o phi_t^{-1}|_{1,3} that controls it."""
    path = QuantumHamiltonianPath.from_observable(space, f)
    u = propagate(path, 0.0, 1.0, steps).unitary
    moved = toeplitz(space, pullback_by_inverse_flow(g, f, 1.0, flow_steps))
    res = op_norm(moved - u @ toeplitz(space, g) @ u.conj().T)
    bound = None
    if with_bound:
        pts = fibonacci_grid(CONSTANT_GRID)
        ts = _time_nodes(f, time_steps)
        vals = [
            pair_norm_13(ck_norms(f, 3, pts, float(t)), ck_norms(pullback_by_inverse_flow(g, f, float(t), flow_steps), 3, pts))
            for t in ts
        ]
        bound = simpson(np.array(vals), 0.0, 1.0)
    return EgorovResult(res, bound)


@dataclass(frozen=True)
class UhlmannResult:
    integral_I: float
    arccos_term: float
    ell_q: float
    fidelity_a: float
    holds: bool
    below_energy: bool


def uhlmann_bound(path: QuantumHamiltonianPath, theta: DensityOperator, steps: int = DEFAULT_STEPS) -> UhlmannResult:
    """I = integral of the energy spread of theta_t, against arccos(a) hbar.

    theta_t is carried by the propagator snapshots, so the endpoint of
    the integral and the fidelity come from the same evolution.
    """
    steps = int(steps) + int(steps) % 2
    prop = propagate(path, 0.0, 1.0, steps, snapshots=True)
    base = theta.root_factor()
    ts = np.linspace(0.0, 1.0, steps + 1)
    spread = np.empty(steps + 1)
    for j, (t, u) in enumerate(zip(ts, prop.snapshots)):
        fac = u @ base
        ff = path(t) @ fac
        second = float(np.sum(np.abs(ff) ** 2))
        first = float(np.real(np.sum(np.conj(fac) * ff)))
        spread[j] = math.sqrt(max(second - first * first, 0.0))
    integral = simpson(spread, 0.0, 1.0)
    a = fidelity(theta, theta.conjugate(prop.unitary))
    arccos_term = math.acos(min(max(a, 0.0), 1.0)) * path.hbar
    ell_q = quantum_energy(path, steps)
    return UhlmannResult(
        integral, arccos_term, ell_q, a,
        bool(integral >= arccos_term - SLACK_TOL),
        bool(integral <= ell_q + SLACK_TOL),
    )


# ---------------------------------------------------------------- overlap comparison


@dataclass
class GammaComparison:
    k: int
    gamma_q: float
    gamma_cl: float
    b: float
    c: float
    slack_lo: float
    slack_hi: float
    ell_q: float
    ell_cl: float
    energy_lo_slack: float
    energy_hi_slack: float

    @property
    def holds(self) -> bool:
        return min(self.slack_lo, self.slack_hi, self.energy_lo_slack, self.energy_hi_slack) >= -SLACK_TOL


def gamma_comparison(
    space: QuantumSpace,
    g: Observable,
    f: Observable,
    alpha: float,
    beta: float,
    gamma: float,
    steps: int = DEFAULT_STEPS,
    constants: Optional[SemiclassicalConstants] = None,
    flow_steps: int = FLOW_STEPS,
    grid: Optional[np.ndarray] = None,
) -> GammaComparison:
    """Operator overlap of T(g) and its quantum image against the classical
    overlap of g and its transport, with both error margins."""
    pts = fibonacci_grid(CONSTANT_GRID) if grid is None else grid
    gmax = sup_norm(g, grid=pts)
    if float(np.min(np.real(g(pts)))) < -1e-12 or abs(gmax - 1.0) > 1e-6:
        raise HypothesisViolatedError("g must be nonnegative with maximum 1")
    consts = constants or semiclassical_constants(g, f, alpha, beta, gamma, pts, flow_steps=flow_steps)
    hbar = 1.0 / space.k
    bh = consts.b * hbar
    if bh >= 1.0:
        raise HypothesisViolatedError(f"b*hbar = {bh:.3f} is not below 1")
    path = QuantumHamiltonianPath.from_observable(space, f)
    u = propagate(path, 0.0, 1.0, steps).unitary
    tg = toeplitz(space, g)
    gq = gamma_q(tg, u @ tg @ u.conj().T)
    gc = gamma_cl(g, pullback_by_inverse_flow(g, f, 1.0, flow_steps), pts)
    ell_q = quantum_energy(path)
    ell_cl = hofer_length(f, grid=pts)
    return GammaComparison(
        space.k, gq, gc, consts.b, consts.c,
        gq - (gc - 3.0 * bh),
        (gc + 2.0 * bh) / (1.0 - bh) ** 2 - gq,
        ell_q, ell_cl,
        ell_q - (ell_cl - consts.c * hbar),
        ell_cl - ell_q,
    )
