"""Lagrangian states on latitude circles, dislocating circle profiles, and
the leading-order dislocation experiment for monomial states."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from ._smooth import plateau_values
from .dynamics import hermitian_exp
from .exceptions import BracketingError, DegenerateIntervalError, DivisibilityError, ProfileRangeError
from .harness.fitting import DecayFit, fit_decay_order
from .phase_space import Observable, cartesian_to_spherical
from .quantizer import QuantumSpace, build_space, toeplitz

TWO_PI = 2.0 * math.pi
PROFILE_GRID = 8192
LAGRANGIAN_OVERSAMPLE = 4.0


@dataclass(frozen=True)
class LatitudeCircle:
    """The circle {|z0|^2 = t0, |z1|^2 = t1}; in height, x3 = 1 - 2 t0."""

    t0: Fraction
    t1: Fraction

    def __post_init__(self):
        t0, t1 = Fraction(self.t0), Fraction(self.t1)
        object.__setattr__(self, "t0", t0)
        object.__setattr__(self, "t1", t1)
        if t0 <= 0 or t1 <= 0 or t0 + t1 != 1:
            raise ValueError("circle weights must be positive and sum to 1")

    @classmethod
    def from_weight(cls, t0) -> "LatitudeCircle":
        t0 = Fraction(t0)
        return cls(t0, 1 - t0)

    @property
    def k0(self) -> int:
        return math.lcm(self.t0.denominator, self.t1.denominator)

    @property
    def ell(self) -> tuple[int, int]:
        return int(self.t0 * self.k0), int(self.t1 * self.k0)

    @property
    def height(self) -> float:
        return float(1 - 2 * self.t0)


class ProfileFunction:
    """Smooth 2pi-periodic real function of the longitude."""

    def __init__(self, fn: Callable, parity: str = "none", name: str = "profile"):
        if parity not in ("odd", "even", "none"):
            raise ValueError("parity must be 'odd', 'even' or 'none'")
        self._fn = fn
        self.parity = parity
        self.name = name
        probe = np.linspace(0.0, TWO_PI, 257)
        ends = np.asarray(fn(np.array([0.0, TWO_PI])), dtype=float)
        if abs(ends[0] - ends[1]) > 1e-12:
            raise ValueError(f"{name} is not periodic")
        vals = self(probe)
        if parity != "none":
            sign = -1.0 if parity == "odd" else 1.0
            if np.max(np.abs(self(-probe) - sign * vals)) > 1e-10:
                raise ValueError(f"{name} is not {parity}")

    def __call__(self, theta) -> np.ndarray:
        th = np.mod(np.asarray(theta, dtype=float), TWO_PI)
        return np.asarray(self._fn(th), dtype=float)

    def samples(self, n: int = 512) -> tuple[np.ndarray, np.ndarray]:
        th = np.arange(n) * (TWO_PI / n)
        return th, self(th)

    def __add__(self, other: "ProfileFunction") -> "ProfileFunction":
        parity = self.parity if self.parity == other.parity else "none"
        return ProfileFunction(lambda th: self._fn(th) + other._fn(th), parity, f"{self.name}+{other.name}")

    def scaled(self, c: float) -> "ProfileFunction":
        return ProfileFunction(lambda th: c * self._fn(th), self.parity, f"{c:g}*{self.name}")


def zero_profile() -> ProfileFunction:
    return ProfileFunction(lambda th: np.zeros_like(th), "odd", "zero")


def constant_profile(c: float) -> ProfileFunction:
    return ProfileFunction(lambda th: np.full_like(th, float(c)), "even", f"const({c:g})")


def plateau(a: float, b: float, inner_a: float, inner_b: float) -> Callable:
    """Smooth bump: 1 on [inner_a, inner_b], 0 outside (a, b)."""
    if not a < inner_a < inner_b < b:
        raise DegenerateIntervalError(f"need a < inner_a < inner_b < b, got {a}, {inner_a}, {inner_b}, {b}")
    return lambda x: plateau_values(x, a, b, inner_a, inner_b)


def circle_integral(values_fn: Callable, n: int = PROFILE_GRID) -> complex:
    """Periodic trapezoid on [0, 2pi); spectrally accurate for smooth input."""
    th = np.arange(n) * (TWO_PI / n)
    return complex(np.sum(values_fn(th)) * (TWO_PI / n))


def _half_bump() -> Callable:
    # h / pi on (0, pi): equal to 1 on [pi/5, 4pi/5]
    return plateau(0.0, math.pi, math.pi / 5.0, 4.0 * math.pi / 5.0)


def _odd_extension(fn: Callable) -> Callable:
    def ext(th):
        th = np.asarray(th, dtype=float)
        out = np.zeros_like(th)
        upper = th <= math.pi
        out[upper] = fn(th[upper])
        out[~upper] = -fn(TWO_PI - th[~upper])
        return out

    return ext


def _even_extension(fn: Callable) -> Callable:
    def ext(th):
        th = np.asarray(th, dtype=float)
        return fn(np.where(th <= math.pi, th, TWO_PI - th))

    return ext


@dataclass
class DislocatorProfile:
    f0: ProfileFunction
    s_star: float
    reparam: Optional[Callable] = None


def _reparametrization(density: Callable, n: int = PROFILE_GRID) -> Callable:
    """Longitude -> coordinate in which ``density`` becomes |d theta|."""
    th = np.linspace(0.0, TWO_PI, n + 1)
    d = np.asarray(density(th), dtype=float)
    if np.any(d <= 0):
        raise ValueError("density must be positive everywhere")
    cum = integrate.cumulative_trapezoid(d, th, initial=0.0)
    cum *= TWO_PI / cum[-1]
    return lambda x: np.interp(x, th, cum)


def dislocator_profile(density: Optional[Callable] = None, tol: float = 1e-10) -> DislocatorProfile:
    """Odd profile f0 with vanishing circle integral of exp(i f0) delta.

    With h = pi on [pi/5, 4pi/5], the integral I_s of cos(s h) over
    (0, pi) changes sign on (1/2, 1); its root s* fixes f0 = s* h, extended
    oddly. A nonuniform ``density`` is handled by reparametrizing the
    longitude so that it becomes uniform.
    """
    bump = _half_bump()
    th = (np.arange(PROFILE_GRID) + 0.5) * (math.pi / PROFILE_GRID)
    hvals = math.pi * bump(th)

    def I(s):
        return float(np.sum(np.cos(s * hvals)) * (math.pi / PROFILE_GRID))

    lo, hi = I(0.5), I(1.0)
    if not (lo > 0 > hi):
        raise BracketingError(f"I(1/2) = {lo:.3e}, I(1) = {hi:.3e} do not bracket a root")
    s_star = float(optimize.brentq(I, 0.5, 1.0, xtol=tol, rtol=4 * np.finfo(float).eps))
    base = _odd_extension(lambda t: s_star * math.pi * bump(t))
    if density is None:
        return DislocatorProfile(ProfileFunction(base, "odd", "dislocator"), s_star)
    reparam = _reparametrization(density)
    return DislocatorProfile(ProfileFunction(lambda t: base(reparam(t)), "none", "dislocator"), s_star, reparam)


def correction_profile(z: complex, s_star: float) -> ProfileFunction:
    """g with circle integral of exp(i f0) g equal to ``z`` (uniform density).

    g = Re(z) g1 + Im(z) g2, where g1 (even) and g2 (odd) are bumps inside
    (pi/5, 4pi/5) on which f0 equals s* pi.
    """
    if not 0.5 < s_star < 1.0:
        raise ProfileRangeError(f"s_star = {s_star} must lie in (1/2, 1)")
    bump = plateau(math.pi / 5.0, 4.0 * math.pi / 5.0, 0.3 * math.pi, 0.7 * math.pi)
    mass = float(np.real(circle_integral(_even_extension(bump)))) / 2.0
    c1 = 1.0 / (2.0 * math.cos(s_star * math.pi) * mass)
    c2 = 1.0 / (2.0 * math.sin(s_star * math.pi) * mass)
    g1 = _even_extension(lambda t: c1 * bump(t))
    g2 = _odd_extension(lambda t: c2 * bump(t))
    re, im = float(np.real(z)), float(np.imag(z))
    parity = "even" if im == 0 else ("odd" if re == 0 else "none")
    return ProfileFunction(lambda t: re * g1(t) + im * g2(t), parity, f"correction({complex(z):.3g})")


# ---------------------------------------------------------------- states and overlaps


def lagrangian_state(space: QuantumSpace, circle: LatitudeCircle) -> np.ndarray:
    """Normalized monomial of the circle: the basis vector of index m * ell_0."""
    k0 = circle.k0
    if space.k % k0:
        raise DivisibilityError(f"k = {space.k} is not a multiple of {k0}")
    m = space.k // k0
    psi = np.zeros(space.dim, dtype=complex)
    psi[m * circle.ell[0]] = 1.0
    return psi


def latitude_cutoff(circle: LatitudeCircle) -> Callable:
    """chi(x3): 1 on a band around the circle, 0 near both poles.

    The band is wide on purpose: at k = 16 the Husimi spread in height is
    about 1/4, and a narrow cutoff leaks into the leading coefficient.
    """
    h0 = circle.height
    room = 1.0 - abs(h0)
    return plateau(h0 - 0.95 * room, h0 + 0.95 * room, h0 - 0.7 * room, h0 + 0.7 * room)


def lift_profile(profile: ProfileFunction, circle: LatitudeCircle, extra: Optional[ProfileFunction] = None, hbar: float = 0.0) -> Observable:
    """F(x) = chi(x3) * (f0 + hbar * f1)(longitude)."""
    chi = latitude_cutoff(circle)

    def value(x):
        _, phi = cartesian_to_spherical(x)
        out = profile(phi)
        if extra is not None:
            out = out + hbar * extra(phi)
        return chi(x[:, 2]) * out

    return Observable(value, name=f"lift({profile.name})")


def lagrangian_overlap(
    space: QuantumSpace,
    psi: np.ndarray,
    f0: ProfileFunction,
    circle: LatitudeCircle,
    f1: Optional[ProfileFunction] = None,
) -> complex:
    """<exp(i T(F)) psi, psi> for F = chi * (f0 + hbar f1).

    exp(i T(F)) is the time-one propagator of the Hamiltonian -hbar T(F).
    """
    op = toeplitz(space, lift_profile(f0, circle, f1, 1.0 / space.k))
    u = hermitian_exp(op, -1.0)
    v = np.asarray(psi, dtype=complex)
    return complex(np.vdot(v, u @ v))


def husimi_longitude_spread(space: QuantumSpace, psi: np.ndarray, circle: LatitudeCircle, n: int = 64) -> float:
    """Relative variation of the Husimi density of ``psi`` along the circle."""
    theta = math.acos(circle.height)
    phi = np.arange(n) * (TWO_PI / n)
    pts = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.full(n, circle.height)], axis=1)
    vals = np.abs(space.coherent_states(pts) @ np.conj(psi)) ** 2
    return float((vals.max() - vals.min()) / vals.max())


@dataclass
class LagrangianRow:
    m: int
    k: int
    hbar: float
    overlap: complex
    ell_q: float
    max_f: float


@dataclass
class LagrangianSweep:
    rows: list
    fit: DecayFit
    z: Optional[complex] = None


def lagrangian_sweep(
    ms: Sequence[int],
    circle: LatitudeCircle,
    f0: ProfileFunction,
    f1: Optional[ProfileFunction] = None,
    oversample: float = LAGRANGIAN_OVERSAMPLE,
    threshold: float = 0.8,
) -> LagrangianSweep:
    """Overlap modulus across k = m k0 with its log-log decay fit."""
    from .qstate import op_norm

    rows = []
    for m in sorted(ms):
        k = m * circle.k0
        space = build_space(k, oversample)
        psi = lagrangian_state(space, circle)
        F = lift_profile(f0, circle, f1, 1.0 / k)
        op = toeplitz(space, F)
        u = hermitian_exp(op, -1.0)
        ov = complex(np.vdot(psi, u @ psi))
        th, vals = f0.samples(2048)
        fmax = float(np.max(np.abs(vals + (0.0 if f1 is None else f1(th) / k))))
        rows.append(LagrangianRow(m, k, 1.0 / k, ov, op_norm(op) / k, fmax))
    fit = fit_decay_order([(r.hbar, abs(r.overlap)) for r in rows], threshold)
    return LagrangianSweep(rows, fit)


def extract_first_order(rows: Sequence[LagrangianRow]) -> complex:
    """z = lim overlap / hbar, by Richardson over the three smallest hbar.

    Uses a quadratic fit of overlap/hbar in hbar through three points.
    """
    pts = sorted(rows, key=lambda r: r.hbar)[:3]
    if len(pts) < 3:
        raise ValueError("need three rows for the extrapolation")
    h = np.array([r.hbar for r in pts])
    q = np.array([r.overlap / r.hbar for r in pts])
    coef_re = np.polyfit(h, q.real, 2)
    coef_im = np.polyfit(h, q.imag, 2)
    return complex(coef_re[-1], coef_im[-1])


def first_order_correction(z: complex, s_star: float) -> ProfileFunction:
    """f1 cancelling the hbar coefficient ``z`` of the overlap.

    The overlap gains hbar * (i / 2pi) * (circle integral of f1 exp(i f0)),
    the 2pi being the circle mass under the unit-mass state density, so
    f1 must pair with exp(i f0) to 2 pi i z.
    """
    return correction_profile(2j * math.pi * complex(z), s_star)
