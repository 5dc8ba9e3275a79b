"""Classical side: the unit sphere with omega = (1/2) area form.

Points are handled as ``(N, 3)`` arrays of unit vectors so every routine is
vectorised. The total symplectic area is 2*pi.

Sign convention. The Hamiltonian vector field solves ``i_X omega = -df``;
with omega(u, v) = x . (u x v) / 2 this gives ``X_f = 2 x cross grad f`` and
``{f, g} = -omega(X_f, X_g) = -2 x . (grad f cross grad g)``. The orientation
is the one for which the Berezin-Toeplitz commutator test passes
(``tests/test_quantizer.py::test_commutator_sign_canary``).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import optimize
from scipy.spatial import cKDTree

from ._smooth import plateau_values, smooth_step
from .exceptions import (
    ChartOverflowError,
    DerivativeUnavailableError,
    IntegrationDivergedError,
    InvalidRegionError,
    InvalidStateError,
)
from .validation import check_points

TOTAL_AREA = 2.0 * math.pi
# +1 selects X_f = 2 x cross grad f; flipping it would flip every bracket.
ORIENTATION = 1.0
FD_STEP = 1e-6
DEFAULT_PROBE_SIZE = 20000
DEFAULT_FLOW_STEPS = 256
DEFAULT_MARGIN = 1e-3
MIN_SCALE = 1e-6


# ---------------------------------------------------------------- points


@dataclass(frozen=True)
class SpherePoint:
    """A single point of the sphere; ``coords`` is a unit 3-vector."""

    coords: tuple

    def __post_init__(self):
        check_points(np.asarray(self.coords, dtype=float))

    @classmethod
    def from_angles(cls, theta: float, phi: float) -> "SpherePoint":
        return cls(tuple(spherical_to_cartesian(theta, phi)[0]))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)


def spherical_to_cartesian(theta, phi) -> np.ndarray:
    """Polar angle ``theta`` from the north pole, longitude ``phi``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def cartesian_to_spherical(x) -> tuple[np.ndarray, np.ndarray]:
    x = check_points(x, renormalize=True)
    theta = np.arctan2(np.hypot(x[:, 0], x[:, 1]), x[:, 2])
    phi = np.arctan2(x[:, 1], x[:, 0])
    return theta, phi


def geodesic_distance(x, y) -> np.ndarray:
    """Great-circle distance between matching rows of ``x`` and ``y``."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    chord = np.linalg.norm(x - y, axis=-1)
    return 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))


@functools.lru_cache(maxsize=16)
def _fibonacci(n: int) -> np.ndarray:
    i = np.arange(n, dtype=float) + 0.5
    z = 1.0 - 2.0 * i / n
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = golden * np.arange(n)
    r = np.sqrt(1.0 - z * z)
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    pts.setflags(write=False)
    return pts


def fibonacci_grid(n: int = DEFAULT_PROBE_SIZE) -> np.ndarray:
    """Nearly uniform probe set of ``n`` points (shared, read-only)."""
    if n < 1:
        raise ValueError("probe grid needs at least one point")
    return _fibonacci(int(n))


def tangent_frame(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal tangent pair (t1, t2) with x . (t1 x t2) = +1."""
    ref = np.where(np.abs(x[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    t1 = ref - np.sum(ref * x, axis=1, keepdims=True) * x
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(x, t1)
    return t1, t2


def exp_map(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Geodesic exponential map; ``v`` tangent at ``x`` (row-wise)."""
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(r > 0, r, 1.0)
    return np.cos(r) * x + np.sin(r) * v / safe


# ---------------------------------------------------------------- charts


@dataclass(frozen=True)
class EquatorialChart:
    """Darboux chart centred on the equator.

    Lambert azimuthal equal-area coordinates ``c`` about the centre: a point
    at geodesic angle ``a`` from the centre sits at ``|c|^2 = 1 - cos a``.
    Pulled back, omega becomes ``dc1 ^ dc2``. Radius 1 would reach the
    poles, so the domain is the open disk ``|c| < radius`` with radius < 1.
    """

    longitude: float = 0.0
    radius: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.radius < 1.0:
            raise ChartOverflowError("chart radius must lie in (0, 1) to avoid the poles")

    @property
    def center(self) -> np.ndarray:
        return np.array([math.cos(self.longitude), math.sin(self.longitude), 0.0])

    @property
    def frame(self) -> tuple[np.ndarray, np.ndarray]:
        east = np.array([-math.sin(self.longitude), math.cos(self.longitude), 0.0])
        north = np.array([0.0, 0.0, 1.0])
        return east, north

    def to_sphere(self, c) -> np.ndarray:
        c = np.atleast_2d(np.asarray(c, dtype=float))
        r = np.linalg.norm(c, axis=1)
        if np.any(r >= math.sqrt(2.0)):
            raise ChartOverflowError("chart coordinates beyond the antipode")
        ang = np.arccos(np.clip(1.0 - r * r, -1.0, 1.0))
        e1, e2 = self.frame
        safe = np.where(r > 0, r, 1.0)
        direction = (c[:, :1] * e1 + c[:, 1:2] * e2) / safe[:, None]
        return np.cos(ang)[:, None] * self.center + np.sin(ang)[:, None] * direction

    def from_sphere(self, x) -> np.ndarray:
        x = check_points(x, renormalize=True)
        cos_a = np.clip(x @ self.center, -1.0, 1.0)
        r = np.sqrt(np.maximum(1.0 - cos_a, 0.0))
        e1, e2 = self.frame
        w1 = x @ e1
        w2 = x @ e2
        wn = np.hypot(w1, w2)
        safe = np.where(wn > 0, wn, 1.0)
        return np.stack([r * w1 / safe, r * w2 / safe], axis=1)

    def contains(self, x, radius: Optional[float] = None) -> np.ndarray:
        lim = self.radius if radius is None else radius
        x = check_points(x, renormalize=True)
        front = x @ self.center > -1.0 + 1e-12
        return front & (np.linalg.norm(self.from_sphere(x), axis=1) < lim)

    def disk_area_defect(self, radius: float, center=(0.0, 0.0), n: int = 400) -> float:
        """|omega-area of a small chart disk - pi r^2| via a fine polygon."""
        ang = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
        ring = np.asarray(center) + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        pts = self.to_sphere(ring)
        return abs(spherical_polygon_area(pts) / 2.0 - math.pi * radius**2)


def spherical_polygon_area(vertices: np.ndarray) -> float:
    """Standard area of a small simple spherical polygon (fan triangulation)."""
    vertices = np.asarray(vertices, dtype=float)
    apex = vertices.mean(axis=0)
    apex /= np.linalg.norm(apex)
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    # Van Oosterom-Strackee solid angle of each fan triangle.
    num = np.einsum("ij,ij->i", np.broadcast_to(apex, a.shape), np.cross(a, b))
    den = 1.0 + a @ apex + b @ apex + np.einsum("ij,ij->i", a, b)
    return float(abs(np.sum(2.0 * np.arctan2(num, den))))


# ---------------------------------------------------------------- observables


class Observable:
    """Real (or complex) function on the sphere, optionally time-dependent.

    ``value`` is called as ``value(x)`` or, when ``time_dependent``,
    ``value(x, t)`` with ``x`` of shape ``(N, 3)``. An analytic ambient
    gradient may be supplied with the same signature; otherwise gradients
    come from central differences along geodesics.
    """

    def __init__(
        self,
        value: Callable,
        gradient: Optional[Callable] = None,
        time_dependent: bool = False,
        support_hint=None,
        name: str = "observable",
    ):
        self._value = value
        self._gradient = gradient
        self.time_dependent = bool(time_dependent)
        self.support_hint = support_hint
        self.name = name
        # (base, profile) when the observable is profile(t) * base(x)
        self.separable: Optional[tuple] = None

    def __repr__(self):
        return f"Observable({self.name!r})"

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(x)
        out = self._value(x, t) if self.time_dependent else self._value(x)
        out = np.asarray(out)
        if out.ndim == 0:
            out = np.full(x.shape[0], out.item())
        return out

    @property
    def has_gradient(self) -> bool:
        return self._gradient is not None

    def grad(self, x, t: float = 0.0) -> np.ndarray:
        """Tangential gradient (round metric) at each row of ``x``."""
        x = np.atleast_2d(x)
        if self._gradient is not None:
            g = self._gradient(x, t) if self.time_dependent else self._gradient(x)
            g = np.broadcast_to(np.asarray(g, dtype=float), x.shape)
            return g - np.sum(g * x, axis=1, keepdims=True) * x
        t1, t2 = tangent_frame(x)
        h = FD_STEP
        out = np.zeros_like(x)
        for tv in (t1, t2):
            fp = self(exp_map(x, h * tv), t)
            fm = self(exp_map(x, -h * tv), t)
            d = (fp - fm) / (2.0 * h)
            if not np.all(np.isfinite(d)):
                raise DerivativeUnavailableError(f"finite differences of {self.name} are not finite")
            out += np.real(d)[:, None] * tv
        return out

    # arithmetic keeps observables composable for batteries and products
    def _combine(self, other, op, name, grad_rule):
        if isinstance(other, Observable):
            td = self.time_dependent or other.time_dependent

            def value(x, t=0.0):
                return op(self(x, t), other(x, t))

            grad = None
            if grad_rule is not None and self.has_gradient and other.has_gradient:

                def grad(x, t=0.0):
                    return grad_rule(self(x, t), self.grad(x, t), other(x, t), other.grad(x, t))

            wrap_v = value if td else (lambda x: value(x))
            wrap_g = None if grad is None else (grad if td else (lambda x: grad(x)))
            return Observable(wrap_v, wrap_g, td, name=f"({self.name}{name}{other.name})")
        c = float(other)
        return self._combine(constant(c), op, name, grad_rule)

    def __add__(self, other):
        return self._combine(other, np.add, "+", lambda a, da, b, db: da + db)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract, "-", lambda a, da, b, db: da - db)

    def __mul__(self, other):
        return self._combine(
            other,
            np.multiply,
            "*",
            lambda a, da, b, db: np.real(a)[:, None] * db + np.real(b)[:, None] * da,
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def at_time(self, t: float) -> "Observable":
        """Freeze a time-dependent observable at time ``t``."""
        if not self.time_dependent:
            return self
        grad = None if self._gradient is None else (lambda x: self._gradient(x, t))
        return Observable(lambda x: self._value(x, t), grad, False, self.support_hint, f"{self.name}@{t:g}")


def constant(c: float) -> Observable:
    c = float(c)
    return Observable(
        lambda x: np.full(x.shape[0], c), lambda x: np.zeros_like(x), name=f"const({c:g})"
    )


def linear(direction, scale: float = 1.0) -> Observable:
    """``scale * (direction . x)``; ``height`` is the case direction = e3."""
    n = np.asarray(direction, dtype=float)
    norm = float(np.linalg.norm(n))
    if not norm > 0 or not math.isfinite(norm):
        raise ValueError(f"direction {direction!r} has no usable length")
    n = n / norm
    return Observable(
        lambda x: scale * (x @ n),
        lambda x: np.broadcast_to(scale * n, x.shape),
        name=f"linear({n.round(3).tolist()},{scale:g})",
    )


def height(scale: float = 1.0) -> Observable:
    return linear((0.0, 0.0, 1.0), scale)


def rotation_generator(angle: float, axis=(0.0, 0.0, 1.0)) -> Observable:
    """Autonomous Hamiltonian whose time-one map rotates by ``angle``.

    The flow of ``c * (n . x)`` turns about ``n`` at angular speed ``2c``
    (clockwise seen from ``n``), so ``c = angle / 2``.
    """
    f = linear(axis, angle / 2.0)
    f.name = f"rotation({angle:g})"
    return f


def monomial(powers: Sequence[int], scale: float = 1.0) -> Observable:
    """``scale * x1^a x2^b x3^c`` with analytic gradient."""
    a, b, c = (int(p) for p in powers)

    def value(x):
        return scale * x[:, 0] ** a * x[:, 1] ** b * x[:, 2] ** c

    def grad(x):
        g = np.zeros_like(x)
        if a:
            g[:, 0] = scale * a * x[:, 0] ** (a - 1) * x[:, 1] ** b * x[:, 2] ** c
        if b:
            g[:, 1] = scale * b * x[:, 0] ** a * x[:, 1] ** (b - 1) * x[:, 2] ** c
        if c:
            g[:, 2] = scale * c * x[:, 0] ** a * x[:, 1] ** b * x[:, 2] ** (c - 1)
        return g

    return Observable(value, grad, name=f"mono({a},{b},{c})")


def cap_bump(center, radius: float, order: int = 4) -> Observable:
    """``((x.c - cos r)/(1 - cos r))_+^order``: peak 1 at the centre.

    Supported in the closed cap of angular radius ``radius``; of class
    C^(order-1) across the boundary.
    """
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    cr = math.cos(radius)
    scale = 1.0 - cr

    def value(x):
        s = np.maximum((x @ c - cr) / scale, 0.0)
        return s**order

    def grad(x):
        s = np.maximum((x @ c - cr) / scale, 0.0)
        return (order * s ** (order - 1) / scale)[:, None] * c

    return Observable(value, grad, support_hint=("cap", tuple(c), radius), name=f"cap{order}({radius:g})")


def smooth_cap(center, radius: float) -> Observable:
    """C-infinity bump ``exp(1 - 1/s)`` with ``s`` the cap coordinate above."""
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    cr = math.cos(radius)
    scale = 1.0 - cr

    def value(x):
        s = (x @ c - cr) / scale
        out = np.zeros(x.shape[0])
        pos = s > 0
        out[pos] = np.exp(1.0 - 1.0 / s[pos])
        return out

    def grad(x):
        s = (x @ c - cr) / scale
        out = np.zeros(x.shape[0])
        pos = s > 0
        out[pos] = np.exp(1.0 - 1.0 / s[pos]) / s[pos] ** 2 / scale
        return out[:, None] * c

    return Observable(value, grad, support_hint=("cap", tuple(c), radius), name=f"smoothcap({radius:g})")


def chart_function(chart: EquatorialChart, fn: Callable, name: str = "chart_fn", time_dependent=False) -> Observable:
    """Lift ``fn(c)`` (or ``fn(c, t)``) from chart coordinates; zero off-chart.

    ``fn`` must vanish near the chart boundary for the lift to be smooth.
    """

    def value(x, t=0.0):
        out = np.zeros(x.shape[0])
        inside = chart.contains(x)
        if np.any(inside):
            c = chart.from_sphere(x[inside])
            out[inside] = fn(c, t) if time_dependent else fn(c)
        return out

    v = value if time_dependent else (lambda x: value(x))
    return Observable(v, None, time_dependent, support_hint=("chart", chart), name=name)


def chart_translation(
    chart: EquatorialChart,
    velocity=(0.0, 0.5),
    inner: float = 0.6,
    outer: float = 0.9,
) -> Observable:
    """Cut-off generator of the chart translation with the given velocity.

    In Darboux coordinates X_f = (-d2 f, d1 f), so ``f = v2*c1 - v1*c2``
    translates by ``v`` per unit time on the plateau ``|c| <= inner``.
    The default velocity realises the half-speed shift generated by c1/2.
    """
    v1, v2 = (float(v) for v in velocity)
    if not 0 < inner < outer <= chart.radius:
        raise ChartOverflowError("translation cutoff must satisfy 0 < inner < outer <= radius")

    def fn(c):
        r = np.linalg.norm(c, axis=1)
        cut = smooth_step((outer - r) / (outer - inner))
        return (v2 * c[:, 0] - v1 * c[:, 1]) * cut

    return chart_function(chart, fn, name=f"translate({v1:g},{v2:g})")


def chart_bump(chart: EquatorialChart, center=(0.0, 0.0), radius: float = 0.1, order: Optional[int] = None) -> Observable:
    """Bump of chart-radius ``radius`` about chart point ``center``.

    ``order=None`` gives the C-infinity profile; an integer gives
    ``(1 - |c - c0|^2/r^2)_+^order``.
    """
    c0 = np.asarray(center, dtype=float)

    def fn(c):
        q = np.sum((c - c0) ** 2, axis=1) / radius**2
        s = np.maximum(1.0 - q, 0.0)
        if order is not None:
            return s**order
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(1.0 - 1.0 / s[pos])
        return out

    if np.linalg.norm(c0) + radius >= chart.radius:
        raise ChartOverflowError("bump escapes the chart")
    return chart_function(chart, fn, name=f"chartbump({radius:g})")


def latitude_plateau(lo: float, hi: float, lo_in: float, hi_in: float) -> Observable:
    """Plateau in the height x3: 1 on [lo_in, hi_in], 0 outside (lo, hi)."""
    return Observable(lambda x: plateau_values(x[:, 2], lo, hi, lo_in, hi_in), name="latplateau")


def time_profile(f: Observable, profile: Callable[[float], float], name: str = "") -> Observable:
    """``profile(t) * f(x)``: the simplest time-dependent Hamiltonian."""
    grad = None
    if f.has_gradient:
        grad = lambda x, t: profile(t) * f.grad(x)  # noqa: E731
    out = Observable(lambda x, t: profile(t) * f(x), grad, True, f.support_hint, name or f"{f.name}*p(t)")
    out.separable = (f, profile)
    return out


BUILTINS = {
    "constant": lambda c=1.0: constant(c),
    "height": lambda scale=1.0: height(scale),
    "rotation": lambda angle=math.pi, axis=(0.0, 0.0, 1.0): rotation_generator(angle, axis),
    "cap_bump": lambda center=(1.0, 0.0, 0.0), radius=1.0, order=4: cap_bump(center, radius, order),
    "smooth_cap": lambda center=(1.0, 0.0, 0.0), radius=1.0: smooth_cap(center, radius),
    "chart_translation": lambda longitude=0.0, v1=0.0, v2=0.5, inner=0.6, outer=0.9: chart_translation(
        EquatorialChart(longitude), (v1, v2), inner, outer
    ),
    "plateau_band": lambda lo=-0.8, hi=0.8, lo_in=-0.5, hi_in=0.5: latitude_plateau(lo, hi, lo_in, hi_in),
}


def builtin_observable(name: str, **params) -> Observable:
    """Named observables selectable from configuration files."""
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown observable {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(**params)


# ---------------------------------------------------------------- vector fields


def hamiltonian_vector_field(f: Observable, x, t: float = 0.0) -> np.ndarray:
    """X_f at each row of ``x``; tangent to the sphere."""
    x = check_points(x, renormalize=True)
    return 2.0 * ORIENTATION * np.cross(x, f.grad(x, t))


def poisson_bracket(f: Observable, g: Observable, x, t: float = 0.0) -> np.ndarray:
    """{f, g} = -omega(X_f, X_g) = -2 x . (grad f cross grad g)."""
    x = check_points(x, renormalize=True)
    return -2.0 * ORIENTATION * np.einsum("ij,ij->i", x, np.cross(f.grad(x, t), g.grad(x, t)))


def bracket_observable(f: Observable, g: Observable) -> Observable:
    """The Poisson bracket {f, g} as an observable (no analytic gradient)."""
    td = f.time_dependent or g.time_dependent
    if td:
        return Observable(lambda x, t: poisson_bracket(f, g, x, t), None, True, name=f"{{{f.name},{g.name}}}")
    return Observable(lambda x: poisson_bracket(f, g, x), None, False, name=f"{{{f.name},{g.name}}}")


# ---------------------------------------------------------------- flows


@dataclass
class FlowResult:
    endpoints: np.ndarray
    path_length_hofer: float
    steps: int
    max_sphere_drift: float


def _rk4(f: Observable, x: np.ndarray, t0: float, t1: float, steps: int) -> tuple[np.ndarray, float]:
    h = (t1 - t0) / steps
    t = t0
    drift = 0.0
    for _ in range(steps):
        k1 = hamiltonian_vector_field(f, x, t)
        k2 = hamiltonian_vector_field(f, x + 0.5 * h * k1, t + 0.5 * h)
        k3 = hamiltonian_vector_field(f, x + 0.5 * h * k2, t + 0.5 * h)
        k4 = hamiltonian_vector_field(f, x + h * k3, t + h)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergedError(f"flow of {f.name} produced non-finite values")
        x = x / np.linalg.norm(x, axis=1, keepdims=True)
        drift = max(drift, float(np.max(np.abs(np.linalg.norm(x, axis=1) - 1.0))))
        t += h
    return x, drift


def _flow(f: Observable, x: np.ndarray, t0: float, t1: float, steps: int) -> np.ndarray:
    # Renormalization keeps us on the sphere; project points so that an
    # input with tiny drift never gets rejected downstream.
    if t0 == t1:
        return x.copy()
    return _rk4(f, x, t0, t1, steps)[0]


def evolve_point(
    f: Observable,
    x,
    t0: float = 0.0,
    t1: float = 1.0,
    steps: int = DEFAULT_FLOW_STEPS,
    hofer_grid: Optional[int] = 2000,
) -> FlowResult:
    """Flow ``x`` (one point or many) from ``t0`` to ``t1`` by RK4.

    ``steps`` is the number of RK4 steps over the interval. The Hofer length
    of ``f`` over the interval is recorded on a coarse probe grid
    (``hofer_grid=None`` skips it).
    """
    if int(steps) < 1:
        raise ValueError("steps must be >= 1")
    pts = check_points(x, renormalize=True)
    if t0 == t1:
        end, drift = pts.copy(), 0.0
    else:
        end, drift = _rk4(f, pts, float(t0), float(t1), int(steps))
    length = 0.0
    if hofer_grid:
        lo, hi = sorted((float(t0), float(t1)))
        length = hofer_length(f, t0=lo, t1=hi, grid=fibonacci_grid(hofer_grid), refine=False)
    return FlowResult(end, length, int(steps), drift)


def time_one_map(f: Observable, x, steps: int = DEFAULT_FLOW_STEPS) -> np.ndarray:
    return _flow(f, check_points(x, renormalize=True), 0.0, 1.0, steps)


def inverse_flow(f: Observable, x, t: float = 1.0, steps: int = DEFAULT_FLOW_STEPS) -> np.ndarray:
    """phi_t^{-1}(x): integrate from time ``t`` back to 0."""
    n = max(1, int(math.ceil(steps * abs(t))))
    return _flow(f, check_points(x, renormalize=True), float(t), 0.0, n)


def pullback_by_inverse_flow(g: Observable, f: Observable, t: float = 1.0, steps: int = DEFAULT_FLOW_STEPS) -> Observable:
    """The transported observable g o phi_t^{-1}."""
    if t == 0.0:
        return g
    return Observable(lambda x: g(inverse_flow(f, x, t, steps)), None, name=f"{g.name}@phi^-1({t:g})")


# ---------------------------------------------------------------- norms


def _refine_max(f: Observable, seeds: np.ndarray, t: float) -> float:
    best = 0.0
    for x0 in seeds:
        t1, t2 = tangent_frame(x0[None, :])

        def neg(uv, x0=x0, t1=t1, t2=t2):
            p = exp_map(x0[None, :], uv[0] * t1 + uv[1] * t2)
            return -float(np.abs(f(p, t))[0])

        res = optimize.minimize(
            neg, np.zeros(2), method="Nelder-Mead",
            options={"xatol": 1e-9, "fatol": 1e-14, "initial_simplex": [[0, 0], [0.02, 0], [0, 0.02]]},
        )
        best = max(best, -float(res.fun))
    return best


def sup_norm(f: Observable, t: float = 0.0, grid: Optional[np.ndarray] = None, refine: bool = True) -> float:
    """max |f_t| over a probe grid, optionally polished by local search."""
    pts = fibonacci_grid() if grid is None else grid
    vals = np.abs(f(pts, t))
    best = float(np.max(vals))
    if refine and best > 0:
        seeds = pts[np.argsort(vals)[-3:]]
        best = max(best, _refine_max(f, seeds, t))
    return best


def simpson(values: np.ndarray, a: float, b: float) -> float:
    """Composite Simpson on an odd number of equispaced samples."""
    n = len(values) - 1
    if n == 0:
        return 0.0
    if n % 2:
        raise ValueError("Simpson needs an even number of intervals")
    h = (b - a) / n
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float(h / 3.0 * np.dot(w, values))


def hofer_length(
    f: Observable,
    steps: int = 16,
    t0: float = 0.0,
    t1: float = 1.0,
    grid: Optional[np.ndarray] = None,
    refine: bool = True,
) -> float:
    """Hofer length: integral of max|f_t| over [t0, t1] (composite Simpson)."""
    if not f.time_dependent:
        return abs(t1 - t0) * sup_norm(f, 0.0, grid, refine)
    steps = int(steps) + (int(steps) % 2)
    ts = np.linspace(t0, t1, steps + 1)
    return simpson(np.array([sup_norm(f, t, grid, refine) for t in ts]), t0, t1)


# 1D central-difference stencils on offsets -2..2, all second-order.
_STENCILS = np.array(
    [
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, -0.5, 0.0, 0.5, 0.0],
        [0.0, 1.0, -2.0, 1.0, 0.0],
        [-0.5, 1.0, 0.0, -1.0, 0.5],
        [1.0, -4.0, 6.0, -4.0, 1.0],
    ]
)


@dataclass
class CkNorms:
    """Seminorms |f|_0..|f|_order on the round metric."""

    norms: list
    resolution_warning: bool = False

    def __getitem__(self, j: int) -> float:
        return self.norms[j]

    @property
    def order(self) -> int:
        return len(self.norms) - 1


def _derivative_tensors(f: Observable, x: np.ndarray, order: int, h: float, t: float) -> list:
    t1, t2 = tangent_frame(x)
    offs = np.arange(-2, 3) * h
    vals = np.empty((x.shape[0], 5, 5))
    for i, a in enumerate(offs):
        for j, b in enumerate(offs):
            if i == 2 and j == 2:
                vals[:, i, j] = np.real(f(x, t))
            else:
                vals[:, i, j] = np.real(f(exp_map(x, a * t1 + b * t2), t))
    out = []
    for n in range(order + 1):
        parts = []
        for a in range(n + 1):
            w = np.outer(_STENCILS[a], _STENCILS[n - a]) / h**n
            parts.append(np.einsum("pij,ij->p", vals, w))
        out.append(np.stack(parts, axis=1))
    return out


def ck_norms(
    f: Observable,
    order: int = 3,
    grid: Optional[np.ndarray] = None,
    t: float = 0.0,
    step: float = 1e-3,
) -> CkNorms:
    """Sup over the grid of the Frobenius norm of the j-th derivative tensor.

    Derivatives are taken in geodesic normal coordinates at each probe point
    by nested central differences with one Richardson level (h, h/2).
    """
    if not 0 <= order <= 4:
        raise ValueError("order must be between 0 and 4")
    pts = fibonacci_grid(4000) if grid is None else np.asarray(grid)
    coarse = _derivative_tensors(f, pts, order, step, t)
    fine = _derivative_tensors(f, pts, order, step / 2.0, t)
    norms = []
    warn = False
    for n in range(order + 1):
        rich = (4.0 * fine[n] - coarse[n]) / 3.0
        binom = np.array([math.comb(n, a) for a in range(n + 1)], dtype=float)
        pointwise = np.sqrt(np.sum(binom * rich**2, axis=1))
        value = float(np.max(pointwise))
        corr = float(np.max(np.abs(fine[n] - coarse[n]))) / 3.0
        if value > 1e-8 and corr > 1e-2 * value:
            warn = True
        norms.append(value)
    spacing = math.sqrt(4.0 * math.pi / len(pts))
    for n in range(order):
        if norms[n] > 1e-8 and spacing * norms[n + 1] > norms[n]:
            warn = True
    return CkNorms(norms, warn)


def pair_norm(a: CkNorms, b: CkNorms, n: int) -> float:
    """|f, g|_N = sum_j |f|_j |g|_{N-j}."""
    return float(sum(a[j] * b[n - j] for j in range(n + 1)))


def pair_norm_13(a: CkNorms, b: CkNorms) -> float:
    """|f, g|_{1,3} = |f|_1|g|_3 + |f|_2|g|_2 + |f|_3|g|_1."""
    return float(a[1] * b[3] + a[2] * b[2] + a[3] * b[1])


# ---------------------------------------------------------------- displacement


@dataclass
class DisplacementResult:
    displaced: bool
    min_separation: float


def displacement_check(
    f: Observable, region_samples, margin: float = DEFAULT_MARGIN, steps: int = DEFAULT_FLOW_STEPS
) -> DisplacementResult:
    """Does the time-one map move the sampled region off itself?

    The samples only resolve the region up to their own spacing, so an
    image point counts as outside only when it is farther than that
    spacing (the largest nearest-neighbour gap) plus ``margin`` from
    every sample.
    """
    pts = np.atleast_2d(np.asarray(region_samples, dtype=float))
    if pts.size == 0 or pts.shape[0] == 0:
        raise InvalidRegionError("region sample set is empty")
    pts = check_points(pts, renormalize=True)
    image = time_one_map(f, pts, steps)
    tree = cKDTree(pts)
    chord, _ = tree.query(image, k=1)
    sep = float(2.0 * np.arcsin(min(float(np.min(chord)) / 2.0, 1.0)))
    spacing = 0.0
    if len(pts) > 1:
        gaps, _ = tree.query(pts, k=2)
        spacing = float(2.0 * np.arcsin(min(float(np.max(gaps[:, 1])) / 2.0, 1.0)))
    return DisplacementResult(sep > margin + spacing, sep)


def superlevel_samples(u: Observable, level: float, grid: Optional[np.ndarray] = None) -> np.ndarray:
    """Probe points where ``u > level``."""
    pts = fibonacci_grid() if grid is None else grid
    return pts[np.real(u(pts)) > level]


# ---------------------------------------------------------------- classical states


@dataclass(frozen=True)
class GridDensity:
    """Density ``u >= 0`` sampled at quadrature nodes with area weights."""

    nodes: np.ndarray
    weights: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        _check_measure(self.weights * self.density, self.density)

    @property
    def masses(self) -> np.ndarray:
        return self.weights * self.density

    @property
    def points(self) -> np.ndarray:
        return self.nodes


@dataclass(frozen=True)
class Atoms:
    """Finite convex combination of Dirac masses."""

    points: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        _check_measure(self.probabilities, self.probabilities)

    @property
    def masses(self) -> np.ndarray:
        return self.probabilities


ClassicalState = Union[GridDensity, Atoms]


def _check_measure(masses: np.ndarray, values: np.ndarray) -> None:
    if np.any(np.asarray(values) < 0):
        raise InvalidStateError("densities and probabilities must be nonnegative")
    total = float(np.sum(masses))
    if abs(total - 1.0) > 1e-10:
        raise InvalidStateError(f"total mass {total:.12f} differs from 1")


def density_state(u: Observable, nodes: np.ndarray, weights: np.ndarray) -> GridDensity:
    """Normalise ``u`` against the rule (nodes, weights); drop zero nodes."""
    vals = np.real(u(nodes))
    if np.any(vals < -1e-14):
        raise InvalidStateError("density takes negative values")
    vals = np.maximum(vals, 0.0)
    keep = vals > 0
    mass = float(np.dot(weights[keep], vals[keep]))
    if mass <= 0:
        raise InvalidStateError("density has zero mass")
    return GridDensity(nodes[keep], weights[keep], vals[keep] / mass)


def atoms_state(points, probabilities) -> Atoms:
    pts = check_points(points, renormalize=True)
    p = np.asarray(probabilities, dtype=float)
    return Atoms(pts, p)


# ---------------------------------------------------------------- rescaling


def _check_scale(s: float) -> float:
    s = float(s)
    if not MIN_SCALE < s <= 1.0:
        raise ChartOverflowError(f"scale factor {s} must lie in ({MIN_SCALE}, 1]")
    return s


def _dilate(chart: EquatorialChart, x: np.ndarray, s: float) -> np.ndarray:
    if not np.all(chart.contains(x)):
        raise ChartOverflowError("object is not supported inside the chart")
    return chart.to_sphere(s * chart.from_sphere(x))


def rescale(obj, chart: EquatorialChart, s: float, check_grid: Optional[np.ndarray] = None):
    """Small-scale rescaling in the chart.

    Hamiltonians: f_s(x) = s^2 f(x/s) in chart coordinates, zero off-chart.
    States: pushforward under x -> s x, mass preserved exactly.
    """
    s = _check_scale(s)
    if s == 1.0:
        return obj
    if isinstance(obj, Observable):
        probe = fibonacci_grid(4000) if check_grid is None else check_grid
        outside = probe[~chart.contains(probe)]
        ts = (0.0, 0.5, 1.0) if obj.time_dependent else (0.0,)
        if outside.size and max(float(np.max(np.abs(obj(outside, t)))) for t in ts) > 1e-12:
            raise ChartOverflowError(f"{obj.name} is not supported inside the chart")

        def value(x, t=0.0):
            out = np.zeros(x.shape[0])
            c = np.full((x.shape[0], 2), np.inf)
            inside = chart.contains(x)
            if np.any(inside):
                c[inside] = chart.from_sphere(x[inside]) / s
            ok = inside & (np.linalg.norm(c, axis=1) < chart.radius)
            if np.any(ok):
                out[ok] = s * s * np.real(obj(chart.to_sphere(c[ok]), t))
            return out

        v = value if obj.time_dependent else (lambda x: value(x))
        return Observable(v, None, obj.time_dependent, ("chart", chart), f"{obj.name}|s={s:g}")
    if isinstance(obj, GridDensity):
        return GridDensity(_dilate(chart, obj.nodes, s), obj.weights * s * s, obj.density / (s * s))
    if isinstance(obj, Atoms):
        return Atoms(_dilate(chart, obj.points, s), obj.probabilities.copy())
    raise TypeError(f"cannot rescale {type(obj).__name__}")
