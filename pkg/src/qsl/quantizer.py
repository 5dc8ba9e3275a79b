"""Berezin-Toeplitz quantization of the sphere at level k (hbar = 1/k).

The Hilbert space is spanned by the monomials z^m, m = 0..k, in the affine
coordinate z = tan(theta/2) e^{i phi}. In the unitary gauge that trivialises
the line bundle away from the south pole the orthonormal basis reads

    b_m(x) = c_m e^{i m phi} sin(theta/2)^m cos(theta/2)^(k-m),
    c_m^2 = (k+1)/(2 pi) * binom(k, m),

so sum_m |b_m|^2 = (k+1)/(2 pi) identically (the Rawnsley function).
Coherent (kernel) vectors are v(x) = conj(b(x)) and

    T(f)_{mn} = integral f b_n conj(b_m) dmu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import roots_legendre
from scipy.stats import binom
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import CapacityError, PoleGaugeError
from .phase_space import Atoms, GridDensity, Observable, cartesian_to_spherical
from .validation import check_points, check_positive_int

DEFAULT_OVERSAMPLE = 1.5
MAX_K = 1024
POLE_TOL = 1e-9
_CHUNK = 4096


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre in cos(theta) times uniform longitude.

    ``nodes`` are ordered latitude-major: node ``i * n_phi + j`` sits at
    ``cos_theta[i]`` and longitude ``2 pi j / n_phi``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    cos_theta: np.ndarray
    lat_weights: np.ndarray
    n_phi: int

    @property
    def n_theta(self) -> int:
        return len(self.cos_theta)

    @property
    def degree(self) -> int:
        """Spherical-harmonic degree integrated exactly."""
        return min(2 * self.n_theta - 1, self.n_phi - 1)

    def integrate(self, values) -> complex:
        return np.dot(self.weights, values)


def _legendre_pair(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p_prev, p = np.ones_like(x), x.copy()
    for j in range(2, n + 1):
        p_prev, p = p, ((2 * j - 1) * x * p - (j - 1) * p_prev) / j
    return p, p_prev


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1].

    Library nodes are polished by Newton steps on the three-term recurrence
    and the weights recomputed from P_n'; for n of several hundred this
    brings interior weights from ~1e-13 to ~1e-15 relative accuracy, which
    matters once operator errors are multiplied by 1/hbar in propagators.
    """
    x, _ = roots_legendre(n)
    if n < 2:
        return x, np.full(n, 2.0)
    for _ in range(2):
        p, q = _legendre_pair(n, x)
        x = x - p / (n * (x * p - q) / (x * x - 1.0))
    p, q = _legendre_pair(n, x)
    dp = n * (x * p - q) / (x * x - 1.0)
    return x, 2.0 / ((1.0 - x * x) * dp * dp)


def product_rule(n_theta: int, n_phi: int) -> QuadratureRule:
    ct, wt = gauss_legendre(int(n_theta))
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - ct**2)
    nodes = np.empty((n_theta, n_phi, 3))
    nodes[..., 0] = st[:, None] * np.cos(phi)[None, :]
    nodes[..., 1] = st[:, None] * np.sin(phi)[None, :]
    nodes[..., 2] = ct[:, None]
    # dmu = (1/2) d(cos theta) d(phi): total 2 pi
    lat_w = 0.5 * wt
    weights = (lat_w[:, None] * np.full(n_phi, 2.0 * math.pi / n_phi)[None, :]).ravel()
    for arr in (nodes, weights, ct, lat_w):
        arr.setflags(write=False)
    return QuadratureRule(nodes.reshape(-1, 3), weights, ct, lat_w, int(n_phi))


@dataclass(frozen=True)
class CoherentData:
    kernel_vector: np.ndarray
    rawnsley: float

    @property
    def normalized(self) -> np.ndarray:
        return self.kernel_vector / math.sqrt(self.rawnsley)

    @property
    def projector(self) -> np.ndarray:
        v = self.normalized
        return np.outer(v, v.conj())


class QuantumSpace:
    """H_hbar at level ``k``: dim = k + 1, hbar = 1/k. Immutable."""

    def __init__(self, k: int, oversample: float = DEFAULT_OVERSAMPLE, max_k: int = MAX_K):
        k = check_positive_int(k, "k", minimum=1)
        if k < 2 or k > max_k:
            raise CapacityError(f"k = {k} outside the supported range [2, {max_k}]")
        if oversample < 1:
            raise ValueError("oversample must be >= 1")
        self.k = k
        self.dim = k + 1
        self.hbar = 1.0 / k
        self.oversample = float(oversample)
        n_theta = int(math.ceil(oversample * (k + 2)))
        n_phi = int(math.ceil(oversample * (2 * k + 4)))
        self.quadrature = product_rule(n_theta, n_phi)
        self._m = np.arange(self.dim)
        self._lat_amp = self._amplitudes(self.quadrature.cos_theta)
        self._lat_amp.setflags(write=False)

    def __repr__(self):
        return f"QuantumSpace(k={self.k}, oversample={self.oversample})"

    @property
    def rawnsley(self) -> float:
        return (self.k + 1) / (2.0 * math.pi)

    def _amplitudes(self, cos_theta: np.ndarray) -> np.ndarray:
        """|b_m| as a function of cos(theta): shape (N, dim).

        |b_m|^2 = R * binom(k, m) p^m (1-p)^(k-m) with p = sin^2(theta/2);
        the binomial pmf is evaluated directly (log-space evaluation loses
        ~1e-13 relative accuracy at k of several hundred).
        """
        p = np.clip((1.0 - np.asarray(cos_theta, dtype=float)) / 2.0, 0.0, 1.0)
        pmf = binom.pmf(self._m[None, :], self.k, p[:, None])
        return np.sqrt(self.rawnsley * pmf)

    def basis_eval(self, x, gauge: str = "north") -> np.ndarray:
        """Values b_m(x) of the orthonormal basis, shape (N, dim).

        ``gauge='north'`` is singular at the south pole and raises there;
        ``'south'`` multiplies by e^{-i k phi}; ``'auto'`` picks per point.
        Operator-level quantities do not depend on the choice.
        """
        pts = check_points(x, renormalize=True)
        _, phi = cartesian_to_spherical(pts)
        amp = self._amplitudes(pts[:, 2])
        near_south = np.linalg.norm(pts - np.array([0.0, 0.0, -1.0]), axis=1) < POLE_TOL
        if gauge == "north":
            if np.any(near_south):
                raise PoleGaugeError("point evaluation at the gauge-singular south pole")
            shift = np.zeros(len(pts))
        elif gauge == "south":
            shift = np.full(len(pts), float(self.k))
        elif gauge == "auto":
            shift = np.where(pts[:, 2] < 0, float(self.k), 0.0)
        else:
            raise ValueError(f"unknown gauge {gauge!r}")
        phase = np.exp(1j * (self._m[None, :] - shift[:, None]) * phi[:, None])
        return amp * phase

    def kernel_vectors(self, x, gauge: str = "auto") -> np.ndarray:
        """Rows are v(x) = conj(b(x)), so <s, e_x> = s(x)."""
        return np.conj(self.basis_eval(x, gauge))

    def coherent_states(self, x, gauge: str = "auto") -> np.ndarray:
        """Rows are the normalised coherent vectors xi_x."""
        return self.kernel_vectors(x, gauge) / math.sqrt(self.rawnsley)


def build_space(k: int, oversample: float = DEFAULT_OVERSAMPLE, max_k: int = MAX_K) -> QuantumSpace:
    """Construct H_hbar with hbar = 1/k and its product quadrature."""
    return QuantumSpace(k, oversample, max_k)


def coherent_vector(space: QuantumSpace, x, gauge: str = "north") -> CoherentData:
    v = space.kernel_vectors(x, gauge)[0]
    return CoherentData(v, float(np.vdot(v, v).real))


def kernel_overlap(space: QuantumSpace, x, y) -> np.ndarray:
    """|<e_x, e_y>| for matching rows of ``x`` and ``y``."""
    vx = space.kernel_vectors(x)
    vy = space.kernel_vectors(y)
    return np.abs(np.sum(vx * np.conj(vy), axis=1))


# ---------------------------------------------------------------- Toeplitz


def toeplitz(space: QuantumSpace, f: Observable, t: float = 0.0) -> np.ndarray:
    """T(f) by quadrature, using an FFT in longitude per latitude ring.

    With G_i[d] the longitude Fourier coefficient of f on ring i,
    T[m, m+d] = sum_i w_i G_i[d] |b_m||b_{m+d}| (ring i).
    """
    q = space.quadrature
    vals = np.asarray(f(q.nodes, t)).reshape(q.n_theta, q.n_phi)
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"observable {getattr(f, 'name', f)!r} has non-finite values on the quadrature grid")
    # sum_j f_j e^{i d phi_j} * (2 pi / n_phi) = 2 pi * ifft(f)[d]
    coef = 2.0 * math.pi * np.fft.ifft(vals, axis=1)
    coef *= q.lat_weights[:, None]
    amp = space._lat_amp
    dim = space.dim
    real_input = not np.iscomplexobj(vals)
    out = np.zeros((dim, dim), dtype=complex)
    idx = np.arange(dim)
    for d in range(dim):
        prod = amp[:, : dim - d] * amp[:, d:]
        upper = coef[:, d] @ prod
        out[idx[: dim - d], idx[d:]] = upper
        if d:
            lower = np.conj(upper) if real_input else coef[:, -d] @ prod
            out[idx[d:], idx[: dim - d]] = lower
    if real_input:
        out = 0.5 * (out + out.conj().T)
    return out


def berezin_transform(space: QuantumSpace, f, x, t: float = 0.0) -> np.ndarray:
    """B(f)(x) = <T(f) xi_x, xi_x>; ``f`` may be an Observable or T(f)."""
    op = toeplitz(space, f, t) if isinstance(f, Observable) else np.asarray(f)
    pts = check_points(x, renormalize=True)
    out = np.empty(len(pts))
    for start in range(0, len(pts), _CHUNK):
        xi = space.coherent_states(pts[start : start + _CHUNK])
        out[start : start + _CHUNK] = np.real(np.einsum("nm,nm->n", np.conj(xi), xi @ op.T))
    return out


def coherent_factor(space: QuantumSpace, points, masses) -> np.ndarray:
    """Square factor L with L L^* = sum_i masses_i P_{x_i}.

    The stacked rows sqrt(m_i) conj(xi_i)^T are reduced by a streaming QR,
    which keeps tiny eigen-directions accurate to absolute round-off (the
    matrix square root of the assembled sum would only give sqrt(eps)).
    """
    pts = check_points(points, renormalize=True)
    masses = np.asarray(masses, dtype=float)
    keep = masses > 0
    pts, masses = pts[keep], masses[keep]
    r_acc = None
    for start in range(0, len(pts), _CHUNK):
        rows = space.basis_eval(pts[start : start + _CHUNK], gauge="auto") / math.sqrt(space.rawnsley)
        rows *= np.sqrt(masses[start : start + _CHUNK])[:, None]
        block = rows if r_acc is None else np.vstack([r_acc, rows])
        if block.shape[0] > space.dim:
            r_acc = np.linalg.qr(block, mode="r")
        else:
            r_acc = block
    if r_acc is None:
        raise ValueError("state has no mass")
    if r_acc.shape[0] < space.dim:
        r_acc = np.vstack([r_acc, np.zeros((space.dim - r_acc.shape[0], space.dim), dtype=complex)])
    return r_acc.conj().T


def quantize_classical_state(space: QuantumSpace, tau):
    """Q(tau) = integral P_x dtau(x), carried with a square-root factor."""
    from .qstate import DensityOperator

    if isinstance(tau, (GridDensity, Atoms)):
        factor = coherent_factor(space, tau.points, tau.masses)
    else:
        raise TypeError("tau must be a GridDensity or Atoms state")
    return DensityOperator.from_factor(factor)


def state_rule(k: int) -> QuadratureRule:
    """Product rule for sampling classical densities at level k.

    Node spacing is a third of the coherent-state width sqrt(2/k), which
    resolves Q(u dmu) well below the fidelity scales of interest while
    keeping the factor QR cheap.
    """
    nt = int(math.ceil(3.0 * math.pi / math.sqrt(2.0 / k)))
    return product_rule(nt, 2 * nt)


def quantize_density(space: QuantumSpace, u: Observable, rule: Optional[QuadratureRule] = None):
    """Q(u dmu / mass) with u sampled on :func:`state_rule`."""
    from .phase_space import density_state

    rule = rule or state_rule(space.k)
    return quantize_classical_state(space, density_state(u, rule.nodes, rule.weights))


def husimi_pairing(space: QuantumSpace, theta, f: Observable, t: float = 0.0) -> float:
    """integral f d(nu) = tr(T(f) theta)."""
    rho = theta.matrix if hasattr(theta, "matrix") else np.asarray(theta)
    return float(np.real(np.sum(toeplitz(space, f, t) * rho.T)))


def husimi_density(space: QuantumSpace, theta, x) -> np.ndarray:
    """<theta xi_x, xi_x>; the Husimi measure is R * this * dmu."""
    rho = theta.matrix if hasattr(theta, "matrix") else np.asarray(theta)
    xi = space.coherent_states(x)
    return np.real(np.einsum("nm,nm->n", np.conj(xi), xi @ rho.T))


class BerezinToeplitzQuantizer(TransformerMixin, BaseEstimator):
    """Estimator-style front end: ``fit`` builds H_hbar, ``transform``
    maps a sequence of observables to their Toeplitz operators."""

    def __init__(self, k: int = 64, oversample: float = DEFAULT_OVERSAMPLE):
        self.k = k
        self.oversample = oversample

    def fit(self, X=None, y=None):
        self.space_ = build_space(self.k, self.oversample)
        self.n_features_out_ = self.space_.dim**2
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "space_")
        obs = [X] if isinstance(X, Observable) else list(X)
        return np.stack([toeplitz(self.space_, f) for f in obs])

    def berezin(self, operators, points) -> np.ndarray:
        check_is_fitted(self, "space_")
        ops = np.asarray(operators)
        if ops.ndim == 2:
            ops = ops[None]
        return np.stack([berezin_transform(self.space_, op, points) for op in ops])


# ---------------------------------------------------------------- axiom residuals


def garding_residual(space: QuantumSpace, f: Observable) -> float:
    """max|f| - ||T(f)||_op, the O(hbar) defect of the norm."""
    from .phase_space import sup_norm

    return float(sup_norm(f) - np.linalg.norm(toeplitz(space, f), 2))


def commutator_residual(space: QuantumSpace, f: Observable, g: Observable) -> float:
    """||(-i/hbar)[T(f), T(g)] - T({f, g})||_op."""
    from .phase_space import bracket_observable

    a, b = toeplitz(space, f), toeplitz(space, g)
    lhs = (-1j / space.hbar) * (a @ b - b @ a)
    return float(np.linalg.norm(lhs - toeplitz(space, bracket_observable(f, g)), 2))


def product_residual(space: QuantumSpace, f: Observable, g: Observable) -> float:
    """||T(fg) - T(f)T(g)||_op."""
    return float(np.linalg.norm(toeplitz(space, f * g) - toeplitz(space, f) @ toeplitz(space, g), 2))


def berezin_residual(space: QuantumSpace, f: Observable, grid: Optional[np.ndarray] = None) -> float:
    """max |B(f) - f| over a probe grid."""
    from .phase_space import fibonacci_grid

    pts = fibonacci_grid(2000) if grid is None else grid
    return float(np.max(np.abs(berezin_transform(space, f, pts) - np.real(f(pts)))))


def scaled_trace_norm(space: QuantumSpace, f: Observable) -> float:
    """2 pi hbar ||T(f)||_tr, comparable to the L1 norm of f."""
    s = np.linalg.svd(toeplitz(space, f), compute_uv=False)
    return float(2.0 * math.pi * space.hbar * s.sum())


def scaled_trace(space: QuantumSpace, f: Observable) -> float:
    """2 pi hbar tr T(f); equals (1 + hbar) times the integral of f here."""
    return float(2.0 * math.pi * space.hbar * np.real(np.trace(toeplitz(space, f))))


# ---------------------------------------------------------------- binary container

CONTAINER_MAGIC = b"QSL1"
_HEADER = np.dtype([("magic", "S4"), ("k", "<i8"), ("dim", "<i8"), ("kind", "S16")])


def write_operator(path, matrix, k: int, kind: str = "operator") -> None:
    """Header (magic, k, dim, kind) then row-major little-endian complex128."""
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("container holds square operators only")
    if len(kind.encode()) > 16:
        raise ValueError("kind tag is limited to 16 bytes")
    header = np.array([(CONTAINER_MAGIC, k, m.shape[0], kind.encode())], dtype=_HEADER)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(m, dtype="<c16").tobytes())


def read_operator(path) -> tuple[np.ndarray, int, str]:
    """Inverse of :func:`write_operator`: (matrix, k, kind)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.itemsize:
        raise ValueError("truncated container header")
    header = np.frombuffer(raw[: _HEADER.itemsize], dtype=_HEADER)[0]
    if header["magic"] != CONTAINER_MAGIC:
        raise ValueError("not a qsl operator container")
    dim = int(header["dim"])
    payload = np.frombuffer(raw[_HEADER.itemsize :], dtype="<c16")
    if payload.size != dim * dim:
        raise ValueError(f"payload holds {payload.size} entries, expected {dim * dim}")
    return payload.reshape(dim, dim).astype(complex), int(header["k"]), header["kind"].decode()


def write_operator_csv(path, matrix) -> None:
    """Diagnostic dump: one row per entry (row, col, re, im)."""
    m = np.asarray(matrix, dtype=complex)
    i, j = np.indices(m.shape)
    table = np.column_stack([i.ravel(), j.ravel(), m.real.ravel(), m.imag.ravel()])
    np.savetxt(path, table, delimiter=",", header="row,col,re,im", comments="", fmt=["%d", "%d", "%.17g", "%.17g"])
