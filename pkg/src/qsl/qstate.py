"""State-space metrics: fidelity, Schatten norms, overlap ratios, and
Husimi-based microsupport probes."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .exceptions import DimensionMismatchError, InsufficientSamplesError, InvalidStateError, UndefinedOverlapError
from .harness.fitting import DecayFit, fit_decay_order
from .phase_space import Observable, fibonacci_grid, sup_norm
from .validation import check_hermitian, check_same_dim

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-9


class DensityOperator:
    """Hermitian, positive, trace-one operator.

    Optionally carries a factor ``L`` with ``matrix = L L^*``. Fidelities
    between factored states are computed from the factors, which avoids
    the square-root amplification of round-off in near-null directions.
    """

    def __init__(self, matrix, factor: Optional[np.ndarray] = None, validate: bool = True):
        m = np.array(matrix, dtype=complex)
        if validate:
            check_hermitian(m, HERMITIAN_TOL * max(1.0, float(np.max(np.abs(m)))), "density operator")
        m = 0.5 * (m + m.conj().T)
        self._matrix = m
        self._matrix.setflags(write=False)
        self.factor = None if factor is None else np.asarray(factor, dtype=complex)
        self._eig = None
        self._lock = threading.Lock()
        if validate:
            tr = float(np.trace(m).real)
            if abs(tr - 1.0) > TRACE_TOL:
                raise InvalidStateError(f"trace {tr:.12f} differs from 1")
            if self.eigenvalues[0] < -PSD_TOL:
                raise InvalidStateError(f"negative eigenvalue {self.eigenvalues[0]:.3e}")

    @classmethod
    def from_factor(cls, factor, validate: bool = True) -> "DensityOperator":
        L = np.asarray(factor, dtype=complex)
        return cls(L @ L.conj().T, factor=L, validate=validate)

    @classmethod
    def pure(cls, psi) -> "DensityOperator":
        v = np.asarray(psi, dtype=complex).ravel()
        v = v / np.linalg.norm(v)
        return cls.from_factor(v[:, None])

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityOperator":
        return cls(np.eye(dim) / dim, factor=np.eye(dim) / math.sqrt(dim))

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    def _decompose(self):
        with self._lock:
            if self._eig is None:
                try:
                    w, v = sla.eigh(self._matrix, driver="evd")
                except np.linalg.LinAlgError:
                    w, v = sla.eigh(self._matrix, driver="evr")
                self._eig = (w, v)
        return self._eig

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._decompose()[0]

    def sqrt(self) -> np.ndarray:
        w, v = self._decompose()
        return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T

    def root_factor(self) -> np.ndarray:
        """Any X with X X^* = matrix (the stored factor when present)."""
        return self.factor if self.factor is not None else self.sqrt()

    def conjugate(self, unitary: np.ndarray) -> "DensityOperator":
        """U theta U^*, carrying the factor along."""
        u = np.asarray(unitary)
        check_same_dim(u, self._matrix)
        fac = None if self.factor is None else u @ self.factor
        out = DensityOperator(u @ self._matrix @ u.conj().T, fac, validate=False)
        return out

    @property
    def op_norm(self) -> float:
        return float(self.eigenvalues[-1])

    def save(self, path, k: int) -> None:
        from .quantizer import write_operator

        write_operator(path, self._matrix, k, "density")

    @classmethod
    def load(cls, path) -> tuple["DensityOperator", int]:
        from .quantizer import read_operator

        m, k, kind = read_operator(path)
        if kind != "density":
            raise InvalidStateError(f"container holds a {kind!r}, not a density operator")
        return cls(m), k


def _as_matrix(a) -> np.ndarray:
    return a.matrix if isinstance(a, DensityOperator) else np.asarray(a)


def fidelity(theta: DensityOperator, sigma: DensityOperator) -> float:
    """Phi = || sqrt(theta) sqrt(sigma) ||_tr, clipped into [0, 1].

    With factors theta = A A^*, sigma = B B^*, the singular values of
    sqrt(theta) sqrt(sigma) coincide with those of A^* B.
    """
    if theta.dim != sigma.dim:
        raise DimensionMismatchError(f"dimension mismatch: {theta.dim} vs {sigma.dim}")
    a = theta.root_factor()
    b = sigma.root_factor()
    sv = sla.svdvals(a.conj().T @ b)
    return float(min(max(np.sum(sv), 0.0), 1.0 + 1e-12))


@dataclass(frozen=True)
class SchattenNorms:
    op_norm: float
    trace_norm: float
    hilbert_schmidt: float


def schatten(a) -> SchattenNorms:
    sv = sla.svdvals(_as_matrix(a))
    return SchattenNorms(float(sv.max(initial=0.0)), float(sv.sum()), float(np.sqrt(np.sum(sv**2))))


def op_norm(a) -> float:
    m = _as_matrix(a)
    if np.allclose(m, m.conj().T, atol=1e-14 * max(1.0, float(np.max(np.abs(m))))):
        w = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
        return float(max(abs(w[0]), abs(w[-1])))
    return float(sla.svdvals(m)[0])


def gamma_q(theta, sigma) -> float:
    """||theta sigma||_op / (||theta||_op ||sigma||_op)."""
    a, b = _as_matrix(theta), _as_matrix(sigma)
    check_same_dim(a, b)
    na, nb = op_norm(a), op_norm(b)
    if na == 0 or nb == 0:
        raise UndefinedOverlapError("overlap of a zero operator is undefined")
    return float(min(sla.svdvals(a @ b)[0] / (na * nb), 1.0))


def gamma_cl(g: Observable, h: Observable, grid: Optional[np.ndarray] = None, refine: bool = False) -> float:
    """||g h|| / (||g|| ||h||) with uniform norms on a probe grid."""
    pts = fibonacci_grid() if grid is None else grid
    ng = sup_norm(g, grid=pts, refine=refine)
    nh = sup_norm(h, grid=pts, refine=refine)
    if ng == 0 or nh == 0:
        raise UndefinedOverlapError("overlap of a zero function is undefined")
    ngh = float(np.max(np.abs(g(pts) * h(pts))))
    return float(min(ngh / (ng * nh), 1.0))


@dataclass
class MicroProbe:
    region: Observable
    masses: list
    fit: DecayFit
    region_id: str = "region"

    @property
    def rapid_decay(self) -> bool:
        return bool(self.fit.slope >= self.fit.threshold)

    def csv_rows(self) -> list:
        return [(h, m, self.region_id) for h, m in self.masses]


def microsupport_probe(
    family: Sequence,
    region: Observable,
    threshold: float = 4.0,
    spaces: Optional[dict] = None,
    region_id: str = "region",
) -> MicroProbe:
    """Husimi mass of ``region`` along a family of states.

    ``family`` holds (hbar, state) pairs; the decay order is the
    least-squares slope of log mass against log hbar.
    """
    from .quantizer import build_space, husimi_pairing

    hbars = sorted({float(h) for h, _ in family})
    if len(hbars) < 4:
        raise InsufficientSamplesError("microsupport probe needs at least 4 distinct hbar values")
    if max(hbars) / min(hbars) < 10.0 - 1e-9:
        raise InsufficientSamplesError("hbar values must span at least one decade")
    spaces = dict(spaces or {})
    masses = []
    for h, theta in family:
        k = int(round(1.0 / h))
        space = spaces.get(k) or build_space(k)
        spaces[k] = space
        masses.append((float(h), husimi_pairing(space, theta, region)))
    fit = fit_decay_order([(h, m) for h, m in masses], threshold)
    return MicroProbe(region, masses, fit, region_id)


def random_state(rng: np.random.Generator, dim: int, rank: Optional[int] = None) -> DensityOperator:
    """Wishart-type random state of the given rank (full rank by default)."""
    r = dim if rank is None else int(rank)
    if not 1 <= r <= dim:
        raise ValueError(f"rank {r} outside [1, {dim}]")
    g = rng.normal(size=(dim, r)) + 1j * rng.normal(size=(dim, r))
    g /= math.sqrt(float(np.sum(np.abs(g) ** 2)))
    return DensityOperator.from_factor(g)
