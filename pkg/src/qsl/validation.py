"""Input-validation helpers shared by every module."""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionMismatchError, InvalidStateError

UNIT_TOL = 1e-12


def check_points(x, tol: float = UNIT_TOL, renormalize: bool = False) -> np.ndarray:
    """Coerce ``x`` to an ``(N, 3)`` float array of unit vectors.

    A single point of shape ``(3,)`` is promoted to ``(1, 3)``.
    With ``renormalize`` the rows are projected back to the sphere instead of
    being rejected; used for points produced by our own arithmetic.
    """
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected points of shape (N, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")
    norms = np.linalg.norm(pts, axis=1)
    if renormalize:
        return pts / norms[:, None]
    if np.any(np.abs(norms**2 - 1.0) > tol):
        bad = float(np.max(np.abs(norms**2 - 1.0)))
        raise ValueError(f"points are not on the unit sphere (max |r^2-1| = {bad:.2e})")
    return pts


def check_square(a, name: str = "operator") -> np.ndarray:
    m = np.asarray(a)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def check_hermitian(a, tol: float = 1e-12, name: str = "operator") -> np.ndarray:
    m = check_square(a, name)
    dev = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
    if dev > tol:
        raise InvalidStateError(f"{name} is not Hermitian (max deviation {dev:.2e})")
    return m


def check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape} vs {b.shape}")


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value
