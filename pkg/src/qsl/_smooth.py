"""Smooth step and plateau primitives built from exp(-1/t)."""

from __future__ import annotations

import numpy as np


def _psi(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, monotone in between."""
    t = np.asarray(t, dtype=float)
    a = _psi(t)
    b = _psi(1.0 - t)
    return a / (a + b)


def plateau_values(x, a: float, b: float, inner_a: float, inner_b: float):
    """1 on [inner_a, inner_b], 0 outside (a, b), smooth monotone ramps."""
    x = np.asarray(x, dtype=float)
    up = smooth_step((x - a) / (inner_a - a))
    down = smooth_step((b - x) / (b - inner_b))
    return up * down
