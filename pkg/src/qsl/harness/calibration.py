"""Calibration of the semiclassical constants alpha, beta, gamma.

Each constant is 1.25 times the largest observed ratio of residual to
hbar times the relevant derivative norm, over a battery of (f, g) pairs
and a k sweep.
"""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..exceptions import CalibrationIndeterminateError
from ..phase_space import ck_norms, height, linear, monomial, pair_norm, pair_norm_13, smooth_cap
from ..quantizer import build_space, commutator_residual, garding_residual, product_residual

SAFETY = 1.25
RESIDUAL_FLOOR = 1e-11
NORM_FLOOR = 1e-8
DEFAULT_CALIBRATION_K = (32, 64, 128)


def default_battery() -> list:
    return [
        (height(), linear((1.0, 0.0, 0.0))),
        (linear((0.6, 0.8, 0.0)), monomial((0, 0, 2))),
        (monomial((1, 1, 0)), height()),
        (smooth_cap((1.0, 0.0, 0.0), 1.2), linear((0.0, 0.0, 1.0))),
        (linear((0.3, 0.5, 0.8)), monomial((1, 0, 1))),
        (monomial((0, 2, 0)), monomial((0, 2, 0))),
    ]


def battery_hash(battery: Sequence, ks: Sequence[int]) -> str:
    text = ";".join(f"{f.name}|{g.name}" for f, g in battery) + "@" + ",".join(map(str, ks))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class CalibrationRecord:
    alpha: float
    beta: float
    gamma: float
    ks: tuple
    battery_hash: str
    ratios: tuple  # (k, pair index, constant name, ratio)

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma}


def calibrate_constants(ks: Sequence[int] = DEFAULT_CALIBRATION_K, battery: Optional[Sequence] = None, spaces: Optional[dict] = None) -> CalibrationRecord:
    battery = list(default_battery() if battery is None else battery)
    if not battery:
        raise CalibrationIndeterminateError("empty calibration battery")
    norms = [(ck_norms(f, 3), ck_norms(g, 3)) for f, g in battery]
    ratios = []
    for k in ks:
        space = (spaces or {}).get(k) or build_space(k)
        h = space.hbar
        for i, ((f, g), (nf, ng)) in enumerate(zip(battery, norms)):
            for obs, n in ((f, nf), (g, ng)):
                _record(ratios, k, i, "alpha", garding_residual(space, obs), h, n[2])
            _record(ratios, k, i, "beta", commutator_residual(space, f, g), h, pair_norm_13(nf, ng))
            _record(ratios, k, i, "gamma", product_residual(space, f, g), h, pair_norm(nf, ng, 2))
    best = {}
    for _, _, name, r in ratios:
        best[name] = max(best.get(name, 0.0), r)
    missing = [n for n in ("alpha", "beta", "gamma") if best.get(n, 0.0) <= 0.0]
    if missing:
        raise CalibrationIndeterminateError(f"no residual above the noise floor for {', '.join(missing)}")
    return CalibrationRecord(
        SAFETY * best["alpha"], SAFETY * best["beta"], SAFETY * best["gamma"],
        tuple(ks), battery_hash(battery, ks), tuple(ratios),
    )


@functools.lru_cache(maxsize=1)
def default_constants() -> CalibrationRecord:
    """The default-battery calibration, computed once per process."""
    return calibrate_constants()


def _record(out: list, k: int, i: int, name: str, residual: float, hbar: float, norm: float) -> None:
    # residuals at round-off carry no information about the constant
    if abs(residual) <= RESIDUAL_FLOOR or norm <= NORM_FLOOR:
        return
    out.append((k, i, name, abs(residual) / (hbar * norm)))


class ConstantCalibrator(BaseEstimator):
    """``fit(ks)`` measures the battery; fitted ``alpha_``, ``beta_``,
    ``gamma_`` and the full ``record_``."""

    def __init__(self, battery: Optional[Sequence] = None):
        self.battery = battery

    def fit(self, X=DEFAULT_CALIBRATION_K, y=None):
        ks = [int(k) for k in X]
        self.record_ = calibrate_constants(ks, self.battery)
        self.alpha_ = self.record_.alpha
        self.beta_ = self.record_.beta
        self.gamma_ = self.record_.gamma
        return self

    def constants(self) -> tuple:
        check_is_fitted(self, "record_")
        return self.alpha_, self.beta_, self.gamma_

