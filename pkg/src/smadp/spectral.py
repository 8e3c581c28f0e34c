"""Layer spectral diagnostics: eigenvalues of W^T W, power-law tail exponent,
reliability-interval deviation, and the tempering coefficient derived from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ParameterError, StructuralError
from .numerics import check_matrix, sym_eigvals

EIG_FLOOR = 1e-12
NEGATIVE_SLACK = -1e-10


@dataclass(frozen=True)
class SpectralInterval:
    """Closed reliability interval for the tail exponent."""

    rho_min: float
    rho_max: float

    def __post_init__(self):
        if not (math.isfinite(self.rho_min) and math.isfinite(self.rho_max)):
            raise ParameterError("interval endpoints must be finite")
        if not self.rho_min < self.rho_max:
            raise ParameterError(
                f"interval needs rho_min < rho_max, got [{self.rho_min}, {self.rho_max}]"
            )

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.rho_min + self.rho_max)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.rho_max - self.rho_min)


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    tail_size: int
    valid: bool


@dataclass(frozen=True)
class SpectralReport:
    """Per-group per-step spectral state. `exponent` is nan when the fit failed;
    a failed fit falls back to deviation 0 (longest memory)."""

    group_id: int
    step: int
    exponent: float
    deviation: float
    tempering: float
    tail_size: int
    valid: bool


def spectral_eigs(weight) -> np.ndarray:
    """Eigenvalues of W^T W (squared singular values of W), descending, >= 0.

    The Gram matrix is formed on the smaller side and padded with the zeros
    that the larger side would contribute.
    """
    w = check_matrix(weight)
    rows, cols = w.shape
    gram = w @ w.T if rows <= cols else w.T @ w
    values = sym_eigvals(gram)
    if values.min() < NEGATIVE_SLACK:
        raise NumericalError(
            f"Gram eigenvalue {values.min():.3e} below the numerical slack {NEGATIVE_SLACK}"
        )
    values = np.maximum(values, 0.0)
    if values.size < cols:
        values = np.concatenate([values, np.zeros(cols - values.size)])
    return values


def fit_powerlaw_exponent(eigs, min_tail: int = 8) -> PowerLawFit:
    """Continuous MLE fit of the eigenvalue tail exponent.

    The tail is the top half of the usable (> 1e-12) eigenvalues, widened to
    min_tail entries when the half is smaller. With threshold set to the
    smallest retained eigenvalue, the estimate is 1 + k / sum(log(eig / min)).
    Fails (valid=False) when fewer than min_tail eigenvalues are usable or the
    tail carries no spread.
    """
    values = np.asarray(eigs, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise StructuralError("eigenvalue list must be a non-empty 1-d array")
    if np.any(np.diff(values) > 0):
        raise StructuralError("eigenvalues must be sorted descending")
    if values[-1] < 0:
        raise StructuralError("eigenvalues must be non-negative")
    if min_tail < 1:
        raise ParameterError("min_tail must be >= 1")
    usable = values[values > EIG_FLOOR]
    n = usable.size
    if n < min_tail:
        return PowerLawFit(exponent=float("nan"), tail_size=n, valid=False)
    tail_size = min(n, max(-(-n // 2), min_tail))
    tail = usable[:tail_size]
    lam_min = tail[-1]
    if lam_min == tail[0]:
        return PowerLawFit(exponent=float("nan"), tail_size=tail_size, valid=False)
    log_sum = float(np.log(tail / lam_min).sum())
    if log_sum <= 0.0:
        return PowerLawFit(exponent=float("nan"), tail_size=tail_size, valid=False)
    return PowerLawFit(exponent=1.0 + tail_size / log_sum, tail_size=tail_size, valid=True)


def interval_deviation(exponent: float, interval: SpectralInterval) -> float:
    """Distance from the reliability interval; zero inside it."""
    return max(0.0, interval.rho_min - exponent, exponent - interval.rho_max)


def tempering(deviation: float, c_lambda: float) -> float:
    """Exponential saturation of deviation into a memory-decay coefficient.

    1 - exp(-c_lambda * deviation); monotone, zero at zero. For extreme
    deviations the float64 value saturates to exactly 1.0.
    """
    if deviation < 0.0 or not math.isfinite(deviation):
        raise ParameterError(f"deviation must be finite and >= 0, got {deviation}")
    if c_lambda <= 0.0:
        raise ParameterError(f"c_lambda must be > 0, got {c_lambda}")
    return 1.0 - math.exp(-c_lambda * deviation)


def build_report(
    weight,
    interval: SpectralInterval,
    c_lambda: float,
    min_tail: int,
    group_id: int,
    step: int,
) -> SpectralReport:
    """Full per-group spectral report from the current weight matrix only."""
    fit = fit_powerlaw_exponent(spectral_eigs(weight), min_tail=min_tail)
    deviation = interval_deviation(fit.exponent, interval) if fit.valid else 0.0
    return SpectralReport(
        group_id=group_id,
        step=step,
        exponent=fit.exponent,
        deviation=deviation,
        tempering=tempering(deviation, c_lambda),
        tail_size=fit.tail_size,
        valid=fit.valid,
    )


def aggregate_stagewise(reports, stages: dict[int, str]) -> dict[str, dict[str, float]]:
    """Mean exponent and tempering over valid reports, grouped by stage tag.

    Stages whose reports are all invalid are absent from the result.
    """
    buckets: dict[str, list[SpectralReport]] = {}
    for report in reports:
        if report.group_id not in stages:
            raise ParameterError(f"group {report.group_id} has no stage tag")
        if report.valid:
            buckets.setdefault(stages[report.group_id], []).append(report)
    return {
        stage: {
            "mean_rho": float(np.mean([r.exponent for r in rs])),
            "mean_lambda": float(np.mean([r.tempering for r in rs])),
        }
        for stage, rs in buckets.items()
    }
