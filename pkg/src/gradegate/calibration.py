"""Temperature scaling and expected calibration error.

Temperature scaling divides a logit vector by a single positive scalar T
before the softmax, which reshapes confidence without ever changing the
argmax. T is fitted post hoc by exhaustive grid search: evaluate the expected
calibration error (ECE) of the calibration split at every grid point and keep
the minimizer, breaking exact ties toward T = 1 (the no-op).

ECE partitions predictions into B equal-width confidence bins over [0, 1] and
sums the bin-weighted absolute gaps between mean confidence and empirical
accuracy:

    ECE = sum_b (n_b / n) * |acc_b - conf_b|

Bins are left-closed/right-open except the last, which closes at 1.0; a
confidence exactly on an edge lands in the higher bin. Only non-empty bins
contribute. The maximum per-bin gap (MCE) is the empirical surrogate of the
min-max confidence-gap objective.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .scoring import LogitVector

__all__ = [
    "GridSpec",
    "TemperatureParam",
    "CalibratedPrediction",
    "ReliabilityBins",
    "EceReport",
    "CalibrationReport",
    "CalibrationError",
    "DEFAULT_BINS",
    "softmax",
    "apply_temperature",
    "compute_ece",
    "max_confidence_gap",
    "fit_temperature",
    "calibration_report",
]

DEFAULT_BINS = 10

SCHEMA_VERSION = 1


class CalibrationError(Exception):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform search grid for the temperature scalar."""

    lo: float = 0.1
    hi: float = 2.0
    step: float = 0.001

    def __post_init__(self):
        if not (0 < self.lo <= self.hi) or self.step <= 0:
            raise CalibrationError(f"invalid grid {self!r}")

    def points(self) -> np.ndarray:
        n = int(round((self.hi - self.lo) / self.step)) + 1
        return np.round(self.lo + self.step * np.arange(n), 12)


@dataclass(frozen=True)
class TemperatureParam:
    """A (possibly fitted) temperature with its search configuration."""

    value: float
    fitted_on: str | None = None
    grid: GridSpec = field(default_factory=GridSpec)
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        if self.value <= 0:
            raise CalibrationError(f"temperature must be > 0, got {self.value}")


@dataclass(frozen=True)
class CalibratedPrediction:
    """Softmax-calibrated grade distribution for one instance."""

    instance_id: str | None
    probabilities: np.ndarray
    grade: int
    confidence: float
    temperature_used: float


@dataclass(frozen=True)
class ReliabilityBins:
    """Per-bin counts, mean confidence, and empirical accuracy."""

    bins: int
    counts: np.ndarray
    mean_confidence: np.ndarray
    accuracy: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.bins + 1) / self.bins

    def to_dicts(self) -> list[dict]:
        out = []
        for b in range(self.bins):
            out.append(
                {
                    "lo": b / self.bins,
                    "hi": (b + 1) / self.bins,
                    "count": int(self.counts[b]),
                    "mean_confidence": float(self.mean_confidence[b]),
                    "accuracy": float(self.accuracy[b]),
                }
            )
        return out


@dataclass(frozen=True)
class EceReport:
    ece: float
    bins: ReliabilityBins


def softmax(z: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Overflow-safe softmax of z / temperature."""
    if temperature <= 0:
        raise CalibrationError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise CalibrationError("non-finite logits")
    # subtract the max before dividing so the fit's confidence shortcut
    # (1 / sum(exp((z - max) / T))) reproduces these values bit-exactly
    scaled = (z - z.max(axis=-1, keepdims=True)) / temperature
    e = np.exp(scaled)
    return e / e.sum(axis=-1, keepdims=True)


def _as_temperature(t: "TemperatureParam | float") -> float:
    return t.value if isinstance(t, TemperatureParam) else float(t)


def apply_temperature(z: LogitVector, temperature: TemperatureParam | float) -> CalibratedPrediction:
    """Rescale one logit vector into a calibrated prediction.

    Argmax ties break toward the lowest grade (never over-grade on a tie).
    """
    t = _as_temperature(temperature)
    p = softmax(z.z, t)
    grade = int(np.argmax(p))
    return CalibratedPrediction(
        instance_id=z.instance_id,
        probabilities=p,
        grade=grade,
        confidence=float(p[grade]),
        temperature_used=t,
    )


def _bin_index(confidence: np.ndarray, bins: int) -> np.ndarray:
    # edge values go to the higher bin; the last bin closes at 1.0
    return np.minimum((confidence * bins).astype(int), bins - 1)


def _binned(confidence: np.ndarray, correct: np.ndarray, bins: int) -> ReliabilityBins:
    idx = _bin_index(confidence, bins)
    counts = np.bincount(idx, minlength=bins).astype(float)
    conf_sum = np.bincount(idx, weights=confidence, minlength=bins)
    acc_sum = np.bincount(idx, weights=correct.astype(float), minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.where(counts > 0, conf_sum / np.maximum(counts, 1), 0.0)
        acc = np.where(counts > 0, acc_sum / np.maximum(counts, 1), 0.0)
    return ReliabilityBins(bins=bins, counts=counts, mean_confidence=mean_conf, accuracy=acc)


def _gaps(binned: ReliabilityBins) -> np.ndarray:
    return np.abs(binned.accuracy - binned.mean_confidence)


def _ece_from_arrays(confidence: np.ndarray, correct: np.ndarray, bins: int) -> float:
    b = _binned(confidence, correct, bins)
    return float(np.sum(b.counts / len(confidence) * _gaps(b)))


def _check_pred_inputs(preds: Sequence[CalibratedPrediction], golds: Sequence[int]):
    if len(preds) == 0:
        raise CalibrationError("ECE is undefined on an empty prediction set")
    if len(preds) != len(golds):
        raise CalibrationError(f"{len(preds)} predictions vs {len(golds)} gold grades")


def compute_ece(
    preds: Sequence[CalibratedPrediction], golds: Sequence[int], bins: int = DEFAULT_BINS
) -> EceReport:
    """ECE plus the reliability bins it was computed from."""
    _check_pred_inputs(preds, golds)
    conf = np.array([p.confidence for p in preds])
    correct = np.array([p.grade == g for p, g in zip(preds, golds)])
    binned = _binned(conf, correct, bins)
    ece = float(np.sum(binned.counts / len(preds) * _gaps(binned)))
    return EceReport(ece=ece, bins=binned)


def max_confidence_gap(
    preds: Sequence[CalibratedPrediction], golds: Sequence[int], bins: int = DEFAULT_BINS
) -> float:
    """Largest confidence-accuracy gap over non-empty bins (MCE)."""
    _check_pred_inputs(preds, golds)
    conf = np.array([p.confidence for p in preds])
    correct = np.array([p.grade == g for p, g in zip(preds, golds)])
    binned = _binned(conf, correct, bins)
    gaps = _gaps(binned)[binned.counts > 0]
    return float(gaps.max()) if gaps.size else 0.0


def _confidence_curves(
    cal_pairs: Sequence[tuple[LogitVector, int]], grid_points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Confidence matrix (n_temps, n) and correctness vector for the grid.

    The argmax is temperature-invariant, so correctness is computed once; the
    top-class confidence at temperature T reduces to
    1 / sum_k exp((z_k - z_max) / T), grouped by rubric size for vectorization.
    """
    n = len(cal_pairs)
    correct = np.empty(n, dtype=bool)
    conf = np.empty((len(grid_points), n))
    by_width: dict[int, list[int]] = {}
    for i, (vec, gold) in enumerate(cal_pairs):
        correct[i] = int(np.argmax(vec.z)) == gold
        by_width.setdefault(vec.rubric.n_grades, []).append(i)
    for width, rows in by_width.items():
        z = np.stack([cal_pairs[i][0].z for i in rows])
        centered = z - z.max(axis=1, keepdims=True)
        for t_idx, t in enumerate(grid_points):
            conf[t_idx, rows] = 1.0 / np.exp(centered / t).sum(axis=1)
    return conf, correct


def fit_temperature(
    cal_pairs: Sequence[tuple[LogitVector, int]],
    grid: GridSpec | None = None,
    bins: int = DEFAULT_BINS,
    fitted_on: str | None = None,
) -> TemperatureParam:
    """Exhaustive grid search for the ECE-minimizing temperature.

    Exact ECE ties break toward the grid point closest to 1.0, then toward
    the smaller temperature. The returned ECE never exceeds the T = 1 value
    because 1.0 lies on the default grid.
    """
    if len(cal_pairs) == 0:
        raise CalibrationError("cannot fit a temperature on an empty calibration set")
    grid = grid or GridSpec()
    points = grid.points()
    conf, correct = _confidence_curves(cal_pairs, points)
    best_t, best_ece = None, None
    for t_idx, t in enumerate(points):
        ece = _ece_from_arrays(conf[t_idx], correct, bins)
        if (
            best_ece is None
            or ece < best_ece
            or (ece == best_ece and abs(t - 1.0) < abs(best_t - 1.0))
        ):
            best_t, best_ece = float(t), ece
    return TemperatureParam(value=best_t, fitted_on=fitted_on, grid=grid, bins=bins)


@dataclass(frozen=True)
class CalibrationReport:
    """Before/after calibration summary; the /calibration payload shape."""

    t_star: float
    ece_before: float
    ece_after: float
    mce: float
    bins: ReliabilityBins
    fitted_on: str | None = None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "T_star": self.t_star,
            "ece_before": self.ece_before,
            "ece_after": self.ece_after,
            "mce": self.mce,
            "fitted_on": self.fitted_on,
            "bins": self.bins.to_dicts(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def calibration_report(
    cal_pairs: Sequence[tuple[LogitVector, int]],
    grid: GridSpec | None = None,
    bins: int = DEFAULT_BINS,
    fitted_on: str | None = None,
) -> tuple[TemperatureParam, CalibrationReport]:
    """Fit T and summarize ECE/MCE before (T=1) and after scaling."""
    temp = fit_temperature(cal_pairs, grid=grid, bins=bins, fitted_on=fitted_on)
    golds = [g for _, g in cal_pairs]
    before = [apply_temperature(vec, 1.0) for vec, _ in cal_pairs]
    after = [apply_temperature(vec, temp) for vec, _ in cal_pairs]
    report_after = compute_ece(after, golds, bins)
    report = CalibrationReport(
        t_star=temp.value,
        ece_before=compute_ece(before, golds, bins).ece,
        ece_after=report_after.ece,
        mce=max_confidence_gap(after, golds, bins),
        bins=report_after.bins,
        fitted_on=fitted_on,
    )
    return temp, report
