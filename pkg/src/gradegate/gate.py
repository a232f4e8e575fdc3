"""Confidence-gated selective prediction.

A prediction is accepted exactly when its calibrated confidence reaches the
threshold (boundary inclusive); everything else is deferred to a human.
Sweeping the threshold grid produces the coverage-quality curve from which an
operating point is chosen: the largest threshold whose accepted-set quality
meets a reliability target without dropping coverage below a floor.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calibration import CalibratedPrediction
from .metrics import basic_metrics

__all__ = [
    "GateDecision",
    "OperatingPoint",
    "CoverageQualityCurve",
    "ReliabilityTarget",
    "SelectionResult",
    "GateError",
    "DEFAULT_TAU_GRID",
    "decide",
    "sweep_thresholds",
    "select_operating_point",
    "curve_to_json",
    "curve_to_csv",
]

DEFAULT_TAU_GRID = (0.4, 0.5, 0.6, 0.8, 0.9)

SCHEMA_VERSION = 1


class GateError(Exception):
    pass


@dataclass(frozen=True)
class GateDecision:
    instance_id: str | None
    outcome: str  # "accept" | "reject"
    confidence: float
    threshold: float

    @property
    def accepted(self) -> bool:
        return self.outcome == "accept"


def decide(pred: CalibratedPrediction, tau: float) -> GateDecision:
    """Accept iff confidence >= tau."""
    if not 0.0 <= tau <= 1.0:
        raise GateError(f"threshold must be in [0, 1], got {tau}")
    outcome = "accept" if pred.confidence >= tau else "reject"
    return GateDecision(
        instance_id=pred.instance_id,
        outcome=outcome,
        confidence=pred.confidence,
        threshold=tau,
    )


@dataclass(frozen=True)
class OperatingPoint:
    tau: float
    coverage: float
    accepted_qwk: float | None
    accepted_accuracy: float | None

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "coverage": self.coverage,
            "accepted_qwk": self.accepted_qwk,
            "accepted_accuracy": self.accepted_accuracy,
        }


@dataclass(frozen=True)
class CoverageQualityCurve:
    points: tuple[OperatingPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)


def sweep_thresholds(
    preds: Sequence[CalibratedPrediction],
    golds: Sequence[int],
    tau_grid: Sequence[float] = DEFAULT_TAU_GRID,
) -> CoverageQualityCurve:
    """One operating point per threshold, quality measured on the accepted set.

    Accepted sets with fewer than 2 items or no defined chance agreement carry
    a None QWK marker rather than a number.
    """
    if len(preds) == 0:
        raise GateError("cannot sweep thresholds over an empty prediction set")
    if len(preds) != len(golds):
        raise GateError(f"{len(preds)} predictions vs {len(golds)} gold grades")
    if list(tau_grid) != sorted(tau_grid):
        raise GateError("tau grid must be sorted ascending")

    conf = np.array([p.confidence for p in preds])
    grades = np.array([p.grade for p in preds])
    golds_arr = np.asarray(golds)

    points = []
    for tau in tau_grid:
        mask = conf >= tau
        coverage = float(mask.mean())
        accepted_qwk = None
        accepted_accuracy = None
        if mask.sum() >= 1:
            accepted_accuracy = float((grades[mask] == golds_arr[mask]).mean())
        if mask.sum() >= 2:
            report = basic_metrics(grades[mask].tolist(), golds_arr[mask].tolist())
            accepted_qwk = report.qwk
        points.append(
            OperatingPoint(
                tau=float(tau),
                coverage=coverage,
                accepted_qwk=accepted_qwk,
                accepted_accuracy=accepted_accuracy,
            )
        )
    return CoverageQualityCurve(points=tuple(points))


@dataclass(frozen=True)
class ReliabilityTarget:
    """Quality bar the accepted set must clear, e.g. QWK >= 0.80."""

    metric: str = "qwk"  # "qwk" | "accuracy"
    min_value: float = 0.80


@dataclass(frozen=True)
class SelectionResult:
    point: OperatingPoint
    target_miss: bool


def _metric_of(point: OperatingPoint, metric: str) -> float | None:
    if metric == "qwk":
        return point.accepted_qwk
    if metric == "accuracy":
        return point.accepted_accuracy
    raise GateError(f"unknown reliability metric {metric!r}")


def select_operating_point(
    curve: CoverageQualityCurve,
    reliability_target: ReliabilityTarget = ReliabilityTarget(),
    coverage_floor: float = 0.35,
) -> SelectionResult:
    """Largest threshold meeting the target and the coverage floor.

    When no point qualifies, returns the best-metric point (largest tau on
    ties) flagged as a target miss so callers cannot mistake it for a pass.
    """
    if len(curve) == 0:
        raise GateError("cannot select from an empty curve")

    qualifying = [
        p
        for p in curve
        if (m := _metric_of(p, reliability_target.metric)) is not None
        and m >= reliability_target.min_value
        and p.coverage >= coverage_floor
    ]
    if qualifying:
        return SelectionResult(point=max(qualifying, key=lambda p: p.tau), target_miss=False)

    def sort_key(p: OperatingPoint):
        m = _metric_of(p, reliability_target.metric)
        return (m is not None, m if m is not None else 0.0, p.tau)

    return SelectionResult(point=max(curve, key=sort_key), target_miss=True)


def curve_to_json(curve: CoverageQualityCurve) -> str:
    return json.dumps(
        {"schema_version": SCHEMA_VERSION, "points": [p.to_dict() for p in curve]}
    )


def curve_to_csv(curve: CoverageQualityCurve) -> str:
    out = io.StringIO()
    out.write("tau,coverage,accepted_qwk,accepted_accuracy\n")
    for p in curve:
        q = "" if p.accepted_qwk is None else f"{p.accepted_qwk:.6f}"
        a = "" if p.accepted_accuracy is None else f"{p.accepted_accuracy:.6f}"
        out.write(f"{p.tau},{p.coverage:.6f},{q},{a}\n")
    return out.getvalue()
