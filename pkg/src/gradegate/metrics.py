"""Ordinal agreement and error metrics.

Quadratic weighted kappa compares the observed prediction/gold confusion
counts against the counts expected under chance agreement (the outer product
of the marginals scaled to n), with disagreements penalized by the squared
grade distance:

    QWK = 1 - sum(w * O) / sum(w * E),   w[g][h] = (g - h)^2

QWK is undefined (returned as None, never silently 0) when the weighted
expected sum vanishes, e.g. when predictions and golds are all one identical
grade; callers must handle the marker explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "ConfusionMatrix",
    "MetricsReport",
    "SplitReport",
    "MetricsError",
    "qwk",
    "basic_metrics",
    "split_report",
    "shift_delta",
    "grouped_by_scale",
]


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[g][h] = number of instances predicted g whose gold grade is h."""

    max_grade: int
    counts: np.ndarray

    @classmethod
    def from_pairs(
        cls, preds: Sequence[int], golds: Sequence[int], max_grade: int | None = None
    ) -> "ConfusionMatrix":
        if len(preds) != len(golds):
            raise MetricsError(f"{len(preds)} predictions vs {len(golds)} gold grades")
        if max_grade is None:
            max_grade = int(max(max(preds, default=0), max(golds, default=0)))
        k = max_grade + 1
        counts = np.zeros((k, k), dtype=np.int64)
        for p, g in zip(preds, golds):
            if not (0 <= p <= max_grade and 0 <= g <= max_grade):
                raise MetricsError(f"grade pair ({p}, {g}) outside 0..{max_grade}")
            counts[p, g] += 1
        return cls(max_grade=max_grade, counts=counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def _squared_weights(k: int) -> np.ndarray:
    idx = np.arange(k)
    return (idx[:, None] - idx[None, :]).astype(float) ** 2


def qwk(cm: ConfusionMatrix) -> float | None:
    """Quadratic weighted kappa, or None when chance agreement is degenerate."""
    n = cm.n
    if n < 2:
        raise MetricsError(f"QWK needs at least 2 observations, got {n}")
    w = _squared_weights(cm.max_grade + 1)
    observed = cm.counts.astype(float)
    row = observed.sum(axis=1)
    col = observed.sum(axis=0)
    expected = np.outer(row, col) / n
    denom = float((w * expected).sum())
    if denom == 0.0:
        return None
    return 1.0 - float((w * observed).sum()) / denom


@dataclass(frozen=True)
class MetricsReport:
    """Pooled agreement metrics for one set of (prediction, gold) pairs."""

    n: int
    qwk: float | None
    mae: float | None
    exact_match: float | None
    off_by_1: float | None
    mean_offset: float | None

    @classmethod
    def empty(cls) -> "MetricsReport":
        return cls(n=0, qwk=None, mae=None, exact_match=None, off_by_1=None, mean_offset=None)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "qwk": self.qwk,
            "mae": self.mae,
            "exact_match": self.exact_match,
            "off_by_1": self.off_by_1,
            "mean_offset": self.mean_offset,
        }


def basic_metrics(
    preds: Sequence[int], golds: Sequence[int], max_grade: int | None = None
) -> MetricsReport:
    """MAE, exact match, off-by-1, signed mean offset, and QWK when defined."""
    if len(preds) == 0:
        raise MetricsError("metrics are undefined on empty inputs")
    if len(preds) != len(golds):
        raise MetricsError(f"{len(preds)} predictions vs {len(golds)} gold grades")
    p = np.asarray(preds, dtype=float)
    g = np.asarray(golds, dtype=float)
    diff = p - g
    kappa = None
    if len(preds) >= 2:
        kappa = qwk(ConfusionMatrix.from_pairs(preds, golds, max_grade))
    return MetricsReport(
        n=len(preds),
        qwk=kappa,
        mae=float(np.abs(diff).mean()),
        exact_match=float((diff == 0).mean()),
        off_by_1=float((np.abs(diff) <= 1).mean()),
        mean_offset=float(diff.mean()),
    )


@dataclass(frozen=True)
class SplitReport:
    """Accepted vs rejected metrics, with the accepted-minus-rejected QWK gap."""

    accepted: MetricsReport
    rejected: MetricsReport
    gap_qwk: float | None

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted.to_dict(),
            "rejected": self.rejected.to_dict(),
            "gap_qwk": self.gap_qwk,
        }


def split_report(
    preds: Sequence[int],
    golds: Sequence[int],
    accepted_mask: Sequence[bool],
    max_grade: int | None = None,
) -> SplitReport:
    """Metrics computed independently per gate outcome.

    ``accepted_mask[i]`` is True for gate-accepted instances. Empty sides
    produce an empty-marked report, and the gap is None unless both QWKs are
    defined.
    """
    if not (len(preds) == len(golds) == len(accepted_mask)):
        raise MetricsError("preds, golds, and decisions must align")
    mask = np.asarray(accepted_mask, dtype=bool)
    preds = np.asarray(preds)
    golds = np.asarray(golds)

    def side(m: np.ndarray) -> MetricsReport:
        if m.sum() == 0:
            return MetricsReport.empty()
        return basic_metrics(preds[m].tolist(), golds[m].tolist(), max_grade)

    acc = side(mask)
    rej = side(~mask)
    gap = None
    if acc.qwk is not None and rej.qwk is not None:
        gap = acc.qwk - rej.qwk
    return SplitReport(accepted=acc, rejected=rej, gap_qwk=gap)


def shift_delta(
    report_source: MetricsReport, report_target: MetricsReport, loss: str = "mae"
) -> float:
    """Increase in expected grading loss from the source to the target split."""
    if loss == "mae":
        src, tgt = report_source.mae, report_target.mae
    elif loss == "one_minus_em":
        src = None if report_source.exact_match is None else 1.0 - report_source.exact_match
        tgt = None if report_target.exact_match is None else 1.0 - report_target.exact_match
    else:
        raise MetricsError(f"unknown loss {loss!r}; expected 'mae' or 'one_minus_em'")
    if src is None or tgt is None:
        raise MetricsError("shift delta needs both reports defined")
    return tgt - src


def grouped_by_scale(
    preds: Sequence[int], golds: Sequence[int], scales: Sequence[int]
) -> dict[int, MetricsReport]:
    """Per-rubric-scale reports for heterogeneous corpora, keyed by max grade.

    Complements the pooled report; both are surfaced when scales are mixed
    because pooled QWK over heterogeneous rubrics conflates scale effects.
    """
    if not (len(preds) == len(golds) == len(scales)):
        raise MetricsError("preds, golds, and scales must align")
    out: dict[int, MetricsReport] = {}
    for scale in sorted(set(scales)):
        rows = [i for i, s in enumerate(scales) if s == scale]
        out[scale] = basic_metrics(
            [preds[i] for i in rows], [golds[i] for i in rows], max_grade=scale
        )
    return out
