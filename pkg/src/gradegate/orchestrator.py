"""Two-stage control flow: calibrate once, then loop gate -> review -> adapt.

Stage 1 scores a held-out calibration split with the (externally trained)
backend and grid-fits the temperature. Stage 2 processes review slices one
cycle at a time: every instance is scored, calibrated, and gated; accepted
grades are frozen immediately; rejected instances go to a corrector (a human
queue or the simulation oracle) and the corrections accumulate. Once a
cycle's review is complete, a scale-aware replay buffer is retrieved, the
correction-plus-replay batch is exported and handed to the backend's opaque
update hook, and the temperature is refitted on the cycle's accepted samples
so the gate stays aligned with the updated model.

The engine never touches model weights; training lives entirely behind the
backend's update hook. Released grades are never changed retroactively by
later updates.
"""

from __future__ import annotations

import json
import logging
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .calibration import (
    CalibrationReport,
    GridSpec,
    TemperatureParam,
    apply_temperature,
    calibration_report,
    fit_temperature,
)
from .dataset import CorrectionRecord, DatasetSplit, GradingInstance
from .gate import GateDecision, decide
from .metrics import MetricsReport, basic_metrics, split_report
from .replay import Embedder, ReplayBuffer, build_replay_buffer
from .scoring import (
    LogitVector,
    PromptTemplate,
    ScorerBackend,
    completion_text,
    load_template,
    render_prompt,
    score_instance,
)

__all__ = [
    "Corrector",
    "OracleCorrector",
    "MappingCorrector",
    "CorrectionEntry",
    "FinalGrade",
    "CycleMetrics",
    "CycleState",
    "FineTuneRecord",
    "FineTuneBatch",
    "AdaptationEvent",
    "OrchestratorConfig",
    "Stage1Result",
    "SimulationResult",
    "OrchestratorError",
    "CorrectionError",
    "UpdateFailed",
    "run_stage1",
    "new_cycle",
    "run_cycle",
    "recalibrate",
    "export_finetune_batch",
    "evaluate_split",
    "simulate",
]

logger = logging.getLogger(__name__)


class OrchestratorError(Exception):
    pass


class CorrectionError(OrchestratorError):
    def __init__(self, instance_id: str, reason: str):
        super().__init__(f"correction for {instance_id!r} rejected: {reason}")
        self.instance_id = instance_id


class UpdateFailed(OrchestratorError):
    """Backend update hook failed; the cycle stays reviewing and is resumable."""


class Corrector(Protocol):
    """Supplies a corrected grade for a rejected instance, or None if pending."""

    corrector_id: str

    def correct(self, instance: GradingInstance, predicted_grade: int) -> int | None: ...


class OracleCorrector:
    """Simulated reviewer that answers with the stored gold grade."""

    def __init__(self, corrector_id: str = "oracle"):
        self.corrector_id = corrector_id

    def correct(self, instance: GradingInstance, predicted_grade: int) -> int | None:
        if instance.gold_grade is None:
            raise CorrectionError(instance.id, "oracle corrector needs a gold grade")
        return instance.gold_grade


class MappingCorrector:
    """Replays an explicit id -> grade mapping; unmapped instances stay pending."""

    def __init__(self, grades: dict[str, int], corrector_id: str = "queue"):
        self.grades = dict(grades)
        self.corrector_id = corrector_id

    def correct(self, instance: GradingInstance, predicted_grade: int) -> int | None:
        return self.grades.get(instance.id)


@dataclass(frozen=True)
class CorrectionEntry:
    instance: GradingInstance
    record: CorrectionRecord


@dataclass(frozen=True)
class FinalGrade:
    grade: int
    source: str  # "gate-accept" | "correction"


@dataclass(frozen=True)
class CycleMetrics:
    """Gate outcome summary over one split (metrics use gold-bearing rows)."""

    coverage: float
    full: MetricsReport
    accepted: MetricsReport
    rejected: MetricsReport
    gap_qwk: float | None

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "full": self.full.to_dict(),
            "accepted": self.accepted.to_dict(),
            "rejected": self.rejected.to_dict(),
            "gap_qwk": self.gap_qwk,
        }


@dataclass(frozen=True)
class AdaptationEvent:
    timestamp: float
    backend_version_before: int
    backend_version_after: int
    batch_id: str
    temperature_after: float


@dataclass
class CycleState:
    """Mutable record of one review cycle; immutable once finalized."""

    cycle_index: int
    split: DatasetSplit
    temperature_before: TemperatureParam
    corrections: list[CorrectionEntry] = field(default_factory=list)
    replay: ReplayBuffer | None = None
    temperature_after: TemperatureParam | None = None
    pre_metrics: CycleMetrics | None = None
    post_metrics: CycleMetrics | None = None
    final_grades: dict[str, FinalGrade] = field(default_factory=dict)
    pending_ids: tuple[str, ...] = ()
    events: list[AdaptationEvent] = field(default_factory=list)
    status: str = "open"  # open | reviewing | finalized


@dataclass(frozen=True)
class FineTuneRecord:
    instance: GradingInstance
    target_grade: int
    provenance: str  # "correction" | "replay"


@dataclass(frozen=True)
class FineTuneBatch:
    """Exportable training batch; corrections first, then replay items."""

    records: tuple[FineTuneRecord, ...]
    batch_id: str

    def training_pairs(self) -> list[tuple[GradingInstance, int]]:
        return [(r.instance, r.target_grade) for r in self.records]

    def provenance_counts(self) -> dict[str, int]:
        counts = {"correction": 0, "replay": 0}
        for r in self.records:
            counts[r.provenance] += 1
        return counts

    def to_wire_records(self, template: PromptTemplate) -> list[dict]:
        out = []
        for r in self.records:
            system, user = render_prompt(template, r.instance)
            out.append(
                {
                    "system": system,
                    "user": user,
                    "target": completion_text(r.target_grade, r.instance.rubric.max_grade),
                    "instance_id": r.instance.id,
                    "provenance": r.provenance,
                }
            )
        return out

    def to_jsonl(self, template: PromptTemplate) -> str:
        return "".join(
            json.dumps(rec, ensure_ascii=False) + "\n" for rec in self.to_wire_records(template)
        )


@dataclass
class OrchestratorConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    bins: int = 10
    k: int = 3
    replay_enabled: bool = True
    answers_per_question: int = 5
    label_source: str = "gold"  # gold | self | skip
    accumulate_corrections: bool = True
    template_name: str = "basic"
    seed: int = 0
    train_split: DatasetSplit | None = None
    embedder: Embedder | None = None
    report_dir: Path | None = None


@dataclass(frozen=True)
class Stage1Result:
    temperature: TemperatureParam
    report: CalibrationReport
    logits: dict[str, LogitVector]


def run_stage1(
    backend: ScorerBackend, cal_split: DatasetSplit, config: OrchestratorConfig
) -> Stage1Result:
    """Score the calibration split and fit the gate temperature."""
    if len(cal_split) == 0:
        raise OrchestratorError("calibration split is empty")
    template = load_template(config.template_name)
    logits: dict[str, LogitVector] = {}
    try:
        for inst in cal_split:
            if inst.gold_grade is None:
                raise OrchestratorError(f"calibration instance {inst.id!r} has no gold grade")
            logits[inst.id] = score_instance(backend, template, inst)
    except OrchestratorError:
        raise
    except Exception as exc:
        raise OrchestratorError(
            f"backend failed after scoring {len(logits)}/{len(cal_split)} "
            f"calibration instances: {exc}"
        ) from exc
    pairs = [(logits[inst.id], inst.gold_grade) for inst in cal_split]
    temperature, report = calibration_report(
        pairs, grid=config.grid, bins=config.bins, fitted_on=cal_split.name
    )
    if config.report_dir is not None:
        config.report_dir.mkdir(parents=True, exist_ok=True)
        (config.report_dir / "stage1_calibration.json").write_text(report.to_json())
    return Stage1Result(temperature=temperature, report=report, logits=logits)


def new_cycle(
    cycle_index: int,
    split: DatasetSplit,
    temperature: TemperatureParam,
    prior: CycleState | None = None,
    accumulate_corrections: bool = True,
) -> CycleState:
    """Open a cycle, carrying forward accumulated corrections when configured."""
    carried = list(prior.corrections) if (prior and accumulate_corrections) else []
    return CycleState(
        cycle_index=cycle_index,
        split=split,
        temperature_before=temperature,
        corrections=carried,
    )


def _gate_pass(
    backend: ScorerBackend,
    template: PromptTemplate,
    instances: Sequence[GradingInstance],
    temperature: TemperatureParam,
    tau: float,
):
    logits, preds, decisions = {}, {}, {}
    for inst in instances:
        vec = score_instance(backend, template, inst)
        pred = apply_temperature(vec, temperature)
        logits[inst.id] = vec
        preds[inst.id] = pred
        decisions[inst.id] = decide(pred, tau)
    return logits, preds, decisions


def _metrics_from(
    instances: Sequence[GradingInstance],
    preds: dict,
    decisions: dict[str, GateDecision],
) -> CycleMetrics:
    accepted_all = [inst.id for inst in instances if decisions[inst.id].accepted]
    coverage = len(accepted_all) / len(instances) if instances else 0.0
    gold_rows = [inst for inst in instances if inst.gold_grade is not None]
    if not gold_rows:
        empty = MetricsReport.empty()
        return CycleMetrics(coverage, empty, empty, empty, None)
    grades = [preds[inst.id].grade for inst in gold_rows]
    golds = [inst.gold_grade for inst in gold_rows]
    mask = [decisions[inst.id].accepted for inst in gold_rows]
    full = basic_metrics(grades, golds)
    sides = split_report(grades, golds, mask)
    return CycleMetrics(
        coverage=coverage,
        full=full,
        accepted=sides.accepted,
        rejected=sides.rejected,
        gap_qwk=sides.gap_qwk,
    )


def evaluate_split(
    backend: ScorerBackend,
    template: PromptTemplate,
    split: DatasetSplit,
    temperature: TemperatureParam,
    tau: float,
) -> CycleMetrics:
    """Score, calibrate, and gate a split without touching any state."""
    _, preds, decisions = _gate_pass(backend, template, split.instances, temperature, tau)
    return _metrics_from(split.instances, preds, decisions)


def recalibrate(
    accepted_pairs: Sequence[tuple[LogitVector, int]],
    grid: GridSpec,
    bins: int,
    previous: TemperatureParam,
) -> TemperatureParam:
    """Refit on accepted samples; an empty set keeps the previous temperature."""
    if len(accepted_pairs) == 0:
        logger.warning("no accepted samples to recalibrate on; keeping T=%.3f", previous.value)
        return previous
    return fit_temperature(accepted_pairs, grid=grid, bins=bins, fitted_on="accepted")


def export_finetune_batch(
    corrections: Sequence[tuple[GradingInstance, int]],
    replay_items: Sequence[GradingInstance],
    seed: int = 0,
) -> FineTuneBatch:
    """Assemble the update batch: shuffled corrections, then shuffled replay."""
    if not corrections and not replay_items:
        raise OrchestratorError("fine-tune batch needs at least one correction or replay item")
    rng = np.random.default_rng(seed)
    correction_records = [
        FineTuneRecord(inst, grade, "correction") for inst, grade in corrections
    ]
    replay_records = []
    for inst in replay_items:
        if inst.gold_grade is None:
            raise OrchestratorError(f"replay item {inst.id!r} has no gold grade")
        replay_records.append(FineTuneRecord(inst, inst.gold_grade, "replay"))
    ordered = [correction_records[i] for i in rng.permutation(len(correction_records))] + [
        replay_records[i] for i in rng.permutation(len(replay_records))
    ]
    return FineTuneBatch(records=tuple(ordered), batch_id=uuid.uuid4().hex[:12])


def run_cycle(
    state: CycleState,
    tau: float,
    corrector: Corrector,
    backend: ScorerBackend,
    config: OrchestratorConfig,
) -> CycleState:
    """Advance one review cycle through gate, review, update, and recalibration.

    Re-running a finalized cycle is a no-op. A cycle whose corrector leaves
    instances pending (or whose backend update fails) stays in ``reviewing``
    and can be re-run once the blocker clears; accepted grades recorded on the
    first pass are frozen and never revisited.
    """
    if state.status == "finalized":
        return state
    template = load_template(config.template_name)

    logits, preds, decisions = _gate_pass(
        backend, template, state.split.instances, state.temperature_before, tau
    )
    accepted = [inst for inst in state.split if decisions[inst.id].accepted]
    rejected = [inst for inst in state.split if not decisions[inst.id].accepted]

    for inst in accepted:
        state.final_grades.setdefault(inst.id, FinalGrade(preds[inst.id].grade, "gate-accept"))

    already_corrected = {entry.record.instance_id for entry in state.corrections}
    pending: list[str] = []
    for inst in rejected:
        if inst.id in already_corrected:
            continue
        grade = corrector.correct(inst, preds[inst.id].grade)
        if grade is None:
            pending.append(inst.id)
            continue
        if not inst.rubric.contains(grade):
            raise CorrectionError(
                inst.id, f"grade {grade} outside rubric 0..{inst.rubric.max_grade}"
            )
        record = CorrectionRecord(
            instance_id=inst.id, corrected_grade=grade, corrector_id=corrector.corrector_id
        )
        state.corrections.append(CorrectionEntry(inst, record))
        state.final_grades[inst.id] = FinalGrade(grade, "correction")

    state.pre_metrics = _metrics_from(state.split.instances, preds, decisions)

    if pending:
        state.pending_ids = tuple(pending)
        state.status = "reviewing"
        return state
    state.pending_ids = ()

    if not state.corrections:
        # full acceptance short-circuits replay, update, and recalibration
        state.temperature_after = state.temperature_before
        state.post_metrics = state.pre_metrics
        state.status = "finalized"
        return state

    if config.replay_enabled and config.k > 0 and config.train_split is not None:
        state.replay = build_replay_buffer(
            [entry.instance for entry in state.corrections],
            config.train_split,
            k=config.k,
            embedder=config.embedder,
            answers_per_question=config.answers_per_question,
            seed=config.seed,
        )
    else:
        if config.replay_enabled and config.train_split is None:
            logger.warning("replay enabled but no train split configured; skipping replay")
        state.replay = ReplayBuffer(items=(), retrieved_questions={})

    batch = export_finetune_batch(
        [(entry.instance, entry.record.corrected_grade) for entry in state.corrections],
        state.replay.items,
        seed=config.seed,
    )
    if config.report_dir is not None:
        config.report_dir.mkdir(parents=True, exist_ok=True)
        path = config.report_dir / f"finetune_cycle_{state.cycle_index}.jsonl"
        path.write_text(batch.to_jsonl(template))

    version_before = getattr(backend, "version", 0)
    if "update_hook" in getattr(backend, "capabilities", frozenset()):
        try:
            backend.update_hook(batch.training_pairs())
        except Exception as exc:
            state.status = "reviewing"
            raise UpdateFailed(
                f"backend update failed for cycle {state.cycle_index}: {exc}"
            ) from exc

    accepted_pairs: list[tuple[LogitVector, int]] = []
    if config.label_source != "skip":
        for inst in accepted:
            if config.label_source == "gold":
                label = inst.gold_grade
            else:  # "self": the frozen pre-update prediction
                label = preds[inst.id].grade
            if label is None:
                continue
            accepted_pairs.append((score_instance(backend, template, inst), label))
    state.temperature_after = recalibrate(
        accepted_pairs, config.grid, config.bins, previous=state.temperature_before
    )

    state.post_metrics = evaluate_split(
        backend, template, state.split, state.temperature_after, tau
    )
    state.events.append(
        AdaptationEvent(
            timestamp=time.time(),
            backend_version_before=version_before,
            backend_version_after=getattr(backend, "version", version_before),
            batch_id=batch.batch_id,
            temperature_after=state.temperature_after.value,
        )
    )
    state.status = "finalized"
    return state


@dataclass(frozen=True)
class SimulationResult:
    stage1: Stage1Result
    cycles: tuple[CycleState, ...]

    def temperatures(self) -> list[float]:
        out = [self.stage1.temperature.value]
        out.extend(
            c.temperature_after.value for c in self.cycles if c.temperature_after is not None
        )
        return out


def simulate(
    backend: ScorerBackend,
    cal_split: DatasetSplit,
    cycle_splits: Sequence[DatasetSplit],
    tau: float,
    corrector: Corrector,
    config: OrchestratorConfig,
) -> SimulationResult:
    """Run the full protocol: stage 1, then one finalized cycle per split."""
    stage1 = run_stage1(backend, cal_split, config)
    temperature = stage1.temperature
    cycles: list[CycleState] = []
    prior: CycleState | None = None
    for j, split in enumerate(cycle_splits, start=1):
        state = new_cycle(
            j, split, temperature, prior=prior,
            accumulate_corrections=config.accumulate_corrections,
        )
        state = run_cycle(state, tau, corrector, backend, config)
        if state.status != "finalized":
            raise OrchestratorError(
                f"cycle {j} did not finalize (status {state.status!r}); "
                f"{len(state.pending_ids)} corrections pending"
            )
        cycles.append(state)
        temperature = state.temperature_after or temperature
        prior = state
    return SimulationResult(stage1=stage1, cycles=tuple(cycles))
