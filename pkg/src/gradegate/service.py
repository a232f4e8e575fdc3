"""HTTP review service: ingestion, scoring, queue, corrections, cycle control.

Batches arrive as JSONL. Records tagged ``train`` join the replay pool,
records tagged ``cal`` trigger a temperature fit once scored, and everything
else is scored, calibrated, and gated into the current open cycle: accepted
grades are released immediately with gate provenance, rejections enter the
review queue ordered most-uncertain-first. Corrections are idempotent per
(instance, cycle); finalizing a cycle exports the fine-tune batch, invokes
the backend's update hook, recalibrates the temperature on the cycle's
accepted samples, and opens the next cycle.

State lives in the embedded store, so a restart recovers the queue,
corrections, and finalized cycles exactly as acknowledged.
"""

from __future__ import annotations

import json
import logging
import os
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import Depends, FastAPI, HTTPException, Query, Request, Response
from pydantic import BaseModel

from .calibration import (
    GridSpec,
    TemperatureParam,
    apply_temperature,
    calibration_report,
)
from .dataset import DatasetSplit, GradingInstance, _instance_from_record
from .gate import curve_to_csv, decide, sweep_thresholds
from .metrics import MetricsReport, basic_metrics, split_report
from .orchestrator import CycleMetrics, export_finetune_batch, recalibrate
from .replay import build_replay_buffer
from .scoring import (
    LogitVector,
    ScorerProfile,
    load_template,
    score_instance,
    synthetic_backend,
)
from .store import Store
from .wire import HttpScorerBackend

__all__ = ["ServiceConfig", "create_app"]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class ServiceConfig:
    data_dir: Path = Path("./gradegate-data")
    tau: float = 0.8
    bins: int = 10
    k: int = 3
    replay_enabled: bool = True
    answers_per_question: int = 5
    grid: GridSpec = field(default_factory=GridSpec)
    lease_seconds: float = 300.0
    auth_token: str | None = None
    backend_url: str | None = None
    embedder_url: str | None = None
    profile: ScorerProfile = field(default_factory=ScorerProfile)
    seed: int = 0
    template_name: str = "basic"
    accumulate_corrections: bool = True
    tau_grid: tuple[float, ...] = (0.4, 0.5, 0.6, 0.8, 0.9)

    @classmethod
    def from_env(cls, **overrides) -> "ServiceConfig":
        cfg = cls(**overrides)
        if "data_dir" not in overrides and os.environ.get("CHILL_DATA_DIR"):
            cfg.data_dir = Path(os.environ["CHILL_DATA_DIR"])
        if os.environ.get("CHILL_BACKEND_URL"):
            cfg.backend_url = os.environ["CHILL_BACKEND_URL"]
        if os.environ.get("CHILL_EMBEDDER_URL"):
            cfg.embedder_url = os.environ["CHILL_EMBEDDER_URL"]
        return cfg

    def snapshot(self) -> dict:
        return {
            "tau": self.tau,
            "bins": self.bins,
            "k": self.k,
            "replay_enabled": self.replay_enabled,
            "grid": {"lo": self.grid.lo, "hi": self.grid.hi, "step": self.grid.step},
            "tau_grid": list(self.tau_grid),
            "template": self.template_name,
            "lease_seconds": self.lease_seconds,
        }


class CorrectionIn(BaseModel):
    instance_id: str
    corrected_grade: int
    corrector_id: str
    override: bool = False


def create_app(config: ServiceConfig, backend=None) -> FastAPI:
    store = Store(config.data_dir)
    if backend is None:
        if config.backend_url:
            backend = HttpScorerBackend(config.backend_url)
        else:
            backend = synthetic_backend(profile=config.profile, seed=config.seed)
    template = load_template(config.template_name)
    executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="scorer")

    session = store.get_meta("session")
    if session is None:
        session = {"session_id": uuid.uuid4().hex[:12], "config": config.snapshot()}
        store.set_meta("session", session)

    app = FastAPI(title="gradegate")
    app.state.store = store
    app.state.backend = backend
    app.state.config = config

    def current_temperature() -> float:
        meta = store.get_meta("temperature")
        return float(meta["value"]) if meta else 1.0

    def require_auth(request: Request) -> str:
        header = request.headers.get("Authorization", "")
        if config.auth_token is not None:
            if header != f"Bearer {config.auth_token}":
                raise HTTPException(status_code=401, detail="invalid bearer token")
        return header.removeprefix("Bearer ").strip() or "anonymous"

    # -- scoring job ---------------------------------------------------------

    def score_batch(batch_id: str) -> None:
        try:
            rows = store.batch_rows(batch_id)
            temperature = current_temperature()
            cal_pairs: list[tuple[LogitVector, int]] = []
            for inst, role, cycle_index in rows:
                if role == "pool":
                    continue
                vec = score_instance(backend, template, inst)
                if role == "cal":
                    cal_pairs.append((vec, inst.gold_grade))
                    continue
                pred = apply_temperature(vec, temperature)
                decision = decide(pred, config.tau)
                if decision.accepted:
                    store.record_prediction(
                        inst.id, cycle_index, vec.z.tolist(), pred.grade, pred.confidence,
                        temperature, "accept", pred.grade, "gate-accept",
                    )
                else:
                    store.record_prediction(
                        inst.id, cycle_index, vec.z.tolist(), pred.grade, pred.confidence,
                        temperature, "reject", None, None,
                    )
                    store.enqueue(inst.id, cycle_index, pred.confidence)
            if cal_pairs:
                temp, report = calibration_report(
                    cal_pairs, grid=config.grid, bins=config.bins, fitted_on=batch_id
                )
                store.save_calibration_report("stage1", report.to_dict())
                store.set_meta("temperature", {"value": temp.value, "fitted_on": batch_id})
                store.record_event(
                    "calibration", {"batch_id": batch_id, "t_star": temp.value}
                )
            store.set_batch_status(batch_id, "ready")
        except Exception as exc:  # keep the batch inspectable instead of crashing the worker
            logger.exception("scoring batch %s failed", batch_id)
            store.set_batch_status(batch_id, "failed")
            store.record_event("scoring_error", {"batch_id": batch_id, "error": str(exc)})

    # resume batches interrupted by a restart
    for stale in store.batches_by_status("scoring"):
        executor.submit(score_batch, stale)

    # -- ingestion -------------------------------------------------------------

    @app.post("/batches", status_code=201)
    async def ingest_batch(request: Request, response: Response, _=Depends(require_auth)):
        key = request.headers.get("Idempotency-Key")
        if key:
            existing = store.find_batch_by_key(key)
            if existing is not None:
                response.status_code = 200
                return existing

        body = (await request.body()).decode("utf-8")
        instances: list[GradingInstance] = []
        errors: list[dict] = []
        for line_no, line in enumerate(body.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise ValueError("record is not an object")
                inst = _instance_from_record(record)
                if inst.split_tag == "cal" and inst.gold_grade is None:
                    raise ValueError("calibration records need a gold grade")
                instances.append(inst)
            except Exception as exc:
                errors.append({"line": line_no, "error": str(exc)})
        if errors:
            raise HTTPException(status_code=422, detail={"errors": errors})
        if not instances:
            raise HTTPException(status_code=422, detail={"errors": [{"error": "empty batch"}]})

        seen: set[str] = set()
        duplicates: set[str] = set()
        for inst in instances:
            (duplicates if inst.id in seen else seen).add(inst.id)
        if duplicates:
            raise HTTPException(status_code=422, detail={"duplicate_ids": sorted(duplicates)})
        collisions = store.existing_instance_ids([i.id for i in instances])
        if collisions:
            raise HTTPException(status_code=422, detail={"duplicate_ids": sorted(collisions)})

        cycle_needed = any(i.split_tag not in ("train", "cal") for i in instances)
        cycle_index = (
            store.ensure_open_cycle(current_temperature()) if cycle_needed else None
        )
        rows = []
        counts = {"received": len(instances), "accepted_for_processing": len(instances),
                  "pool": 0, "cal": 0, "cycle": 0}
        for inst in instances:
            if inst.split_tag == "train":
                rows.append((inst, "pool", None))
                counts["pool"] += 1
            elif inst.split_tag == "cal":
                rows.append((inst, "cal", None))
                counts["cal"] += 1
            else:
                rows.append((inst, "cycle", cycle_index))
                counts["cycle"] += 1
        batch_id = store.create_batch(rows, counts, key)
        executor.submit(score_batch, batch_id)
        return {"batch_id": batch_id, "status": "scoring", "counts": counts}

    @app.get("/batches/{batch_id}")
    def batch_status(batch_id: str):
        batch = store.get_batch(batch_id)
        if batch is None:
            raise HTTPException(status_code=404, detail="unknown batch")
        return batch

    # -- review queue ------------------------------------------------------------

    @app.get("/queue/next")
    def next_review_item(cycle: int = Query(...), reviewer: str = "anonymous"):
        if store.get_cycle(cycle) is None:
            raise HTTPException(status_code=404, detail=f"unknown cycle {cycle}")
        row = store.claim_next(cycle, reviewer, config.lease_seconds)
        if row is None:
            return Response(status_code=204)
        inst = store.get_instance(row["instance_id"])
        pred = store.get_prediction(row["instance_id"])
        return {
            "schema_version": SCHEMA_VERSION,
            "instance_id": inst.id,
            "question": inst.question,
            "answer": inst.answer,
            "max_grade": inst.rubric.max_grade,
            "model_grade": pred["grade"],
            "confidence": pred["confidence"],
            "cycle_index": row["cycle_index"],
            "status": "claimed",
        }

    # -- corrections ----------------------------------------------------------------

    @app.post("/corrections", status_code=201)
    def submit_correction(body: CorrectionIn, response: Response, _=Depends(require_auth)):
        inst = store.get_instance(body.instance_id)
        if inst is None:
            raise HTTPException(status_code=404, detail="unknown instance")
        queue_row = store.get_queue_row(body.instance_id)
        if queue_row is None:
            raise HTTPException(
                status_code=409, detail="instance was not rejected; nothing to correct"
            )
        if not inst.rubric.contains(body.corrected_grade):
            raise HTTPException(
                status_code=422,
                detail=f"grade {body.corrected_grade} outside rubric 0..{inst.rubric.max_grade}",
            )
        cycle_index = queue_row["cycle_index"]
        existing = store.get_correction(body.instance_id, cycle_index)
        if existing is not None:
            if existing["corrected_grade"] == body.corrected_grade:
                response.status_code = 200
                return {**existing, "schema_version": SCHEMA_VERSION}
            if not body.override:
                raise HTTPException(
                    status_code=409,
                    detail=(
                        f"instance already corrected to {existing['corrected_grade']}; "
                        "set override=true to replace"
                    ),
                )
            store.record_event(
                "correction_override",
                {"instance_id": body.instance_id, "from": existing["corrected_grade"],
                 "to": body.corrected_grade, "corrector_id": body.corrector_id},
            )
        record = store.upsert_correction(
            body.instance_id, cycle_index, body.corrected_grade, body.corrector_id
        )
        store.mark_corrected(body.instance_id)
        store.set_final(body.instance_id, body.corrected_grade, "correction")
        return {**record, "schema_version": SCHEMA_VERSION}

    @app.get("/corrections")
    def list_corrections(cycle: int | None = None):
        rows = store.corrections_for_cycle(cycle) if cycle is not None else store.all_corrections()
        return {"schema_version": SCHEMA_VERSION, "corrections": rows}

    # -- cycle control -----------------------------------------------------------------

    def _instances_for_cycle(cycle_index: int) -> list[GradingInstance]:
        return store.instances_by_role("cycle", cycle_index)

    def _pre_metrics(cycle_index: int) -> CycleMetrics:
        preds = store.predictions_for_cycle(cycle_index)
        if not preds:
            empty = MetricsReport.empty()
            return CycleMetrics(0.0, empty, empty, empty, None)
        coverage = float(np.mean([p["outcome"] == "accept" for p in preds]))
        rows = []
        for p in preds:
            inst = store.get_instance(p["instance_id"])
            if inst.gold_grade is not None:
                rows.append((p["grade"], inst.gold_grade, p["outcome"] == "accept"))
        if not rows:
            empty = MetricsReport.empty()
            return CycleMetrics(coverage, empty, empty, empty, None)
        grades, golds, mask = zip(*rows)
        full = basic_metrics(list(grades), list(golds))
        sides = split_report(list(grades), list(golds), list(mask))
        return CycleMetrics(coverage, full, sides.accepted, sides.rejected, sides.gap_qwk)

    def _post_metrics(instances, temperature: float) -> CycleMetrics:
        preds, decisions = {}, {}
        for inst in instances:
            vec = score_instance(backend, template, inst)
            pred = apply_temperature(vec, temperature)
            preds[inst.id] = pred
            decisions[inst.id] = decide(pred, config.tau)
        coverage = (
            float(np.mean([decisions[i.id].accepted for i in instances])) if instances else 0.0
        )
        rows = [
            (preds[i.id].grade, i.gold_grade, decisions[i.id].accepted)
            for i in instances
            if i.gold_grade is not None
        ]
        if not rows:
            empty = MetricsReport.empty()
            return CycleMetrics(coverage, empty, empty, empty, None)
        grades, golds, mask = zip(*rows)
        full = basic_metrics(list(grades), list(golds))
        sides = split_report(list(grades), list(golds), list(mask))
        return CycleMetrics(coverage, full, sides.accepted, sides.rejected, sides.gap_qwk)

    @app.post("/cycles/{cycle_index}/finalize")
    def finalize_cycle(cycle_index: int, force: bool = False, _=Depends(require_auth)):
        cycle = store.get_cycle(cycle_index)
        if cycle is None:
            raise HTTPException(status_code=404, detail=f"unknown cycle {cycle_index}")
        if cycle["status"] == "finalized":
            return json.loads(cycle["report_json"])

        open_rows = store.queue_rows(cycle_index, statuses=("pending", "claimed"))
        if open_rows and not force:
            raise HTTPException(
                status_code=409,
                detail={"pending": [r["instance_id"] for r in open_rows]},
            )
        carried_ids = [r["instance_id"] for r in open_rows]

        t_before = (
            cycle["temperature_before"]
            if cycle["temperature_before"] is not None
            else current_temperature()
        )
        pre = _pre_metrics(cycle_index)

        correction_rows = (
            store.all_corrections()
            if config.accumulate_corrections
            else store.corrections_for_cycle(cycle_index)
        )
        pairs = []
        for row in correction_rows:
            inst = store.get_instance(row["instance_id"])
            if inst is not None:
                pairs.append((inst, row["corrected_grade"]))

        t_after = t_before
        batch_counts = {"correction": 0, "replay": 0}
        if pairs:
            pool = store.instances_by_role("pool")
            replay_items = ()
            if config.replay_enabled and config.k > 0 and pool:
                buffer = build_replay_buffer(
                    [inst for inst, _ in pairs],
                    DatasetSplit(name="pool", instances=tuple(pool), role="source"),
                    k=config.k,
                    answers_per_question=config.answers_per_question,
                    seed=config.seed,
                )
                replay_items = buffer.items
            batch = export_finetune_batch(pairs, replay_items, seed=config.seed)
            batch_counts = batch.provenance_counts()
            batch_path = config.data_dir / f"finetune_cycle_{cycle_index}.jsonl"
            batch_path.write_text(batch.to_jsonl(template))

            version_before = getattr(backend, "version", 0)
            if "update_hook" in getattr(backend, "capabilities", frozenset()):
                try:
                    backend.update_hook(batch.training_pairs())
                except Exception as exc:
                    raise HTTPException(
                        status_code=503,
                        detail=f"backend update failed; cycle remains open: {exc}",
                    ) from exc

            accepted_pairs = []
            for p in store.predictions_for_cycle(cycle_index):
                if p["outcome"] != "accept":
                    continue
                inst = store.get_instance(p["instance_id"])
                if inst is None or inst.gold_grade is None:
                    continue
                accepted_pairs.append(
                    (score_instance(backend, template, inst), inst.gold_grade)
                )
            t_after_param = recalibrate(
                accepted_pairs,
                config.grid,
                config.bins,
                previous=TemperatureParam(value=t_before),
            )
            t_after = t_after_param.value
            store.record_event(
                "adaptation",
                {
                    "cycle": cycle_index,
                    "batch_id": batch.batch_id,
                    "backend_version_before": version_before,
                    "backend_version_after": getattr(backend, "version", version_before),
                    "t_after": t_after,
                },
            )

        instances = [
            inst for inst in _instances_for_cycle(cycle_index)
            if inst.id not in set(carried_ids)
        ]
        post = _post_metrics(instances, t_after) if pairs else pre

        def _delta(a, b):
            return None if (a is None or b is None) else a - b

        report = {
            "schema_version": SCHEMA_VERSION,
            "cycle": cycle_index,
            "coverage": pre.coverage,
            "baseline_qwk": pre.accepted.qwk,
            "accepted_qwk": post.accepted.qwk,
            "delta_qwk": _delta(post.accepted.qwk, pre.accepted.qwk),
            "rejected_qwk": pre.rejected.qwk,
            "pre": pre.to_dict(),
            "post": post.to_dict(),
            "temperature_before": t_before,
            "temperature_after": t_after,
            "carried": len(carried_ids),
            "corrections_used": len(pairs),
            "batch_counts": batch_counts,
        }
        store.finalize_cycle(cycle_index, t_after, report, len(carried_ids), t_after)
        store.set_meta("temperature", {"value": t_after, "fitted_on": f"cycle-{cycle_index}"})
        if carried_ids:
            store.move_queue_rows(carried_ids, cycle_index + 1)
            store.reassign_cycle(carried_ids, cycle_index + 1)
        return report

    # -- reports ---------------------------------------------------------------------

    @app.get("/metrics")
    def get_metrics(cycle: int = Query(...)):
        row = store.get_cycle(cycle)
        if row is None or row["report_json"] is None:
            raise HTTPException(status_code=404, detail=f"no report for cycle {cycle}")
        return json.loads(row["report_json"])

    @app.get("/calibration")
    def get_calibration():
        report = store.latest_calibration_report()
        if report is None:
            raise HTTPException(status_code=404, detail="no calibration fitted yet")
        return report

    @app.get("/curve")
    def get_curve(cycle: int | None = None, format: str = "json"):
        if cycle is None:
            cycle = store.ensure_open_cycle(current_temperature()) - 1
        preds_rows = store.predictions_for_cycle(cycle)
        preds, golds = [], []
        for row in preds_rows:
            inst = store.get_instance(row["instance_id"])
            if inst is None or inst.gold_grade is None:
                continue
            vec = LogitVector(
                rubric=inst.rubric,
                z=np.asarray(json.loads(row["logits_json"])),
                instance_id=inst.id,
            )
            preds.append(apply_temperature(vec, row["temperature"]))
            golds.append(inst.gold_grade)
        if not preds:
            raise HTTPException(status_code=404, detail=f"no graded predictions in cycle {cycle}")
        curve = sweep_thresholds(preds, golds, config.tau_grid)
        if format == "csv":
            return Response(content=curve_to_csv(curve), media_type="text/csv")
        return {
            "schema_version": SCHEMA_VERSION,
            "cycle": cycle,
            "points": [p.to_dict() for p in curve],
        }

    @app.get("/instances/{instance_id}/provenance")
    def get_provenance(instance_id: str):
        pred = store.get_prediction(instance_id)
        if pred is None or pred["final_source"] is None:
            raise HTTPException(status_code=404, detail="no released grade for instance")
        return {
            "schema_version": SCHEMA_VERSION,
            "instance_id": instance_id,
            "final_grade": pred["final_grade"],
            "source": pred["final_source"],
            "cycle_index": pred["cycle_index"],
        }

    @app.get("/session")
    def get_session():
        return {"schema_version": SCHEMA_VERSION, **store.get_meta("session")}

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    return app
