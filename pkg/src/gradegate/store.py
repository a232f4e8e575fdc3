"""Embedded transactional persistence for the review service.

Single-node sqlite in WAL mode; every mutation commits in its own
transaction, so a process killed between requests loses nothing that was
acknowledged. Connections are short-lived and per-call, which keeps the store
safe under the service's background scoring thread and concurrent reviewers.
"""

from __future__ import annotations

import json
import sqlite3
import time
import uuid
from contextlib import contextmanager
from pathlib import Path

from .dataset import GradingInstance, Rubric

__all__ = ["Store"]

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS batches (
    batch_id TEXT PRIMARY KEY,
    idempotency_key TEXT UNIQUE,
    created_at REAL NOT NULL,
    status TEXT NOT NULL,
    counts_json TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS instances (
    instance_id TEXT PRIMARY KEY,
    batch_id TEXT NOT NULL,
    question TEXT NOT NULL,
    answer TEXT NOT NULL,
    max_grade INTEGER NOT NULL,
    gold_grade INTEGER,
    split_tag TEXT NOT NULL,
    role TEXT NOT NULL,
    cycle_index INTEGER
);
CREATE TABLE IF NOT EXISTS predictions (
    instance_id TEXT PRIMARY KEY,
    cycle_index INTEGER NOT NULL,
    logits_json TEXT NOT NULL,
    grade INTEGER NOT NULL,
    confidence REAL NOT NULL,
    temperature REAL NOT NULL,
    outcome TEXT NOT NULL,
    final_grade INTEGER,
    final_source TEXT
);
CREATE TABLE IF NOT EXISTS queue (
    instance_id TEXT PRIMARY KEY,
    cycle_index INTEGER NOT NULL,
    confidence REAL NOT NULL,
    status TEXT NOT NULL,
    lease_expires REAL,
    claimed_by TEXT
);
CREATE TABLE IF NOT EXISTS corrections (
    instance_id TEXT NOT NULL,
    cycle_index INTEGER NOT NULL,
    corrected_grade INTEGER NOT NULL,
    corrector_id TEXT NOT NULL,
    created_at REAL NOT NULL,
    PRIMARY KEY (instance_id, cycle_index)
);
CREATE TABLE IF NOT EXISTS cycles (
    cycle_index INTEGER PRIMARY KEY,
    status TEXT NOT NULL,
    temperature_before REAL,
    temperature_after REAL,
    report_json TEXT,
    carried INTEGER DEFAULT 0,
    finalized_at REAL
);
CREATE TABLE IF NOT EXISTS calibration_reports (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    created_at REAL NOT NULL,
    scope TEXT NOT NULL,
    report_json TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS events (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    created_at REAL NOT NULL,
    kind TEXT NOT NULL,
    payload_json TEXT NOT NULL
);
"""


class Store:
    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.db_path = self.data_dir / "store.db"
        with self._connect() as conn:
            conn.executescript(_SCHEMA)

    @contextmanager
    def _connect(self):
        conn = sqlite3.connect(self.db_path, timeout=30.0)
        try:
            conn.execute("PRAGMA journal_mode=WAL")
            conn.execute("PRAGMA foreign_keys=ON")
            conn.row_factory = sqlite3.Row
            yield conn
            conn.commit()
        except BaseException:
            conn.rollback()
            raise
        finally:
            conn.close()

    # -- meta ---------------------------------------------------------------

    def get_meta(self, key: str, default=None):
        with self._connect() as conn:
            row = conn.execute("SELECT value FROM meta WHERE key=?", (key,)).fetchone()
        return json.loads(row["value"]) if row else default

    def set_meta(self, key: str, value) -> None:
        with self._connect() as conn:
            conn.execute(
                "INSERT INTO meta(key, value) VALUES(?, ?) "
                "ON CONFLICT(key) DO UPDATE SET value=excluded.value",
                (key, json.dumps(value)),
            )

    # -- batches ------------------------------------------------------------

    def find_batch_by_key(self, idempotency_key: str) -> dict | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT * FROM batches WHERE idempotency_key=?", (idempotency_key,)
            ).fetchone()
        return self._batch_dict(row) if row else None

    def get_batch(self, batch_id: str) -> dict | None:
        with self._connect() as conn:
            row = conn.execute("SELECT * FROM batches WHERE batch_id=?", (batch_id,)).fetchone()
        return self._batch_dict(row) if row else None

    @staticmethod
    def _batch_dict(row) -> dict:
        return {
            "batch_id": row["batch_id"],
            "status": row["status"],
            "counts": json.loads(row["counts_json"]),
        }

    def create_batch(
        self,
        instances: list[tuple[GradingInstance, str, int | None]],
        counts: dict,
        idempotency_key: str | None,
    ) -> str:
        """Persist a batch and its instances in one transaction."""
        batch_id = uuid.uuid4().hex[:12]
        with self._connect() as conn:
            conn.execute(
                "INSERT INTO batches(batch_id, idempotency_key, created_at, status, counts_json) "
                "VALUES(?,?,?,?,?)",
                (batch_id, idempotency_key, time.time(), "scoring", json.dumps(counts)),
            )
            conn.executemany(
                "INSERT INTO instances(instance_id, batch_id, question, answer, max_grade, "
                "gold_grade, split_tag, role, cycle_index) VALUES(?,?,?,?,?,?,?,?,?)",
                [
                    (
                        inst.id,
                        batch_id,
                        inst.question,
                        inst.answer,
                        inst.rubric.max_grade,
                        inst.gold_grade,
                        inst.split_tag,
                        role,
                        cycle,
                    )
                    for inst, role, cycle in instances
                ],
            )
        return batch_id

    def set_batch_status(self, batch_id: str, status: str) -> None:
        with self._connect() as conn:
            conn.execute("UPDATE batches SET status=? WHERE batch_id=?", (status, batch_id))

    def batches_by_status(self, status: str) -> list[str]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT batch_id FROM batches WHERE status=? ORDER BY created_at", (status,)
            ).fetchall()
        return [r["batch_id"] for r in rows]

    def batch_rows(self, batch_id: str) -> list[tuple[GradingInstance, str, int | None]]:
        """Instances of a batch with their role and cycle assignment."""
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT * FROM instances WHERE batch_id=? ORDER BY instance_id", (batch_id,)
            ).fetchall()
        return [(self._instance_from_row(r), r["role"], r["cycle_index"]) for r in rows]

    def existing_instance_ids(self, ids: list[str]) -> list[str]:
        if not ids:
            return []
        marks = ",".join("?" for _ in ids)
        with self._connect() as conn:
            rows = conn.execute(
                f"SELECT instance_id FROM instances WHERE instance_id IN ({marks})", ids
            ).fetchall()
        return [r["instance_id"] for r in rows]

    # -- instances ----------------------------------------------------------

    @staticmethod
    def _instance_from_row(row) -> GradingInstance:
        return GradingInstance(
            id=row["instance_id"],
            question=row["question"],
            answer=row["answer"],
            rubric=Rubric(row["max_grade"]),
            gold_grade=row["gold_grade"],
            split_tag=row["split_tag"],
        )

    def get_instance(self, instance_id: str) -> GradingInstance | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT * FROM instances WHERE instance_id=?", (instance_id,)
            ).fetchone()
        return self._instance_from_row(row) if row else None

    def instances_by_role(self, role: str, cycle_index: int | None = None) -> list[GradingInstance]:
        query = "SELECT * FROM instances WHERE role=?"
        params: list = [role]
        if cycle_index is not None:
            query += " AND cycle_index=?"
            params.append(cycle_index)
        query += " ORDER BY instance_id"
        with self._connect() as conn:
            rows = conn.execute(query, params).fetchall()
        return [self._instance_from_row(r) for r in rows]

    def batch_instances(self, batch_id: str) -> list[GradingInstance]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT * FROM instances WHERE batch_id=? ORDER BY instance_id", (batch_id,)
            ).fetchall()
        return [self._instance_from_row(r) for r in rows]

    def reassign_cycle(self, instance_ids: list[str], cycle_index: int) -> None:
        if not instance_ids:
            return
        marks = ",".join("?" for _ in instance_ids)
        with self._connect() as conn:
            conn.execute(
                f"UPDATE instances SET cycle_index=? WHERE instance_id IN ({marks})",
                [cycle_index, *instance_ids],
            )

    # -- predictions and queue ----------------------------------------------

    def record_prediction(
        self,
        instance_id: str,
        cycle_index: int,
        logits: list[float],
        grade: int,
        confidence: float,
        temperature: float,
        outcome: str,
        final_grade: int | None,
        final_source: str | None,
    ) -> None:
        with self._connect() as conn:
            conn.execute(
                "INSERT INTO predictions(instance_id, cycle_index, logits_json, grade, "
                "confidence, temperature, outcome, final_grade, final_source) "
                "VALUES(?,?,?,?,?,?,?,?,?) "
                "ON CONFLICT(instance_id) DO UPDATE SET cycle_index=excluded.cycle_index, "
                "logits_json=excluded.logits_json, grade=excluded.grade, "
                "confidence=excluded.confidence, temperature=excluded.temperature, "
                "outcome=excluded.outcome, final_grade=excluded.final_grade, "
                "final_source=excluded.final_source",
                (
                    instance_id,
                    cycle_index,
                    json.dumps(logits),
                    grade,
                    confidence,
                    temperature,
                    outcome,
                    final_grade,
                    final_source,
                ),
            )

    def predictions_for_cycle(self, cycle_index: int) -> list[dict]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT * FROM predictions WHERE cycle_index=? ORDER BY instance_id",
                (cycle_index,),
            ).fetchall()
        return [dict(r) for r in rows]

    def get_prediction(self, instance_id: str) -> dict | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT * FROM predictions WHERE instance_id=?", (instance_id,)
            ).fetchone()
        return dict(row) if row else None

    def set_final(self, instance_id: str, grade: int, source: str) -> None:
        with self._connect() as conn:
            conn.execute(
                "UPDATE predictions SET final_grade=?, final_source=? WHERE instance_id=?",
                (grade, source, instance_id),
            )

    def enqueue(self, instance_id: str, cycle_index: int, confidence: float) -> None:
        with self._connect() as conn:
            conn.execute(
                "INSERT INTO queue(instance_id, cycle_index, confidence, status) "
                "VALUES(?,?,?,'pending') "
                "ON CONFLICT(instance_id) DO UPDATE SET cycle_index=excluded.cycle_index, "
                "confidence=excluded.confidence",
                (instance_id, cycle_index, confidence),
            )

    def claim_next(self, cycle_index: int, claimed_by: str, lease_seconds: float) -> dict | None:
        """Atomically claim the lowest-confidence servable item."""
        now = time.time()
        with self._connect() as conn:
            row = conn.execute(
                "SELECT * FROM queue WHERE cycle_index=? AND ("
                "status='pending' OR (status='claimed' AND lease_expires < ?)) "
                "ORDER BY confidence ASC, instance_id ASC LIMIT 1",
                (cycle_index, now),
            ).fetchone()
            if row is None:
                return None
            conn.execute(
                "UPDATE queue SET status='claimed', lease_expires=?, claimed_by=? "
                "WHERE instance_id=?",
                (now + lease_seconds, claimed_by, row["instance_id"]),
            )
        return dict(row)

    def queue_rows(self, cycle_index: int, statuses: tuple[str, ...] = ()) -> list[dict]:
        query = "SELECT * FROM queue WHERE cycle_index=?"
        params: list = [cycle_index]
        if statuses:
            marks = ",".join("?" for _ in statuses)
            query += f" AND status IN ({marks})"
            params.extend(statuses)
        query += " ORDER BY confidence ASC, instance_id ASC"
        with self._connect() as conn:
            rows = conn.execute(query, params).fetchall()
        return [dict(r) for r in rows]

    def get_queue_row(self, instance_id: str) -> dict | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT * FROM queue WHERE instance_id=?", (instance_id,)
            ).fetchone()
        return dict(row) if row else None

    def mark_corrected(self, instance_id: str) -> None:
        with self._connect() as conn:
            conn.execute(
                "UPDATE queue SET status='corrected' WHERE instance_id=?", (instance_id,)
            )

    def move_queue_rows(self, instance_ids: list[str], cycle_index: int) -> None:
        if not instance_ids:
            return
        marks = ",".join("?" for _ in instance_ids)
        with self._connect() as conn:
            conn.execute(
                f"UPDATE queue SET cycle_index=?, status='pending', lease_expires=NULL, "
                f"claimed_by=NULL WHERE instance_id IN ({marks})",
                [cycle_index, *instance_ids],
            )

    # -- corrections ----------------------------------------------------------

    def get_correction(self, instance_id: str, cycle_index: int) -> dict | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT * FROM corrections WHERE instance_id=? AND cycle_index=?",
                (instance_id, cycle_index),
            ).fetchone()
        return dict(row) if row else None

    def upsert_correction(
        self, instance_id: str, cycle_index: int, grade: int, corrector_id: str
    ) -> dict:
        with self._connect() as conn:
            conn.execute(
                "INSERT INTO corrections(instance_id, cycle_index, corrected_grade, "
                "corrector_id, created_at) VALUES(?,?,?,?,?) "
                "ON CONFLICT(instance_id, cycle_index) DO UPDATE SET "
                "corrected_grade=excluded.corrected_grade, corrector_id=excluded.corrector_id",
                (instance_id, cycle_index, grade, corrector_id, time.time()),
            )
        return self.get_correction(instance_id, cycle_index)

    def corrections_for_cycle(self, cycle_index: int) -> list[dict]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT * FROM corrections WHERE cycle_index=? ORDER BY instance_id",
                (cycle_index,),
            ).fetchall()
        return [dict(r) for r in rows]

    def all_corrections(self) -> list[dict]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT * FROM corrections ORDER BY cycle_index, instance_id"
            ).fetchall()
        return [dict(r) for r in rows]

    # -- cycles ---------------------------------------------------------------

    def ensure_open_cycle(self, temperature: float) -> int:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT cycle_index FROM cycles WHERE status='open' ORDER BY cycle_index DESC"
            ).fetchone()
            if row is not None:
                return int(row["cycle_index"])
            last = conn.execute("SELECT MAX(cycle_index) AS m FROM cycles").fetchone()
            next_index = int(last["m"] or 0) + 1
            conn.execute(
                "INSERT INTO cycles(cycle_index, status, temperature_before) VALUES(?,'open',?)",
                (next_index, temperature),
            )
        return next_index

    def get_cycle(self, cycle_index: int) -> dict | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT * FROM cycles WHERE cycle_index=?", (cycle_index,)
            ).fetchone()
        return dict(row) if row else None

    def finalize_cycle(
        self,
        cycle_index: int,
        temperature_after: float,
        report: dict,
        carried: int,
        next_temperature: float,
    ) -> None:
        with self._connect() as conn:
            conn.execute(
                "UPDATE cycles SET status='finalized', temperature_after=?, report_json=?, "
                "carried=?, finalized_at=? WHERE cycle_index=?",
                (temperature_after, json.dumps(report), carried, time.time(), cycle_index),
            )
            conn.execute(
                "INSERT INTO cycles(cycle_index, status, temperature_before) VALUES(?,'open',?)",
                (cycle_index + 1, next_temperature),
            )

    # -- reports and events -----------------------------------------------------

    def save_calibration_report(self, scope: str, report: dict) -> None:
        with self._connect() as conn:
            conn.execute(
                "INSERT INTO calibration_reports(created_at, scope, report_json) VALUES(?,?,?)",
                (time.time(), scope, json.dumps(report)),
            )

    def latest_calibration_report(self) -> dict | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT report_json FROM calibration_reports ORDER BY id DESC LIMIT 1"
            ).fetchone()
        return json.loads(row["report_json"]) if row else None

    def record_event(self, kind: str, payload: dict) -> None:
        with self._connect() as conn:
            conn.execute(
                "INSERT INTO events(created_at, kind, payload_json) VALUES(?,?,?)",
                (time.time(), kind, json.dumps(payload)),
            )

    def events_by_kind(self, kind: str) -> list[dict]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT * FROM events WHERE kind=? ORDER BY id", (kind,)
            ).fetchall()
        return [
            {"id": r["id"], "created_at": r["created_at"], **json.loads(r["payload_json"])}
            for r in rows
        ]
