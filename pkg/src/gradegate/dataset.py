"""Typed grading records and split handling.

Canonical on-disk format is JSONL, one instance per line:

    {"id": "...", "question": "...", "answer": "...",
     "max_grade": 5, "grade": 3, "split": "train"}

``grade`` is optional (absent for ungraded deployment data). ``split`` is a
closed vocabulary: ``train``, ``cal``, ``test_UA``, ``test_UQ``, or ``D2<j>``
for human-in-the-loop evaluation slices. Unknown tags are rejected at load so
records cannot silently leak between roles.
"""

from __future__ import annotations

import csv
import json
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "Rubric",
    "GradingInstance",
    "DatasetSplit",
    "CorrectionRecord",
    "DatasetError",
    "DatasetParseError",
    "DatasetValidationError",
    "DEFAULT_BREAKPOINTS",
    "load_dataset",
    "save_dataset",
    "normalize_scale",
    "partition_hil_splits",
]

SPLIT_TAG_RE = re.compile(r"^(train|cal|test_UA|test_UQ|D2[0-9]+)$")

DEFAULT_BREAKPOINTS = (0.5, 0.85)


class DatasetError(Exception):
    """Base class for dataset loading and validation failures."""


class DatasetParseError(DatasetError):
    def __init__(self, path: str, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no


class DatasetValidationError(DatasetError):
    def __init__(self, instance_id: str, reason: str):
        super().__init__(f"instance {instance_id!r}: {reason}")
        self.instance_id = instance_id


@dataclass(frozen=True)
class Rubric:
    """Ordered integer grade scale 0..max_grade."""

    max_grade: int

    def __post_init__(self):
        if self.max_grade < 0:
            raise DatasetError(f"max_grade must be >= 0, got {self.max_grade}")

    @property
    def grade_set(self) -> tuple[int, ...]:
        return tuple(range(self.max_grade + 1))

    @property
    def n_grades(self) -> int:
        return self.max_grade + 1

    def contains(self, grade: int) -> bool:
        return 0 <= grade <= self.max_grade


@dataclass(frozen=True)
class GradingInstance:
    """One (question, answer) record flowing through the pipeline."""

    id: str
    question: str
    answer: str
    rubric: Rubric
    gold_grade: int | None = None
    split_tag: str = "train"

    def validate(self) -> "GradingInstance":
        if not self.id:
            raise DatasetValidationError("<missing>", "empty id")
        if not self.question:
            raise DatasetValidationError(self.id, "empty question")
        if not self.answer:
            raise DatasetValidationError(self.id, "empty answer")
        if not SPLIT_TAG_RE.match(self.split_tag):
            raise DatasetValidationError(
                self.id, f"unknown split tag {self.split_tag!r}"
            )
        if self.gold_grade is not None and not self.rubric.contains(self.gold_grade):
            raise DatasetValidationError(
                self.id,
                f"grade {self.gold_grade} outside rubric 0..{self.rubric.max_grade}",
            )
        return self

    def to_record(self) -> dict:
        record = {
            "id": self.id,
            "question": self.question,
            "answer": self.answer,
            "max_grade": self.rubric.max_grade,
            "split": self.split_tag,
        }
        if self.gold_grade is not None:
            record["grade"] = self.gold_grade
        return record


#: split tag -> distribution role
_ROLE_BY_TAG = {"train": "source", "cal": "calibration"}


def _role_for_tags(tags: set[str]) -> str:
    roles = {_ROLE_BY_TAG.get(t, "target") for t in tags}
    return roles.pop() if len(roles) == 1 else "target"


@dataclass
class DatasetSplit:
    """An ordered, immutable-by-convention collection of instances."""

    name: str
    instances: tuple[GradingInstance, ...]
    role: str = "target"

    def __post_init__(self):
        self.instances = tuple(self.instances)
        seen: set[str] = set()
        for inst in self.instances:
            if inst.id in seen:
                raise DatasetValidationError(inst.id, f"duplicate id in split {self.name!r}")
            seen.add(inst.id)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def ids(self) -> tuple[str, ...]:
        return tuple(inst.id for inst in self.instances)

    def scale_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for inst in self.instances:
            g = inst.rubric.max_grade
            counts[g] = counts.get(g, 0) + 1
        return counts


@dataclass(frozen=True)
class CorrectionRecord:
    """A human-supplied grade for one rejected instance."""

    instance_id: str
    corrected_grade: int
    corrector_id: str
    timestamp: float = field(default_factory=time.time)


def _instance_from_record(record: dict, default_split: str | None = None) -> GradingInstance:
    required = {"id", "question", "answer", "max_grade"}
    missing = required - record.keys()
    if missing:
        raise DatasetValidationError(
            str(record.get("id", "<missing>")), f"missing fields {sorted(missing)}"
        )
    grade = record.get("grade")
    return GradingInstance(
        id=str(record["id"]),
        question=str(record["question"]),
        answer=str(record["answer"]),
        rubric=Rubric(int(record["max_grade"])),
        gold_grade=None if grade is None else int(grade),
        split_tag=str(record.get("split", default_split or "train")),
    ).validate()


def load_dataset(path: str | Path, format: str = "jsonl") -> DatasetSplit:
    """Load a split file into validated instances, preserving record order.

    ``format`` is ``"jsonl"`` (canonical) or ``"csv"`` (thin adapter over the
    same column names). Raises :class:`DatasetParseError` with the offending
    line number on malformed input and :class:`DatasetValidationError` naming
    the instance on contract violations.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such dataset file: {path}")
    if format == "jsonl":
        records = _read_jsonl(path)
    elif format == "csv":
        records = _read_csv(path)
    else:
        raise DatasetError(f"unknown dataset format {format!r}")

    instances = tuple(records)
    tags = {inst.split_tag for inst in instances}
    name = tags.pop() if len(tags) == 1 else path.stem
    return DatasetSplit(
        name=name,
        instances=instances,
        role=_role_for_tags({inst.split_tag for inst in instances}),
    )


def _read_jsonl(path: Path) -> Iterable[GradingInstance]:
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(str(path), line_no, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DatasetParseError(str(path), line_no, "record is not an object")
            out.append(_instance_from_record(record))
    return out


def _read_csv(path: Path) -> Iterable[GradingInstance]:
    out = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        for line_no, row in enumerate(csv.DictReader(fh), start=2):
            record = {k: v for k, v in row.items() if v not in (None, "")}
            out.append(_instance_from_record(record))
            del line_no
    return out


def save_dataset(split: DatasetSplit, path: str | Path) -> None:
    """Write a split back to JSONL; inverse of :func:`load_dataset`."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for inst in split.instances:
            fh.write(json.dumps(inst.to_record(), ensure_ascii=False) + "\n")


def normalize_scale(
    instance: GradingInstance,
    breakpoints: tuple[float, float] = DEFAULT_BREAKPOINTS,
) -> GradingInstance:
    """Collapse a fine-grained rubric onto the coarse 3-point scale {0, 1, 2}.

    The gold grade maps by its fraction of the maximum: below ``b1`` -> 0,
    in ``[b1, b2)`` -> 1, at or above ``b2`` -> 2. Defaults (0.5, 0.85) send
    both 3/5 and 4/5 to grade 1.
    """
    b1, b2 = breakpoints
    if not (0.0 < b1 < b2 < 1.0):
        raise DatasetError(f"breakpoints must satisfy 0 < b1 < b2 < 1, got {breakpoints}")
    g_max = instance.rubric.max_grade
    if g_max < 2:
        raise DatasetError(
            f"instance {instance.id!r}: cannot normalize rubric with max_grade {g_max} < 2"
        )
    gold = instance.gold_grade
    if gold is not None:
        frac = gold / g_max
        gold = 0 if frac < b1 else (1 if frac < b2 else 2)
    return replace(instance, rubric=Rubric(2), gold_grade=gold)


def partition_hil_splits(split: DatasetSplit, n: int, seed: int) -> list[DatasetSplit]:
    """Shuffle-partition a split into n disjoint review slices D21..D2n.

    Sizes differ by at most one, with the larger slices last (261 records and
    n=2 give sizes 130 and 131). Deterministic for a fixed seed.
    """
    if n < 1:
        raise DatasetError(f"partition count must be >= 1, got {n}")
    if len(split) == 0:
        raise DatasetError("cannot partition an empty split")
    if n > len(split):
        raise DatasetError(f"cannot partition {len(split)} instances into {n} slices")

    order = np.random.default_rng(seed).permutation(len(split))
    shuffled = [split.instances[i] for i in order]

    base, rem = divmod(len(split), n)
    sizes = [base] * (n - rem) + [base + 1] * rem
    out = []
    start = 0
    for j, size in enumerate(sizes, start=1):
        tag = f"D2{j}"
        chunk = tuple(replace(inst, split_tag=tag) for inst in shuffled[start : start + size])
        out.append(DatasetSplit(name=tag, instances=chunk, role="target"))
        start += size
    return out
