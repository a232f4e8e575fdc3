"""Scale-aware replay buffers built by question-similarity retrieval.

For every distinct corrected question, the k most similar training questions
are retrieved by cosine similarity (ties broken by lexicographic question
text), and all of a retrieved question's training answers join the candidate
pool up to a per-question cap. The pool is then down-sampled so the grade-
scale distribution of corrections-plus-buffer mirrors that of the corrections
alone, within one item per scale: scales absent from the corrections are
dropped, and the remaining quota is apportioned by largest remainder.

The default embedder is a deterministic lexical one (L2-normalized token-set
indicator over a fixed vocabulary) so everything runs offline; a remote
embedding service can be dropped in through the same contract (see
:mod:`gradegate.wire`).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .dataset import DatasetSplit, GradingInstance

__all__ = [
    "EmbeddingVector",
    "Embedder",
    "LexicalEmbedder",
    "ReplayBuffer",
    "ReplayError",
    "tokenize",
    "cosine_similarity",
    "embed_question",
    "rank_similar_questions",
    "build_replay_buffer",
    "buffer_to_jsonl",
]

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class ReplayError(Exception):
    pass


def tokenize(text: str) -> tuple[str, ...]:
    return tuple(sorted(set(_TOKEN_RE.findall(text.lower()))))


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    source_question_id: str | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if not np.all(np.isfinite(values)):
            raise ReplayError("embedding contains non-finite values")


@runtime_checkable
class Embedder(Protocol):
    """Maps question text to a fixed-dimension vector, deterministically."""

    dimension: int
    version: str

    def embed(self, text: str) -> EmbeddingVector: ...


class LexicalEmbedder:
    """Token-set indicator vectors over a vocabulary fixed at construction.

    Vectors are L2-normalized; questions sharing no tokens are exactly
    orthogonal. Out-of-vocabulary tokens are dropped, and a fully
    out-of-vocabulary text embeds to the zero vector.
    """

    def __init__(self, corpus: Iterable[str]):
        vocab = sorted({tok for text in corpus for tok in tokenize(text)})
        self._index = {tok: i for i, tok in enumerate(vocab)}
        self.dimension = max(len(vocab), 1)
        self.version = f"lexical-{len(vocab)}"

    def embed(self, text: str) -> EmbeddingVector:
        values = np.zeros(self.dimension)
        hits = [self._index[t] for t in tokenize(text) if t in self._index]
        if hits:
            values[hits] = 1.0
            values /= np.linalg.norm(values)
        return EmbeddingVector(values=values)


def embed_question(embedder: Embedder, question: str) -> EmbeddingVector:
    """Embed one question; deterministic per (embedder version, text)."""
    if not question:
        raise ReplayError("cannot embed empty question text")
    return embedder.embed(question)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity, defined as 0 when either vector is zero."""
    na = np.linalg.norm(a.values)
    nb = np.linalg.norm(b.values)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a.values, b.values) / (na * nb))


def rank_similar_questions(
    query: str, candidates: Sequence[str], embedder: Embedder, k: int
) -> list[str]:
    """Top-k candidate questions by similarity; ties break lexicographically.

    Similarities are rounded to 12 decimals before ranking so that
    mathematically equal scores reached through different float paths still
    tie and fall through to the lexicographic order.
    """
    if k <= 0:
        return []
    q = embed_question(embedder, query)
    scored = [
        (-round(cosine_similarity(q, embed_question(embedder, cand)), 12), cand)
        for cand in candidates
    ]
    scored.sort()
    return [cand for _, cand in scored[:k]]


@dataclass(frozen=True)
class ReplayBuffer:
    """Replay items plus the retrieval trace that produced them."""

    items: tuple[GradingInstance, ...]
    retrieved_questions: dict[str, tuple[str, ...]]  # corrected question -> neighbors

    def __len__(self) -> int:
        return len(self.items)

    def scale_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for inst in self.items:
            g = inst.rubric.max_grade
            counts[g] = counts.get(g, 0) + 1
        return counts


def _largest_remainder_quota(total: int, fractions: dict[int, float]) -> dict[int, int]:
    """Integer apportionment of total by fractions; each quota within 1 of exact."""
    exact = {s: total * f for s, f in fractions.items()}
    quota = {s: int(np.floor(v)) for s, v in exact.items()}
    short = total - sum(quota.values())
    leftovers = sorted(exact, key=lambda s: (-(exact[s] - quota[s]), s))
    for s in leftovers[:short]:
        quota[s] += 1
    return quota


def build_replay_buffer(
    corrections: Sequence[GradingInstance],
    train: DatasetSplit | None,
    k: int = 3,
    embedder: Embedder | None = None,
    answers_per_question: int = 5,
    seed: int = 0,
) -> ReplayBuffer:
    """Retrieve, cap, deduplicate, and rebalance replay items.

    Returns an empty buffer for an empty correction set. When k exceeds the
    training question pool the entire pool is retrieved. The rebalancing step
    keeps the largest buffer size whose per-scale composition can mirror the
    corrections' scale distribution within one item per scale.
    """
    if k < 0:
        raise ReplayError(f"k must be >= 0, got {k}")
    if not corrections:
        return ReplayBuffer(items=(), retrieved_questions={})
    if train is None or len(train) == 0:
        raise ReplayError("corrections present but no training pool to retrieve from")

    by_question: dict[str, list[GradingInstance]] = {}
    for inst in train.instances:
        by_question.setdefault(inst.question, []).append(inst)
    train_questions = sorted(by_question)

    corrected_questions = sorted({inst.question for inst in corrections})
    if embedder is None:
        embedder = LexicalEmbedder(train_questions + corrected_questions)

    rng = np.random.default_rng(seed)
    retrieved: dict[str, tuple[str, ...]] = {}
    pool: dict[str, GradingInstance] = {}
    for question in corrected_questions:
        neighbors = rank_similar_questions(question, train_questions, embedder, k)
        retrieved[question] = tuple(neighbors)
        for neighbor in neighbors:
            answers = sorted(by_question[neighbor], key=lambda i: i.id)
            if len(answers) > answers_per_question:
                picks = rng.choice(len(answers), size=answers_per_question, replace=False)
                answers = [answers[i] for i in sorted(picks)]
            for inst in answers:
                pool.setdefault(inst.id, inst)

    correction_scales: dict[int, int] = {}
    for inst in corrections:
        g = inst.rubric.max_grade
        correction_scales[g] = correction_scales.get(g, 0) + 1
    fractions = {s: c / len(corrections) for s, c in correction_scales.items()}

    # drop scales the corrections never touch, then find the largest feasible size
    by_scale: dict[int, list[GradingInstance]] = {s: [] for s in fractions}
    for inst in sorted(pool.values(), key=lambda i: i.id):
        s = inst.rubric.max_grade
        if s in by_scale:
            by_scale[s].append(inst)
    capacity = {s: len(v) for s, v in by_scale.items()}

    items: list[GradingInstance] = []
    for size in range(sum(capacity.values()), -1, -1):
        quota = _largest_remainder_quota(size, fractions)
        if all(quota[s] <= capacity[s] for s in quota):
            for s in sorted(quota):
                candidates = by_scale[s]
                if quota[s] < len(candidates):
                    picks = rng.choice(len(candidates), size=quota[s], replace=False)
                    chosen = [candidates[i] for i in sorted(picks)]
                else:
                    chosen = candidates
                items.extend(chosen)
            break

    return ReplayBuffer(items=tuple(items), retrieved_questions=retrieved)


def buffer_to_jsonl(buffer: ReplayBuffer) -> str:
    return "".join(json.dumps(inst.to_record(), ensure_ascii=False) + "\n" for inst in buffer.items)
