"""Prompt rendering, candidate enumeration, and per-grade log-likelihood scoring.

Every grade in a rubric is scored as a structured completion of the exact form
``{"grade": <g>, "max_grade": <G>}``. A scorer backend reports, for each
candidate string, the summed token log-probability of that completion given
the rendered prompt; the resulting length-(G+1) logit vector is the input to
temperature calibration. Backends report sums over the full candidate string,
so shared scaffold tokens add a constant offset that the softmax ignores.

Backends are pluggable: the HTTP client in :mod:`gradegate.wire` speaks the
``{system, user, candidates} -> {logprobs}`` protocol, and
:class:`SyntheticScorer` provides a deterministic in-process stand-in whose
reliability profile is controlled by three knobs (sharpness, noise, and
accuracy-confidence correlation), which makes gate and calibration behavior
testable without a model server.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .dataset import GradingInstance, Rubric

__all__ = [
    "PromptTemplate",
    "CandidateCompletion",
    "LogitVector",
    "ScoreRequest",
    "ScorerBackend",
    "ScorerProfile",
    "SyntheticScorer",
    "ScoringError",
    "TransportError",
    "ProtocolError",
    "TEMPLATE_NAMES",
    "load_template",
    "render_prompt",
    "enumerate_candidates",
    "completion_text",
    "score_instance",
    "score_split",
    "synthetic_backend",
]

TEMPLATE_NAMES = ("basic", "detailed", "json_strict", "rubric")

_PLACEHOLDER_RE = re.compile(r"\{(q|a|max_g)\}")


class ScoringError(Exception):
    """Base class for scoring failures."""


class TransportError(ScoringError):
    """Backend unreachable or request failed; retryable."""


class ProtocolError(ScoringError):
    """Backend answered but violated the scoring protocol."""


@dataclass(frozen=True)
class PromptTemplate:
    """A (system, user) prompt pair with {q}, {a}, {max_g} placeholders."""

    name: str
    system_text: str
    user_text: str

    def validate(self) -> "PromptTemplate":
        if _PLACEHOLDER_RE.search(self.system_text):
            raise ScoringError(f"template {self.name!r}: system text must not take placeholders")
        stray = re.findall(r"\{(\w+)\}", self.user_text)
        unknown = set(stray) - {"q", "a", "max_g"}
        if unknown:
            raise ScoringError(f"template {self.name!r}: unknown placeholders {sorted(unknown)}")
        return self


def load_template(name: str) -> PromptTemplate:
    """Load one of the shipped prompt templates by name."""
    if name not in TEMPLATE_NAMES:
        raise ScoringError(f"unknown template {name!r}; expected one of {TEMPLATE_NAMES}")
    raw = resources.files(__package__).joinpath(f"templates/{name}.json").read_text("utf-8")
    data = json.loads(raw)
    return PromptTemplate(
        name=data["name"], system_text=data["system_text"], user_text=data["user_text"]
    ).validate()


def render_prompt(template: PromptTemplate, instance: GradingInstance) -> tuple[str, str]:
    """Substitute instance fields into the template; byte-stable across runs."""
    template.validate()
    values = {
        "q": instance.question,
        "a": instance.answer,
        "max_g": str(instance.rubric.max_grade),
    }
    user = _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template.user_text)
    return template.system_text, user


def completion_text(grade: int, max_grade: int) -> str:
    """Canonical structured completion for one candidate grade (exact bytes)."""
    return f'{{"grade": {grade}, "max_grade": {max_grade}}}'


@dataclass(frozen=True)
class CandidateCompletion:
    grade: int
    completion_text: str


def enumerate_candidates(rubric: Rubric) -> list[CandidateCompletion]:
    """All G+1 candidate completions in ascending grade order."""
    return [
        CandidateCompletion(g, completion_text(g, rubric.max_grade))
        for g in rubric.grade_set
    ]


@dataclass(frozen=True)
class LogitVector:
    """Per-candidate summed log-likelihoods, aligned with grades 0..G."""

    rubric: Rubric
    z: np.ndarray
    instance_id: str | None = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        object.__setattr__(self, "z", z)
        if z.shape != (self.rubric.n_grades,):
            raise ScoringError(
                f"logit vector has length {z.shape}, rubric needs {self.rubric.n_grades}"
            )
        if not np.all(np.isfinite(z)):
            raise ScoringError("logit vector contains non-finite entries")


@dataclass(frozen=True)
class ScoreRequest:
    """One batched scoring request: a prompt pair plus all candidate strings.

    ``instance`` is an in-process convenience handle (used by the synthetic
    backend to look up ground truth); it is not part of the wire payload.
    """

    system: str
    user: str
    candidates: tuple[str, ...]
    instance: GradingInstance | None = None

    def to_wire(self) -> dict:
        return {"system": self.system, "user": self.user, "candidates": list(self.candidates)}


@runtime_checkable
class ScorerBackend(Protocol):
    """Behavioral contract every scorer implementation satisfies.

    Scoring must be deterministic for identical requests within one backend
    version. ``capabilities`` contains ``"score_completions"`` and, for
    backends that accept fine-tune batches, ``"update_hook"``.
    """

    capabilities: frozenset[str]
    version: int

    def score_completions(self, request: ScoreRequest) -> list[float]: ...


def score_instance(
    backend: ScorerBackend, template: PromptTemplate, instance: GradingInstance
) -> LogitVector:
    """Score all candidate grades for one instance in a single backend request."""
    candidates = enumerate_candidates(instance.rubric)
    system, user = render_prompt(template, instance)
    request = ScoreRequest(
        system=system,
        user=user,
        candidates=tuple(c.completion_text for c in candidates),
        instance=instance,
    )
    logprobs = backend.score_completions(request)
    if len(logprobs) != len(candidates):
        raise ProtocolError(
            f"backend returned {len(logprobs)} scores for {len(candidates)} candidates"
        )
    return LogitVector(rubric=instance.rubric, z=np.asarray(logprobs, dtype=float),
                       instance_id=instance.id)


def score_split(
    backend: ScorerBackend, template: PromptTemplate, instances: Iterable[GradingInstance]
) -> dict[str, LogitVector]:
    """Score a collection of instances; returns id -> logit vector."""
    return {inst.id: score_instance(backend, template, inst) for inst in instances}


@dataclass(frozen=True)
class ScorerProfile:
    """Reliability profile of the synthetic backend.

    sharpness: peak logit mass placed on the believed grade.
    noise: stddev of Gaussian jitter added to every logit.
    correlation: probability that the believed grade is the gold grade; the
        complement produces a wrong belief with an attenuated peak, so low
        confidence and low accuracy coincide (the knob that makes the
        confidence gate's job nontrivial but learnable).
    """

    sharpness: float = 8.0
    noise: float = 0.0
    correlation: float = 1.0

    def __post_init__(self):
        if self.sharpness <= 0:
            raise ScoringError("sharpness must be > 0")
        if self.noise < 0:
            raise ScoringError("noise must be >= 0")
        if not 0.0 <= self.correlation <= 1.0:
            raise ScoringError("correlation must be in [0, 1]")


def _instance_rng(seed: int, key: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}|{key}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


class SyntheticScorer:
    """Deterministic test-oracle backend with memorization and forgetting.

    Instances whose id was memorized (via ``update_hook`` or pretraining) get
    an exact sharpened one-hot on the memorized grade. Instances whose
    question text is known get a clean peak on their gold grade plus noise.
    Everything else falls back to the base profile: with probability
    ``correlation`` the peak sits on the gold grade at full sharpness,
    otherwise on a wrong grade at a randomly attenuated height.

    ``update_hook`` replaces the memorized knowledge with exactly the supplied
    batch, so any pair not replayed in the batch is forgotten. Updates are
    serialized and bump ``version``; scoring is a pure function of
    (seed, instance id) within one version.
    """

    MEMORIZED_BOOST = 1.5

    def __init__(
        self,
        profile: ScorerProfile | None = None,
        seed: int = 0,
        pretrain: Iterable[GradingInstance] | None = None,
    ):
        self.profile = profile or ScorerProfile()
        self.seed = seed
        self.capabilities = frozenset({"score_completions", "update_hook"})
        self.version = 0
        self._lock = threading.Lock()
        self._knowledge: dict[str, int] = {}
        self._known_questions: set[str] = set()
        if pretrain is not None:
            for inst in pretrain:
                if inst.gold_grade is not None:
                    self._knowledge[inst.id] = inst.gold_grade
                self._known_questions.add(inst.question)

    def knows(self, instance_id: str) -> bool:
        return instance_id in self._knowledge

    def score_completions(self, request: ScoreRequest) -> list[float]:
        grades = [json.loads(text)["grade"] for text in request.candidates]
        k = len(grades)
        inst = request.instance
        if inst is None:
            return list(self._base_logits(f"wire|{request.user}", None, grades))

        if inst.id in self._knowledge:
            z = np.zeros(k)
            target = self._knowledge[inst.id]
            for i, g in enumerate(grades):
                if g == target:
                    z[i] = self.MEMORIZED_BOOST * self.profile.sharpness
            return list(z)

        if inst.question in self._known_questions and inst.gold_grade is not None:
            rng = _instance_rng(self.seed, f"v{self.version}|known|{inst.id}")
            z = np.zeros(k)
            for i, g in enumerate(grades):
                if g == inst.gold_grade:
                    z[i] = self.profile.sharpness
            return list(z + rng.normal(0.0, self.profile.noise, k))

        return list(self._base_logits(inst.id, inst.gold_grade, grades))

    def _base_logits(self, key: str, gold: int | None, grades: Sequence[int]) -> np.ndarray:
        rng = _instance_rng(self.seed, f"v{self.version}|base|{key}")
        p = self.profile
        draw = rng.uniform()
        if gold is not None and draw < p.correlation:
            belief, peak = gold, p.sharpness
        else:
            # wrong beliefs span clueless to confidently wrong, so the gate's
            # separation is strong but never perfect
            choices = [g for g in grades if g != gold] or list(grades)
            belief = choices[rng.integers(0, len(choices))]
            peak = p.sharpness * rng.uniform(0.0, 1.0)
        z = np.zeros(len(grades))
        for i, g in enumerate(grades):
            if g == belief:
                z[i] = peak
        return z + rng.normal(0.0, p.noise, len(grades))

    def update_hook(self, pairs: Sequence[tuple[GradingInstance, int]]) -> None:
        """Absorb a fine-tune batch: memorize its pairs, forget the rest."""
        with self._lock:
            knowledge: dict[str, int] = {}
            questions: set[str] = set()
            for inst, grade in pairs:
                if not inst.rubric.contains(grade):
                    raise ScoringError(
                        f"update pair for {inst.id!r} carries grade {grade} "
                        f"outside rubric 0..{inst.rubric.max_grade}"
                    )
                knowledge[inst.id] = grade
                questions.add(inst.question)
            self._knowledge = knowledge
            self._known_questions = questions
            self.version += 1


def synthetic_backend(
    profile: ScorerProfile | None = None,
    seed: int = 0,
    pretrain: Iterable[GradingInstance] | None = None,
) -> SyntheticScorer:
    """Build the deterministic synthetic scorer used for desk-scale runs."""
    return SyntheticScorer(profile=profile, seed=seed, pretrain=pretrain)
