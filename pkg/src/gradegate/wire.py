"""HTTP adapters for the scorer and embedder wire protocols.

Scorer protocol:   POST {base}/score  {"system", "user", "candidates": [str]}
                   -> {"logprobs": [float]}
                   POST {base}/update {"records": [{system, user, target, ...}]}
                   -> {"version": int}   (optional capability)
Embedder protocol: POST {base}/embed  {"texts": [str]} -> {"vectors": [[float]]}

``make_scorer_app`` / ``make_embedder_app`` expose any in-process backend or
embedder over the same protocol, which is how the synthetic scorer is served
for integration tests; instances registered with the app are recognized by
their rendered user prompt so the synthetic backend can keep using ground
truth behind the wire boundary.
"""

from __future__ import annotations

from typing import Iterable

import httpx
import numpy as np

from .dataset import GradingInstance
from .replay import Embedder, EmbeddingVector
from .scoring import (
    ProtocolError,
    PromptTemplate,
    ScoreRequest,
    ScorerBackend,
    TransportError,
    load_template,
    render_prompt,
)

__all__ = [
    "HttpScorerBackend",
    "HttpEmbedder",
    "make_scorer_app",
    "make_embedder_app",
]


class HttpScorerBackend:
    """Client for a remote scorer speaking the wire protocol."""

    def __init__(
        self,
        base_url: str,
        timeout: float = 30.0,
        supports_update: bool = True,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.capabilities = frozenset(
            {"score_completions", "update_hook"} if supports_update else {"score_completions"}
        )
        self.version = 0
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def score_completions(self, request: ScoreRequest) -> list[float]:
        try:
            response = self._client.post(f"{self.base_url}/score", json=request.to_wire())
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise TransportError(f"scorer backend unreachable: {exc}") from exc
        payload = response.json()
        logprobs = payload.get("logprobs")
        if not isinstance(logprobs, list):
            raise ProtocolError("scorer response missing 'logprobs' array")
        return [float(v) for v in logprobs]

    def update_hook(self, pairs) -> None:
        template = load_template("basic")
        records = []
        for inst, grade in pairs:
            system, user = render_prompt(template, inst)
            records.append(
                {
                    "system": system,
                    "user": user,
                    "target": f'{{"grade": {grade}, "max_grade": {inst.rubric.max_grade}}}',
                    "instance_id": inst.id,
                }
            )
        try:
            response = self._client.post(f"{self.base_url}/update", json={"records": records})
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise TransportError(f"scorer update failed: {exc}") from exc
        self.version = int(response.json().get("version", self.version + 1))


class HttpEmbedder:
    """Client for a remote embedding service."""

    def __init__(
        self,
        base_url: str,
        timeout: float = 30.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.dimension = -1  # fixed by the remote index; learned on first call
        self.version = f"http:{self.base_url}"
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def embed(self, text: str) -> EmbeddingVector:
        try:
            response = self._client.post(f"{self.base_url}/embed", json={"texts": [text]})
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise TransportError(f"embedder unreachable: {exc}") from exc
        vectors = response.json().get("vectors")
        if not vectors:
            raise ProtocolError("embedder response missing 'vectors'")
        values = np.asarray(vectors[0], dtype=float)
        if self.dimension < 0:
            self.dimension = values.shape[0]
        return EmbeddingVector(values=values)


def make_scorer_app(
    backend: ScorerBackend,
    instances: Iterable[GradingInstance] = (),
    template: PromptTemplate | None = None,
):
    """FastAPI app serving an in-process backend over the scorer protocol."""
    from fastapi import FastAPI

    template = template or load_template("basic")
    by_prompt: dict[str, GradingInstance] = {}
    for inst in instances:
        _, user = render_prompt(template, inst)
        by_prompt[user] = inst

    app = FastAPI(title="scorer-backend")

    @app.post("/score")
    def score(body: dict):
        request = ScoreRequest(
            system=str(body.get("system", "")),
            user=str(body.get("user", "")),
            candidates=tuple(body.get("candidates", [])),
            instance=by_prompt.get(str(body.get("user", ""))),
        )
        return {"logprobs": backend.score_completions(request)}

    @app.post("/update")
    def update(body: dict):
        records = body.get("records", [])
        if "update_hook" in getattr(backend, "capabilities", frozenset()):
            import json as _json

            pairs = []
            for rec in records:
                inst = by_prompt.get(str(rec.get("user", "")))
                if inst is None:
                    continue
                pairs.append((inst, int(_json.loads(rec["target"])["grade"])))
            backend.update_hook(pairs)
        return {"version": getattr(backend, "version", 0)}

    return app


def make_embedder_app(embedder: Embedder):
    """FastAPI app serving an in-process embedder over the embedder protocol."""
    from fastapi import FastAPI

    app = FastAPI(title="embedder")

    @app.post("/embed")
    def embed(body: dict):
        texts = body.get("texts", [])
        return {"vectors": [embedder.embed(str(t)).values.tolist() for t in texts]}

    return app
