import json
import socket
import threading
import time

import numpy as np
import pytest

from gradegate.dataset import DatasetSplit, GradingInstance, Rubric


def free_port() -> int:
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


class run_server:
    """Serve an ASGI app on a real socket for wire-protocol tests."""

    def __init__(self, app):
        import uvicorn

        self.port = free_port()
        self.server = uvicorn.Server(
            uvicorn.Config(app, host="127.0.0.1", port=self.port, log_level="error")
        )
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self) -> str:
        self.thread.start()
        deadline = time.time() + 15
        while not self.server.started:
            if time.time() > deadline:
                raise TimeoutError("server did not start")
            time.sleep(0.01)
        return f"http://127.0.0.1:{self.port}"

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)

TOPICS = [
    "clustering centroids", "decision trees pruning", "gradient descent rates",
    "regularization penalties", "ensemble bagging variance", "neural activation saturation",
    "graph pagerank damping", "association rules lift", "kernel trick margins",
    "cross validation folds", "feature scaling effects", "dimensionality reduction loadings",
]


def make_instance(idx, question, max_grade=5, gold=None, split="train", answer=None):
    return GradingInstance(
        id=f"i{idx:04d}",
        question=question,
        answer=answer or f"Answer text number {idx} about {question.split()[0]}.",
        rubric=Rubric(max_grade),
        gold_grade=gold,
        split_tag=split,
    )


def make_corpus(
    n_questions,
    answers_per_question,
    split="train",
    max_grade=5,
    seed=0,
    id_prefix="",
    question_prefix="Explain",
    scales=None,
):
    """Deterministic synthetic grading corpus with gold grades."""
    rng = np.random.default_rng(seed)
    instances = []
    idx = 0
    for q in range(n_questions):
        topic = TOPICS[q % len(TOPICS)]
        question = f"{question_prefix} {topic} variant {q}?"
        g_max = scales[q % len(scales)] if scales else max_grade
        for _ in range(answers_per_question):
            gold = int(rng.integers(0, g_max + 1))
            instances.append(
                GradingInstance(
                    id=f"{id_prefix}i{idx:05d}",
                    question=question,
                    answer=f"Response {idx}: the key idea involves {topic} details.",
                    rubric=Rubric(g_max),
                    gold_grade=gold,
                    split_tag=split,
                )
            )
            idx += 1
    return DatasetSplit(name=split, instances=tuple(instances),
                        role="source" if split == "train" else "target")


def write_jsonl(path, instances):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_record()) + "\n")
    return path


@pytest.fixture
def small_split():
    return make_corpus(4, 3, split="train", seed=1)
