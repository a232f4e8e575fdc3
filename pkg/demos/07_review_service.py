"""Drive the review service end to end over HTTP.

Starts the service in-process on a free port, ingests a calibration batch and
a review batch, works the queue like a grader would, finalizes the cycle, and
prints the report endpoints. Run: python3 demos/07_review_service.py
"""

import json
import socket
import threading
import time
from pathlib import Path
from tempfile import TemporaryDirectory

import httpx
import uvicorn

from gradegate.dataset import GradingInstance, Rubric
from gradegate.scoring import ScorerProfile
from gradegate.service import ServiceConfig, create_app


def jsonl(instances):
    return "\n".join(json.dumps(i.to_record()) for i in instances) + "\n"


def corpus(tag, n, prefix, g_max=5):
    return [
        GradingInstance(
            id=f"{prefix}{i:04d}",
            question=f"Service demo question {i % 10}?",
            answer=f"Answer text {i}.",
            rubric=Rubric(g_max),
            gold_grade=i % (g_max + 1),
            split_tag=tag,
        )
        for i in range(n)
    ]


with TemporaryDirectory() as tmp:
    config = ServiceConfig(
        data_dir=Path(tmp),
        tau=0.75,
        profile=ScorerProfile(sharpness=2.5, noise=1.0, correlation=0.4),
        seed=11,
    )
    app = create_app(config)

    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port,
                                           log_level="error"))
    threading.Thread(target=server.run, daemon=True).start()
    while not server.started:
        time.sleep(0.01)
    base = f"http://127.0.0.1:{port}"

    def wait_ready(batch_id):
        while httpx.get(f"{base}/batches/{batch_id}").json()["status"] == "scoring":
            time.sleep(0.02)

    cal = httpx.post(f"{base}/batches", content=jsonl(corpus("cal", 60, "c"))).json()
    wait_ready(cal["batch_id"])
    print("calibration:", json.dumps(httpx.get(f"{base}/calibration").json(), indent=None)[:120], "...")

    batch = httpx.post(f"{base}/batches", content=jsonl(corpus("D21", 12, "d"))).json()
    wait_ready(batch["batch_id"])
    print("review batch counts:", batch["counts"])

    review_batch = corpus("D21", 12, "d")
    golds = {inst.id: inst.gold_grade for inst in review_batch}
    corrected = 0
    while True:
        response = httpx.get(f"{base}/queue/next", params={"cycle": 1})
        if response.status_code == 204:
            break
        item = response.json()
        httpx.post(f"{base}/corrections", json={
            "instance_id": item["instance_id"],
            "corrected_grade": golds[item["instance_id"]],  # simulated teacher
            "corrector_id": "demo-teacher",
        })
        corrected += 1
    print(f"corrected {corrected} rejected items")

    report = httpx.post(f"{base}/cycles/1/finalize").json()
    print("cycle report:", {k: report[k] for k in
                            ("coverage", "baseline_qwk", "accepted_qwk", "delta_qwk",
                             "temperature_after", "corrections_used")})
    curve = httpx.get(f"{base}/curve", params={"cycle": 1}).json()
    print("curve points:", [(p["tau"], round(p["coverage"], 2)) for p in curve["points"]])

    server.should_exit = True
