import json
import math
import time

import pytest
from fastapi.testclient import TestClient

from gradegate.scoring import ScorerProfile
from gradegate.service import ServiceConfig, create_app

from conftest import make_corpus, make_instance


def jsonl(instances):
    return "\n".join(json.dumps(i.to_record()) for i in instances) + "\n"


class DesignedBackend:
    """Scores by a fixed per-instance confidence plan; everything else 0.5."""

    capabilities = frozenset({"score_completions", "update_hook"})
    version = 0

    def __init__(self, confidences, grade=0):
        self.confidences = confidences
        self.grade = grade
        self.updates = []

    def score_completions(self, request):
        k = len(request.candidates)
        conf = 0.5
        if request.instance is not None:
            conf = self.confidences.get(request.instance.id, 0.5)
        peak = math.log(conf * (k - 1) / (1 - conf))
        return [peak if i == self.grade else 0.0 for i in range(k)]

    def update_hook(self, pairs):
        self.updates.append(list(pairs))
        self.version += 1


def make_client(tmp_path, backend=None, **overrides):
    config = ServiceConfig(data_dir=tmp_path / "data", **overrides)
    app = create_app(config, backend=backend)
    return TestClient(app), config


def wait_ready(client, batch_id, timeout=10.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        status = client.get(f"/batches/{batch_id}").json()["status"]
        if status != "scoring":
            return status
        time.sleep(0.02)
    raise TimeoutError("batch never finished scoring")


def ingest(client, instances, key=None):
    headers = {"Idempotency-Key": key} if key else {}
    response = client.post("/batches", content=jsonl(instances), headers=headers)
    assert response.status_code in (200, 201), response.text
    payload = response.json()
    status = wait_ready(client, payload["batch_id"])
    assert status == "ready"
    return payload


def cycle_batch(n=5, confidences=None, seed=0, max_grade=5):
    instances = [
        make_instance(i, f"Service question {i}?", max_grade=max_grade, gold=i % (max_grade + 1),
                      split="D21")
        for i in range(n)
    ]
    return instances


class TestIngest:
    def test_three_valid_instances(self, tmp_path):
        client, _ = make_client(tmp_path)
        payload = ingest(client, cycle_batch(3))
        assert payload["counts"]["accepted_for_processing"] == 3

    def test_duplicate_ids_rejected(self, tmp_path):
        client, _ = make_client(tmp_path)
        batch = cycle_batch(2) + cycle_batch(1)
        response = client.post("/batches", content=jsonl(batch))
        assert response.status_code == 422
        assert "i0000" in response.json()["detail"]["duplicate_ids"]

    def test_malformed_line_diagnostics(self, tmp_path):
        client, _ = make_client(tmp_path)
        body = jsonl(cycle_batch(1)) + "{not json\n"
        response = client.post("/batches", content=body)
        assert response.status_code == 422
        assert response.json()["detail"]["errors"][0]["line"] == 2

    def test_out_of_range_grade_diagnostics(self, tmp_path):
        client, _ = make_client(tmp_path)
        record = cycle_batch(1)[0].to_record()
        record["grade"] = 9
        response = client.post("/batches", content=json.dumps(record))
        assert response.status_code == 422

    def test_idempotent_reingest(self, tmp_path):
        client, _ = make_client(tmp_path)
        first = ingest(client, cycle_batch(3), key="abc")
        again = client.post("/batches", content=jsonl(cycle_batch(3)),
                            headers={"Idempotency-Key": "abc"})
        assert again.status_code == 200
        assert again.json()["batch_id"] == first["batch_id"]

    def test_cross_batch_collision_rejected(self, tmp_path):
        client, _ = make_client(tmp_path)
        ingest(client, cycle_batch(2))
        response = client.post("/batches", content=jsonl(cycle_batch(2)))
        assert response.status_code == 422

    def test_unknown_batch_404(self, tmp_path):
        client, _ = make_client(tmp_path)
        assert client.get("/batches/nope").status_code == 404


class TestQueue:
    def test_lowest_confidence_first(self, tmp_path):
        instances = cycle_batch(2)
        backend = DesignedBackend({instances[0].id: 0.5, instances[1].id: 0.3})
        client, _ = make_client(tmp_path, backend=backend, tau=0.8)
        ingest(client, instances)
        item = client.get("/queue/next", params={"cycle": 1}).json()
        assert item["instance_id"] == instances[1].id
        assert item["confidence"] == pytest.approx(0.3, abs=1e-9)

    def test_unknown_cycle_404(self, tmp_path):
        client, _ = make_client(tmp_path)
        assert client.get("/queue/next", params={"cycle": 9}).status_code == 404

    def test_empty_queue_204(self, tmp_path):
        backend = DesignedBackend({}, grade=0)
        client, _ = make_client(tmp_path, backend=backend, tau=0.1)
        ingest(client, cycle_batch(2))  # tau 0.1 accepts everything at conf 0.5
        response = client.get("/queue/next", params={"cycle": 1})
        assert response.status_code == 204

    def test_claimed_item_not_reserved_twice(self, tmp_path):
        instances = cycle_batch(2)
        backend = DesignedBackend({instances[0].id: 0.5, instances[1].id: 0.3})
        client, _ = make_client(tmp_path, backend=backend, tau=0.8)
        ingest(client, instances)
        first = client.get("/queue/next", params={"cycle": 1}).json()
        second = client.get("/queue/next", params={"cycle": 1}).json()
        assert first["instance_id"] != second["instance_id"]

    def test_lease_expiry_reserves_again(self, tmp_path):
        instances = cycle_batch(1)
        backend = DesignedBackend({instances[0].id: 0.4})
        client, _ = make_client(tmp_path, backend=backend, tau=0.8, lease_seconds=0.15)
        ingest(client, instances)
        first = client.get("/queue/next", params={"cycle": 1}).json()
        assert client.get("/queue/next", params={"cycle": 1}).status_code == 204
        time.sleep(0.25)
        again = client.get("/queue/next", params={"cycle": 1}).json()
        assert again["instance_id"] == first["instance_id"]


class TestCorrections:
    def setup_rejected(self, tmp_path, n=3, **overrides):
        instances = cycle_batch(n)
        backend = DesignedBackend({i.id: 0.3 for i in instances})
        client, config = make_client(tmp_path, backend=backend, tau=0.8, **overrides)
        ingest(client, instances)
        return client, instances, backend

    def test_valid_correction_grows_hil_set(self, tmp_path):
        client, instances, _ = self.setup_rejected(tmp_path)
        response = client.post("/corrections", json={
            "instance_id": instances[0].id, "corrected_grade": 4, "corrector_id": "t1",
        })
        assert response.status_code == 201
        rows = client.get("/corrections", params={"cycle": 1}).json()["corrections"]
        assert len(rows) == 1
        assert rows[0]["corrected_grade"] == 4

    def test_out_of_rubric_422(self, tmp_path):
        client, instances, _ = self.setup_rejected(tmp_path)
        response = client.post("/corrections", json={
            "instance_id": instances[0].id, "corrected_grade": 9, "corrector_id": "t1",
        })
        assert response.status_code == 422

    def test_duplicate_identical_returns_200(self, tmp_path):
        client, instances, _ = self.setup_rejected(tmp_path)
        body = {"instance_id": instances[0].id, "corrected_grade": 2, "corrector_id": "t1"}
        assert client.post("/corrections", json=body).status_code == 201
        again = client.post("/corrections", json=body)
        assert again.status_code == 200
        assert again.json()["corrected_grade"] == 2

    def test_conflicting_needs_override(self, tmp_path):
        client, instances, _ = self.setup_rejected(tmp_path)
        body = {"instance_id": instances[0].id, "corrected_grade": 2, "corrector_id": "t1"}
        client.post("/corrections", json=body)
        conflict = client.post("/corrections", json={**body, "corrected_grade": 3})
        assert conflict.status_code == 409
        forced = client.post("/corrections", json={**body, "corrected_grade": 3,
                                                   "override": True})
        assert forced.status_code in (200, 201)
        rows = client.get("/corrections", params={"cycle": 1}).json()["corrections"]
        assert rows[0]["corrected_grade"] == 3

    def test_unknown_instance_404(self, tmp_path):
        client, _, _ = self.setup_rejected(tmp_path)
        response = client.post("/corrections", json={
            "instance_id": "ghost", "corrected_grade": 1, "corrector_id": "t1",
        })
        assert response.status_code == 404

    def test_accepted_instance_409(self, tmp_path):
        instances = cycle_batch(1)
        backend = DesignedBackend({instances[0].id: 0.99})
        client, _ = make_client(tmp_path, backend=backend, tau=0.5)
        ingest(client, instances)
        response = client.post("/corrections", json={
            "instance_id": instances[0].id, "corrected_grade": 1, "corrector_id": "t1",
        })
        assert response.status_code == 409

    def test_bearer_token_enforced(self, tmp_path):
        instances = cycle_batch(1)
        backend = DesignedBackend({instances[0].id: 0.3})
        config = ServiceConfig(data_dir=tmp_path / "data", auth_token="sekret", tau=0.8)
        client = TestClient(create_app(config, backend=backend))
        headers = {"Authorization": "Bearer sekret"}
        response = client.post("/batches", content=jsonl(instances), headers=headers)
        assert response.status_code == 201
        wait_ready(client, response.json()["batch_id"])
        body = {"instance_id": instances[0].id, "corrected_grade": 1, "corrector_id": "t1"}
        assert client.post("/corrections", json=body).status_code == 401
        assert client.post("/corrections", json=body, headers=headers).status_code == 201


class TestFinalize:
    def test_pending_blocks_without_force(self, tmp_path):
        instances = cycle_batch(3)
        backend = DesignedBackend({i.id: 0.3 for i in instances})
        client, _ = make_client(tmp_path, backend=backend, tau=0.8)
        ingest(client, instances)
        response = client.post("/cycles/1/finalize")
        assert response.status_code == 409
        assert len(response.json()["detail"]["pending"]) == 3

    def test_force_carries_pending(self, tmp_path):
        instances = cycle_batch(4)
        backend = DesignedBackend({i.id: 0.3 for i in instances})
        client, _ = make_client(tmp_path, backend=backend, tau=0.8)
        ingest(client, instances)
        for inst in instances[:2]:
            client.post("/corrections", json={
                "instance_id": inst.id, "corrected_grade": 1, "corrector_id": "t1",
            })
        report = client.post("/cycles/1/finalize", params={"force": "true"}).json()
        assert report["carried"] == 2
        item = client.get("/queue/next", params={"cycle": 2}).json()
        assert item["instance_id"] in {instances[2].id, instances[3].id}

    def test_full_review_produces_report(self, tmp_path):
        instances = cycle_batch(4)
        backend = DesignedBackend({i.id: 0.3 for i in instances})
        client, _ = make_client(tmp_path, backend=backend, tau=0.8)
        ingest(client, instances)
        for inst in instances:
            client.post("/corrections", json={
                "instance_id": inst.id, "corrected_grade": inst.gold_grade,
                "corrector_id": "t1",
            })
        report = client.post("/cycles/1/finalize").json()
        for key in ("coverage", "baseline_qwk", "accepted_qwk", "delta_qwk", "rejected_qwk"):
            assert key in report
        assert report["corrections_used"] == 4
        assert backend.updates, "update hook should have been invoked"

    def test_finalize_idempotent(self, tmp_path):
        instances = cycle_batch(2)
        backend = DesignedBackend({i.id: 0.99 for i in instances})
        client, _ = make_client(tmp_path, backend=backend, tau=0.5)
        ingest(client, instances)
        first = client.post("/cycles/1/finalize").json()
        second = client.post("/cycles/1/finalize").json()
        assert first == second

    def test_unknown_cycle_404(self, tmp_path):
        client, _ = make_client(tmp_path)
        assert client.post("/cycles/7/finalize").status_code == 404


class TestReports:
    def test_calibration_bins(self, tmp_path):
        client, _ = make_client(tmp_path, profile=ScorerProfile(sharpness=4.0, noise=1.0,
                                                                correlation=0.7))
        cal = make_corpus(8, 5, split="cal", seed=3, id_prefix="cal")
        ingest(client, cal.instances)
        report = client.get("/calibration").json()
        assert len(report["bins"]) == 10
        assert report["schema_version"] == 1
        assert "T_star" in report and "ece_before" in report

    def test_calibration_404_before_fit(self, tmp_path):
        client, _ = make_client(tmp_path)
        assert client.get("/calibration").status_code == 404

    def test_curve_monotone_coverage(self, tmp_path):
        client, _ = make_client(tmp_path, profile=ScorerProfile(sharpness=4.0, noise=1.0,
                                                                correlation=0.6), tau=0.8)
        batch = make_corpus(10, 4, split="D21", seed=4, id_prefix="cv")
        ingest(client, batch.instances)
        payload = client.get("/curve", params={"cycle": 1}).json()
        covs = [p["coverage"] for p in payload["points"]]
        assert covs == sorted(covs, reverse=True)

    def test_curve_csv(self, tmp_path):
        client, _ = make_client(tmp_path, tau=0.8)
        batch = make_corpus(6, 3, split="D21", seed=5, id_prefix="cc")
        ingest(client, batch.instances)
        response = client.get("/curve", params={"cycle": 1, "format": "csv"})
        assert response.headers["content-type"].startswith("text/csv")
        assert response.text.splitlines()[0] == "tau,coverage,accepted_qwk,accepted_accuracy"

    def test_metrics_roundtrip(self, tmp_path):
        instances = cycle_batch(3)
        backend = DesignedBackend({i.id: 0.99 for i in instances})
        client, _ = make_client(tmp_path, backend=backend, tau=0.5)
        ingest(client, instances)
        client.post("/cycles/1/finalize")
        payload = client.get("/metrics", params={"cycle": 1}).json()
        assert payload["schema_version"] == 1
        assert client.get("/metrics", params={"cycle": 42}).status_code == 404

    def test_provenance(self, tmp_path):
        instances = cycle_batch(2)
        backend = DesignedBackend({instances[0].id: 0.99, instances[1].id: 0.3})
        client, _ = make_client(tmp_path, backend=backend, tau=0.5)
        ingest(client, instances)
        accepted = client.get(f"/instances/{instances[0].id}/provenance").json()
        assert accepted["source"] == "gate-accept"
        client.post("/corrections", json={
            "instance_id": instances[1].id, "corrected_grade": 2, "corrector_id": "t1",
        })
        corrected = client.get(f"/instances/{instances[1].id}/provenance").json()
        assert corrected["source"] == "correction"
        assert corrected["final_grade"] == 2

    def test_session_snapshot(self, tmp_path):
        client, config = make_client(tmp_path, tau=0.77)
        session = client.get("/session").json()
        assert session["config"]["tau"] == 0.77


class TestDurability:
    def test_restart_recovers_state(self, tmp_path):
        instances = cycle_batch(3)
        backend = DesignedBackend({i.id: 0.3 for i in instances})
        client, config = make_client(tmp_path, backend=backend, tau=0.8)
        ingest(client, instances)
        client.post("/corrections", json={
            "instance_id": instances[0].id, "corrected_grade": 1, "corrector_id": "t1",
        })
        # no shutdown: simply build a new app over the same data dir
        fresh = TestClient(create_app(config, backend=backend))
        rows = fresh.get("/corrections", params={"cycle": 1}).json()["corrections"]
        assert len(rows) == 1
        item = fresh.get("/queue/next", params={"cycle": 1}).json()
        assert item["instance_id"] in {instances[1].id, instances[2].id}
        # duplicate replay of the same correction stays idempotent
        replay = fresh.post("/corrections", json={
            "instance_id": instances[0].id, "corrected_grade": 1, "corrector_id": "t1",
        })
        assert replay.status_code == 200
