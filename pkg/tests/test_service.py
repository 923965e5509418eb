import copy
import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from flowgrade.config import Config
from flowgrade.service import create_app

from helpers import sheet_detections

FIXTURES = Path(__file__).parent / "fixtures"
KEY = json.loads((FIXTURES / "key.json").read_text())


@pytest.fixture
def client(tmp_path):
    return TestClient(create_app(Config(), out_dir=tmp_path))


def test_health(client):
    assert client.get("/v1/health").json() == {"status": "ok"}


def test_parse_diagram(client):
    resp = client.post("/v1/diagrams/parse", json={"detections": sheet_detections(), "block": "d1"})
    assert resp.status_code == 200
    body = resp.json()
    assert body["block"] == "d1" and body["warnings"] == []
    assert body["canonical"].startswith("id=B1\n") and "B4(yes),B5(no)" in body["canonical"]


def test_parse_diagram_errors(client):
    resp = client.post("/v1/diagrams/parse", json={"detections": sheet_detections(), "block": "zz"})
    assert resp.status_code == 404
    resp = client.post("/v1/diagrams/parse", json={"detections": sheet_detections(), "block": "t1"})
    assert resp.status_code == 422


def test_validation_error_paths(client):
    det = sheet_detections()
    det["pages"][0]["blocks"][1]["bbox"]["w"] = 0
    resp = client.post("/v1/diagrams/parse", json={"detections": det, "block": "d1"})
    assert resp.status_code == 400
    assert resp.json()["detail"][0]["path"] == "detections.pages[0].blocks[1].bbox.w"

    det = sheet_detections()
    det["version"] = "3.1"
    resp = client.post("/v1/evaluate", json={"detections": det, "key": KEY})
    assert resp.status_code == 400
    assert resp.json()["detail"][0]["path"] == "detections.version"


def test_evaluate_matches_in_process(client, tmp_path):
    from flowgrade.pipeline import evaluate_sheet

    resp = client.post("/v1/evaluate", json={"detections": sheet_detections(), "key": KEY})
    assert resp.status_code == 200
    body = resp.json()
    local = json.loads(evaluate_sheet(sheet_detections(), KEY).to_json())
    body["meta"].pop("timestamp")
    local["meta"].pop("timestamp")
    assert body == local
    assert (tmp_path / "fixture-sheet.json").exists() and (tmp_path / "runs.jsonl").exists()


def test_evaluate_refuses_key_file_references(client):
    key = copy.deepcopy(KEY)
    key["questions"][1]["model_diagram"] = {"detections": "/etc/passwd", "block": "d1"}
    resp = client.post("/v1/evaluate", json={"detections": sheet_detections(), "key": key})
    assert resp.status_code == 400
    assert "detections" in resp.json()["detail"][0]["path"]


def test_evaluate_inline_model_detections(client):
    key = copy.deepcopy(KEY)
    key["questions"][1]["model_diagram"] = {"detections": sheet_detections(), "block": "d1"}
    resp = client.post("/v1/evaluate", json={"detections": sheet_detections(), "key": key})
    assert resp.status_code == 200
    assert resp.json()["questions"][1]["combined_score"] == 4


def test_evaluate_http_backend_without_endpoint(client, monkeypatch):
    monkeypatch.delenv("FLOWGRADE_LLM_ENDPOINT", raising=False)
    resp = client.post("/v1/evaluate", json={"detections": sheet_detections(), "key": KEY, "backend": "http"})
    assert resp.status_code == 200
    body = resp.json()
    assert body["total"] == 0
    assert all("GradingFailed" in [w["code"] for w in q["warnings"]] for q in body["questions"])
