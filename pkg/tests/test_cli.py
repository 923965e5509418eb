import json
import socket
from pathlib import Path

import httpx
import pytest
from fastapi.testclient import TestClient

from flowgrade import __version__
from flowgrade.cli import main
from flowgrade.service import create_app

from helpers import sheet_detections

FIXTURES = Path(__file__).parent / "fixtures"
SHEET = str(FIXTURES / "sheet.json")
KEY = str(FIXTURES / "key.json")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_version(capsys):
    code, out, _ = run(capsys, "--version")
    assert code == 0 and __version__ in out


def test_evaluate_prints_report(capsys, tmp_path):
    code, out, err = run(capsys, "evaluate", "--detections", SHEET, "--key", KEY, "--out", str(tmp_path))
    assert code == 0
    report = json.loads(out)
    assert report["total"] == 9 and report["sheet_id"] == "fixture-sheet"
    assert (tmp_path / "fixture-sheet.json").exists()
    assert "report written" in err


def test_evaluate_sheet_id_from_file_stem(capsys, tmp_path):
    det = sheet_detections()
    del det["sheet_id"]
    path = tmp_path / "student42.json"
    path.write_text(json.dumps(det))
    code, out, _ = run(capsys, "evaluate", "--detections", str(path), "--key", KEY)
    assert code == 0 and json.loads(out)["sheet_id"] == "student42"


def test_evaluate_input_errors(capsys, tmp_path):
    code, _, err = run(capsys, "evaluate", "--detections", str(tmp_path / "none.json"), "--key", KEY)
    assert code == 1 and "cannot read" in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": "9", "pages": []}')
    code, _, err = run(capsys, "evaluate", "--detections", str(bad), "--key", KEY)
    assert code == 1 and "version" in err
    code, _, _ = run(capsys, "evaluate", "--detections", SHEET)
    assert code == 1


def test_evaluate_http_backend_unreachable_is_runtime_failure(capsys, monkeypatch):
    monkeypatch.delenv("FLOWGRADE_LLM_ENDPOINT", raising=False)
    code, out, _ = run(capsys, "evaluate", "--detections", SHEET, "--key", KEY, "--backend", "http")
    # grading completes with per-question failures recorded
    assert code == 0
    assert json.loads(out)["total"] == 0


def test_evaluate_via_server(capsys, monkeypatch):
    api = TestClient(create_app())

    def fake_post(url, json=None, timeout=None):
        assert url == "http://grader:8000/v1/evaluate"
        return api.post("/v1/evaluate", json=json)

    monkeypatch.setattr(httpx, "post", fake_post)
    code, out, _ = run(capsys, "evaluate", "--detections", SHEET, "--key", KEY, "--server", "http://grader:8000/")
    assert code == 0
    remote = json.loads(out)
    code, out, _ = run(capsys, "evaluate", "--detections", SHEET, "--key", KEY)
    local = json.loads(out)
    remote["meta"].pop("timestamp")
    local["meta"].pop("timestamp")
    assert remote == local


def test_evaluate_via_server_unreachable(capsys):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    code, _, err = run(capsys, "evaluate", "--detections", SHEET, "--key", KEY,
                       "--server", f"http://127.0.0.1:{port}")
    assert code == 2 and "error" in err


def test_parse_diagram(capsys):
    code, out, err = run(capsys, "parse-diagram", "--detections", str(FIXTURES / "chain.json"), "--block", "d1")
    assert code == 0 and err == ""
    assert out == (FIXTURES / "chain.canonical.txt").read_text()


def test_parse_diagram_errors(capsys):
    code, _, err = run(capsys, "parse-diagram", "--detections", SHEET, "--block", "nope")
    assert code == 1 and "nope" in err
    code, _, err = run(capsys, "parse-diagram", "--detections", SHEET, "--block", "t1")
    assert code == 1


def test_grade_text(capsys, tmp_path):
    (tmp_path / "s.txt").write_text("the cat sat")
    (tmp_path / "m.txt").write_text("the cat ran")
    code, out, _ = run(capsys, "grade-text", "--student", str(tmp_path / "s.txt"),
                       "--model", str(tmp_path / "m.txt"), "--max", "3")
    assert code == 0
    verdict = json.loads(out)
    assert verdict["score"] == 2.0 and verdict["max"] == 3.0 and verdict["backend"] == "mock"


def test_grade_text_bad_max(capsys, tmp_path):
    (tmp_path / "s.txt").write_text("x")
    code, _, _ = run(capsys, "grade-text", "--student", str(tmp_path / "s.txt"),
                     "--model", str(tmp_path / "s.txt"), "--max", "0")
    assert code == 1


def test_report_tally(capsys, tmp_path):
    results = tmp_path / "results"
    for sid in ("a", "b"):
        run(capsys, "evaluate", "--detections", SHEET, "--key", KEY, "--sheet-id", sid, "--out", str(results))
    expected = tmp_path / "expected.csv"
    expected.write_text("sheet_id,question_id,expected\na,Q1,5\na,Q2,2\nb,Q1,4.5\nb,Q2,4\n")
    code, out, _ = run(capsys, "report", "--results", str(results), "--expected", str(expected))
    assert code == 0
    assert out.splitlines()[-1] == "3 of 4 questions within 0.5 marks of expectation"
    code, out, _ = run(capsys, "report", "--results", str(results), "--expected", str(expected), "--json")
    assert json.loads(out)["within"] == 3


def test_report_missing_results_dir(capsys, tmp_path):
    code, _, _ = run(capsys, "report", "--results", str(tmp_path / "nope"), "--expected", str(tmp_path / "e.csv"))
    assert code == 1


def test_serve_port_in_use(capsys):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        s.listen()
        port = s.getsockname()[1]
        with pytest.raises(SystemExit) as info:
            main(["serve", "--port", str(port)])
    assert info.value.code == 2
    assert "cannot bind" in capsys.readouterr().err
