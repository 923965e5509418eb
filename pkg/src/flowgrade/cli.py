"""Command-line entry point.

Exit codes: 0 success, 1 input error, 2 runtime error.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import socket
import sys
from pathlib import Path
from typing import Optional

import click
import httpx

from . import __version__
from .config import BackendConfig, Config, load_config
from .errors import EmptyDiagram, FlowgradeError, InputError, UnparsableVerdict
from .flowgraph import serialize
from .llm_gateway import GradingRequest, RequestKind, grade
from .pipeline import (
    Report,
    diagram_from_detections,
    evaluate_sheet,
    expectation_tally,
    load_answer_key,
    load_expected,
    load_reports,
    save_report,
)
from .scoring import deterministic_text_score

EXIT_INPUT = 1
EXIT_RUNTIME = 2


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


def _config(path: Optional[str], backend: Optional[str]) -> Config:
    config = load_config(path)
    if backend == "http" or (backend is None and config.backend.kind == "http"):
        config = dataclasses.replace(config, backend=BackendConfig.from_env(config.backend, kind="http"))
    elif backend == "mock":
        config = config.replace_backend(kind="mock")
    return config


def _inline_key(key_path: str) -> dict:
    """Answer key JSON with referenced detections files embedded."""
    key = json.loads(_read(key_path))
    base = Path(key_path).parent
    for q in key.get("questions", []):
        md = q.get("model_diagram") or {}
        if isinstance(md.get("detections"), str):
            md["detections"] = json.loads(_read(str(base / md["detections"])))
    return key


@click.group()
@click.version_option(__version__, prog_name="flowgrade")
@click.option("-v", "--verbose", is_flag=True, help="Log retries and other progress to stderr.")
def cli(verbose: bool):
    """Grade answer sheets (text answers and flowcharts) against an answer key."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--detections", required=True, type=click.Path(dir_okay=False), help="Detections JSON of the student sheet.")
@click.option("--key", "key_path", required=True, type=click.Path(dir_okay=False), help="Answer key JSON.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="INI config file.")
@click.option("--backend", type=click.Choice(["mock", "http"]), help="Grading backend (default from config: mock).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Directory for the report and run log.")
@click.option("--sheet-id", help="Override the sheet id recorded in the report.")
@click.option("--server", help="Send the job to a running flowgrade service instead of grading in-process.")
def evaluate(detections, key_path, config_path, backend, out_dir, sheet_id, server):
    """Grade one sheet and print its report as JSON."""
    det_bytes = _read(detections)
    if server:
        body = {"detections": json.loads(det_bytes), "key": _inline_key(key_path)}
        if backend:
            body["backend"] = backend
        resp = httpx.post(server.rstrip("/") + "/v1/evaluate", json=body, timeout=600)
        if resp.status_code == 400:
            raise InputError(f"server rejected input: {resp.json().get('detail')}")
        resp.raise_for_status()
        report = Report.from_dict(resp.json())
        if sheet_id:
            report.sheet_id = sheet_id
    else:
        config = _config(config_path, backend)
        key = load_answer_key(_read(key_path), config, base_dir=Path(key_path).parent)
        report = evaluate_sheet(det_bytes, key, config, sheet_id=sheet_id or None)
        if report.sheet_id == "sheet":
            report.sheet_id = Path(detections).stem
    if out_dir:
        path = save_report(report, out_dir)
        click.echo(f"report written to {path}", err=True)
    click.echo(report.to_json(), nl=False)


@cli.command("parse-diagram")
@click.option("--detections", required=True, type=click.Path(dir_okay=False))
@click.option("--block", "block_id", required=True, help="Id of the diagram block.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
def parse_diagram(detections, block_id, config_path):
    """Print the canonical text of one diagram block."""
    config = load_config(config_path)
    try:
        graph = diagram_from_detections(_read(detections), block_id, config)
    except EmptyDiagram as exc:
        raise InputError(f"block {block_id}: {exc}") from None
    for w in graph.warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(serialize(graph), nl=False)


@cli.command("grade-text")
@click.option("--student", required=True, type=click.Path(dir_okay=False), help="File with the student answer.")
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False), help="File with the model answer.")
@click.option("--max", "max_marks", required=True, type=click.FloatRange(min=0, min_open=True))
@click.option("--keywords", help="Comma-separated keywords for coverage scoring.")
@click.option("--question", "question_text", help="Question text to include in the prompt.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--backend", type=click.Choice(["mock", "http"]))
def grade_text(student, model_path, max_marks, keywords, question_text, config_path, backend):
    """Grade a single text answer and print the verdict as JSON."""
    config = _config(config_path, backend)
    student_text = _read(student).decode("utf-8")
    model_text = _read(model_path).decode("utf-8")
    if not model_text.strip():
        raise InputError(f"{model_path} is empty")
    kws = frozenset(k.strip() for k in keywords.split(",") if k.strip()) if keywords else None
    req = GradingRequest("cli", RequestKind.TEXT, student_text, model_text, max_marks,
                         question_text=question_text, keywords=kws)
    try:
        verdict = grade(req, config.backend, config.scoring)
    except UnparsableVerdict:
        click.echo("warning: backend reply unreadable; using deterministic scorer", err=True)
        verdict = dataclasses.replace(
            deterministic_text_score(student_text, model_text, kws, max_marks, config.scoring.rounding_step),
            approximate=True)
    click.echo(json.dumps(verdict.to_dict(), indent=2))


@cli.command()
@click.option("--results", required=True, type=click.Path(file_okay=False, exists=True), help="Directory of report JSON files.")
@click.option("--expected", required=True, type=click.Path(dir_okay=False), help="CSV with question_id,expected[,sheet_id].")
@click.option("--band", default=0.5, show_default=True, type=click.FloatRange(min=0))
@click.option("--json", "as_json", is_flag=True, help="Print the tally as JSON.")
def report(results, expected, band, as_json):
    """Count questions graded within BAND marks of the reference marks."""
    tally = expectation_tally(load_reports(results), load_expected(expected), band)
    if as_json:
        click.echo(json.dumps({"within": tally.within, "checked": tally.checked, "band": band,
                               "rows": tally.rows, "missing": tally.missing}, indent=2))
        return
    for row in tally.rows:
        mark = "ok " if row["within"] else "off"
        click.echo(f"{mark} {row['sheet_id']}/{row['question_id']}: score {row['score']:g}, expected {row['expected']:g}")
    for m in tally.missing:
        click.echo(f"missing {m}: no graded result", err=True)
    click.echo(f"{tally.within} of {tally.checked} questions within {band:g} marks of expectation")


@cli.command()
@click.option("--port", default=8000, show_default=True, type=click.IntRange(0, 65535))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--backend", type=click.Choice(["mock", "http"]))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Persist every report here.")
def serve(port, host, config_path, backend, out_dir):
    """Run the HTTP service."""
    from .service import serve as run_service

    config = _config(config_path, backend)
    try:
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as probe:
            probe.bind((host, port))
    except OSError as exc:
        click.echo(f"error: cannot bind {host}:{port}: {exc.strerror or exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    try:
        run_service(config, host, port, out_dir)
    except SystemExit as exc:
        if exc.code not in (0, None):
            sys.exit(EXIT_RUNTIME)


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="flowgrade", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_INPUT
    except click.ClickException as exc:
        exc.show()
        return EXIT_INPUT
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INPUT
    except (FlowgradeError, httpx.HTTPError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_RUNTIME
    except json.JSONDecodeError as exc:
        click.echo(f"error: invalid JSON: {exc}", err=True)
        return EXIT_INPUT
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
