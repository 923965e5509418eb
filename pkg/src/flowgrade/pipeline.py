"""Sheet-level orchestration: answer keys, per-question grading, score
aggregation, reports, persistence and the expectation tally."""

from __future__ import annotations

import csv
import json
import re
import threading
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import httpx
from pydantic import ValidationError

from . import __version__
from .config import Config
from .errors import (
    BackendUnavailable,
    Diagnostic,
    EmptyDiagram,
    InputError,
    NoVerdicts,
    SchemaError,
    UnparsableVerdict,
)
from .flowgraph import FlowGraph, build_graph, parse_canonical, serialize
from .ingest import (
    UNASSIGNED,
    BlockKind,
    ManifestAnchorPolicy,
    QuestionBundle,
    RegexAnchorPolicy,
    blocks_from_document,
    find_block,
    load_detections,
    map_to_questions,
)
from .geometry import BoundingBox
from .llm_gateway import GradingRequest, RequestKind, grade_many
from .schemas import AnswerKeyDocument, DetectionsDocument, schema_error_from
from .scoring import GradingVerdict, deterministic_text_score, graph_similarity, round_half

Document = Union[bytes, str, Mapping, DetectionsDocument]


def natural_key(qid: str):
    return [int(part) if part.isdigit() else part.lower() for part in re.split(r"(\d+)", qid)]


# --- answer key --------------------------------------------------------------


@dataclass(frozen=True)
class KeyQuestion:
    question_id: str
    max_marks: float
    model_text: str = ""
    model_diagram: Optional[FlowGraph] = None
    keywords: Optional[frozenset[str]] = None
    weights: Optional[tuple[float, float]] = None
    question_text: Optional[str] = None
    regions: tuple[tuple[int, BoundingBox], ...] = ()


@dataclass(frozen=True)
class AnswerKey:
    questions: tuple[KeyQuestion, ...]
    sheet_id: Optional[str] = None

    def get(self, qid: str) -> Optional[KeyQuestion]:
        return next((q for q in self.questions if q.question_id == qid), None)


def load_answer_key(document: Union[bytes, str, Mapping, AnswerKeyDocument],
                    config: Optional[Config] = None, base_dir: Union[str, Path, None] = None,
                    allow_paths: bool = True) -> AnswerKey:
    """Validate an answer key. Diagram sources given as file paths are
    resolved against ``base_dir`` (refused when ``allow_paths`` is false)."""
    config = config or Config()
    if isinstance(document, AnswerKeyDocument):
        doc = document
    else:
        try:
            raw = json.loads(document) if isinstance(document, (bytes, str)) else document
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise SchemaError("", f"answer key is not valid JSON: {exc}") from None
        try:
            doc = AnswerKeyDocument.model_validate(raw)
        except ValidationError as exc:
            raise schema_error_from(exc) from None

    questions = []
    for idx, q in enumerate(doc.questions):
        path = f"questions[{idx}].model_diagram"
        graph = None
        if q.model_diagram is not None:
            md = q.model_diagram
            if md.canonical is not None:
                graph = parse_canonical(md.canonical)
            else:
                source = md.detections
                if isinstance(source, str):
                    if not allow_paths:
                        raise SchemaError(f"{path}.detections", "file references are not accepted here; inline the document")
                    file = Path(base_dir or ".") / source
                    try:
                        source = file.read_bytes()
                    except OSError as exc:
                        raise SchemaError(f"{path}.detections", f"cannot read {file}: {exc}") from None
                det = load_detections(source)
                try:
                    block = find_block(det, md.block, config.ingest, force_kind=BlockKind.DIAGRAM)
                except KeyError:
                    raise SchemaError(f"{path}.block", f"no block {md.block!r} in model detections") from None
                try:
                    graph = build_graph(block.primitives, block.fragments, config.graph)
                except EmptyDiagram as exc:
                    raise SchemaError(f"{path}.block", str(exc)) from None
        weights = (q.weights.text, q.weights.diagram) if q.weights else None
        regions = tuple((r.page, BoundingBox(r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h)) for r in q.regions)
        questions.append(KeyQuestion(
            q.question_id, q.max_marks, q.model_text, graph,
            frozenset(q.keywords) if q.keywords else None, weights, q.question_text, regions))
    return AnswerKey(tuple(questions), doc.sheet_id)


# --- results -----------------------------------------------------------------


@dataclass
class QuestionResult:
    question_id: str
    max_marks: float
    combined_score: float = 0.0
    text_verdict: Optional[GradingVerdict] = None
    diagram_verdict: Optional[GradingVerdict] = None
    warnings: list[Diagnostic] = field(default_factory=list)
    within_expectation: Optional[bool] = None

    def to_dict(self) -> dict:
        out: dict = {"question_id": self.question_id}
        if self.text_verdict is not None:
            out["text_verdict"] = self.text_verdict.to_dict()
        if self.diagram_verdict is not None:
            out["diagram_verdict"] = self.diagram_verdict.to_dict()
        out["combined_score"] = self.combined_score
        out["max_marks"] = self.max_marks
        out["warnings"] = [w.to_dict() for w in self.warnings]
        if self.within_expectation is not None:
            out["within_expectation"] = self.within_expectation
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "QuestionResult":
        def verdict(d):
            return GradingVerdict(**d) if d else None
        return cls(
            question_id=data["question_id"],
            max_marks=data["max_marks"],
            combined_score=data["combined_score"],
            text_verdict=verdict(data.get("text_verdict")),
            diagram_verdict=verdict(data.get("diagram_verdict")),
            warnings=[Diagnostic(**w) for w in data.get("warnings", [])],
            within_expectation=data.get("within_expectation"),
        )


@dataclass
class Report:
    sheet_id: str
    questions: list[QuestionResult]
    meta: dict = field(default_factory=dict)
    warnings: list[Diagnostic] = field(default_factory=list)

    @property
    def total(self) -> float:
        return sum(q.combined_score for q in self.questions)

    @property
    def total_max(self) -> float:
        return sum(q.max_marks for q in self.questions)

    def to_dict(self) -> dict:
        return {
            "sheet_id": self.sheet_id,
            "questions": [q.to_dict() for q in self.questions],
            "total": self.total,
            "total_max": self.total_max,
            "warnings": [w.to_dict() for w in self.warnings],
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping) -> "Report":
        # stored totals are ignored; they are recomputed from the questions
        return cls(
            sheet_id=data["sheet_id"],
            questions=[QuestionResult.from_dict(q) for q in data["questions"]],
            meta=dict(data.get("meta", {})),
            warnings=[Diagnostic(**w) for w in data.get("warnings", [])],
        )


# --- aggregation -------------------------------------------------------------


def aggregate(text_v: Optional[GradingVerdict], diag_v: Optional[GradingVerdict],
              weights: Sequence[float] = (0.6, 0.4), max_marks: float = 1.0, step: float = 0.5) -> float:
    """Combine modality verdicts into one question score out of ``max_marks``."""
    if text_v is None and diag_v is None:
        raise NoVerdicts("no verdict to aggregate")
    if text_v is not None and diag_v is not None:
        w_t, w_d = weights
        raw = max_marks * (w_t * text_v.fraction + w_d * diag_v.fraction)
    else:
        raw = max_marks * (text_v or diag_v).fraction
    return min(max_marks, max(0.0, round_half(raw, step)))


def check_expectation(result: QuestionResult, expected: float, band: float = 0.5) -> bool:
    if band < 0:
        raise ValueError("band must be >= 0")
    return abs(result.combined_score - expected) <= band + 1e-9


# --- evaluation --------------------------------------------------------------


@dataclass
class _Plan:
    key: KeyQuestion
    result: QuestionResult
    text_req: Optional[GradingRequest] = None
    diagram_req: Optional[GradingRequest] = None
    student_graph: Optional[FlowGraph] = None


def _plan_question(kq: KeyQuestion, bundle: Optional[QuestionBundle]) -> _Plan:
    result = QuestionResult(kq.question_id, kq.max_marks)
    plan = _Plan(kq, result)
    if bundle is None:
        result.warnings.append(Diagnostic("MissingAnswer", f"no answer found for {kq.question_id}"))
        return plan
    result.warnings.extend(bundle.warnings)

    if kq.model_text.strip():
        student_text = bundle.text
        if student_text.strip():
            plan.text_req = GradingRequest(kq.question_id, RequestKind.TEXT, student_text, kq.model_text,
                                           kq.max_marks, question_text=kq.question_text, keywords=kq.keywords)
        else:
            result.warnings.append(Diagnostic("MissingText", "no answer text found"))
            result.text_verdict = GradingVerdict(0.0, kq.max_marks, "no answer text", "rule")

    for graph in bundle.diagrams:
        result.warnings.extend(graph.warnings)
    if kq.model_diagram is not None:
        if not bundle.diagrams:
            result.warnings.append(Diagnostic("MissingDiagram", "answer key expects a diagram; none found"))
        else:
            if len(bundle.diagrams) > 1:
                result.warnings.append(Diagnostic(
                    "ExtraDiagram", f"{len(bundle.diagrams)} diagrams found; grading the first in reading order"))
            plan.student_graph = bundle.diagrams[0]
            plan.diagram_req = GradingRequest(
                kq.question_id, RequestKind.DIAGRAM, serialize(plan.student_graph),
                serialize(kq.model_diagram), kq.max_marks, question_text=kq.question_text)
    elif bundle.diagrams:
        result.warnings.append(Diagnostic("UnexpectedDiagram", "diagram present but the key has no model diagram"))
    return plan


def _fallback(plan: _Plan, kind: RequestKind, config: Config) -> GradingVerdict:
    kq = plan.key
    if kind is RequestKind.TEXT:
        v = deterministic_text_score(plan.text_req.student_payload, kq.model_text, kq.keywords,
                                     kq.max_marks, config.scoring.rounding_step)
        return replace(v, approximate=True)
    sc = config.scoring
    sim = graph_similarity(plan.student_graph, kq.model_diagram, sc.graph_weights, sc.synonyms, sc.exhaustive_limit)
    score = min(kq.max_marks, round_half(kq.max_marks * sim.value, sc.rounding_step))
    return GradingVerdict(score, kq.max_marks, f"graph similarity {sim.value:.4f}", "deterministic", True)


def evaluate_sheet(detections: Document, key: Union[AnswerKey, bytes, str, Mapping],
                   config: Optional[Config] = None, *, sheet_id: Optional[str] = None,
                   expected: Optional[Mapping[str, float]] = None,
                   client: Optional[httpx.Client] = None,
                   sleep: Callable[[float], None] = time.sleep) -> Report:
    """Grade one answer sheet against an answer key."""
    config = config or Config()
    doc = load_detections(detections)
    if not isinstance(key, AnswerKey):
        key = load_answer_key(key, config)
    blocks = blocks_from_document(doc, config.ingest)

    if config.ingest.anchor_policy == "manifest":
        regions = {q.question_id: q.regions for q in key.questions if q.regions}
        if not regions:
            raise InputError("manifest anchor policy needs 'regions' in the answer key")
        policy = ManifestAnchorPolicy(regions)
    elif config.ingest.anchor_policy == "regex":
        policy = RegexAnchorPolicy()
    else:
        raise InputError(f"unknown anchor policy {config.ingest.anchor_policy!r}")

    bundles = map_to_questions(
        blocks, policy,
        build_diagram=lambda b: build_graph(b.primitives, b.fragments, config.graph),
        low_confidence=config.ingest.low_confidence)

    sheet_warnings: list[Diagnostic] = []
    known = {q.question_id for q in key.questions}
    for qid in sorted(bundles, key=natural_key):
        if qid in known:
            continue
        b = bundles[qid]
        sheet_warnings.extend(b.warnings)
        for graph in b.diagrams:
            sheet_warnings.extend(graph.warnings)
        if qid != UNASSIGNED:
            sheet_warnings.append(Diagnostic("UnknownQuestion", f"answer for {qid} has no entry in the answer key"))

    plans = []
    for kq in sorted(key.questions, key=lambda q: natural_key(q.question_id)):
        try:
            plans.append(_plan_question(kq, bundles.get(kq.question_id)))
        except Exception as exc:  # a broken question must not sink the sheet
            result = QuestionResult(kq.question_id, kq.max_marks)
            result.warnings.append(Diagnostic("GradingFailed", f"{type(exc).__name__}: {exc}"))
            plans.append(_Plan(kq, result))

    jobs = [(plan, kind, req) for plan in plans
            for kind, req in ((RequestKind.TEXT, plan.text_req), (RequestKind.DIAGRAM, plan.diagram_req))
            if req is not None]
    verdicts = grade_many([req for _, _, req in jobs], config.backend, config.scoring, client, sleep)

    failed: set[str] = set()
    for (plan, kind, _), outcome in zip(jobs, verdicts):
        res = plan.result
        if isinstance(outcome, UnparsableVerdict):
            res.warnings.append(Diagnostic(
                "UnparsableVerdict", f"{kind.value.lower()} verdict unreadable; deterministic scorer used"))
            outcome = _fallback(plan, kind, config)
        elif isinstance(outcome, BackendUnavailable):
            res.warnings.append(Diagnostic("GradingFailed", f"{kind.value.lower()} grading: {outcome}"))
            failed.add(res.question_id)
            continue
        if kind is RequestKind.TEXT:
            res.text_verdict = outcome
        else:
            res.diagram_verdict = outcome

    results = []
    for plan in plans:
        res, kq = plan.result, plan.key
        if res.question_id in failed or any(w.code == "GradingFailed" for w in res.warnings):
            res.combined_score = 0.0
        else:
            weights = kq.weights or (config.aggregate.text_weight, config.aggregate.diagram_weight)
            try:
                res.combined_score = aggregate(res.text_verdict, res.diagram_verdict, weights,
                                               kq.max_marks, config.scoring.rounding_step)
            except NoVerdicts:
                res.combined_score = 0.0
        if expected is not None and res.question_id in expected:
            res.within_expectation = check_expectation(res, expected[res.question_id],
                                                       config.aggregate.expectation_band)
        results.append(res)

    meta = {
        "backend": config.backend.name,
        "config_hash": config.digest(),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
    }
    return Report(sheet_id or doc.sheet_id or "sheet", results, meta, sheet_warnings)


def diagram_from_detections(detections: Document, block_id: str, config: Optional[Config] = None) -> FlowGraph:
    """Build the flowchart held by one block, whatever its classified kind."""
    config = config or Config()
    doc = load_detections(detections)
    try:
        block = find_block(doc, block_id, config.ingest, force_kind=BlockKind.DIAGRAM)
    except KeyError:
        raise InputError(f"no block {block_id!r} in detections") from None
    return build_graph(block.primitives, block.fragments, config.graph)


# --- persistence and tallies -------------------------------------------------

RUN_LOG = "runs.jsonl"
_log_lock = threading.Lock()


def _safe_name(sheet_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", sheet_id) or "sheet"


def save_report(report: Report, out_dir: Union[str, Path]) -> Path:
    """Write ``<sheet_id>.json`` and append a line to the run log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{_safe_name(report.sheet_id)}.json"
    path.write_text(report.to_json(), encoding="utf-8")
    entry = {"sheet_id": report.sheet_id, "total": report.total, "total_max": report.total_max,
             "file": path.name, **{k: report.meta.get(k) for k in ("backend", "config_hash", "timestamp")}}
    with _log_lock, open(out / RUN_LOG, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return path


def load_reports(results_dir: Union[str, Path]) -> list[Report]:
    reports = []
    for path in sorted(Path(results_dir).glob("*.json")):
        try:
            reports.append(Report.from_dict(json.loads(path.read_text(encoding="utf-8"))))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: not a report ({exc})") from None
    return reports


def load_expected(path: Union[str, Path]) -> dict[tuple[Optional[str], str], float]:
    """Read ``question_id,expected`` rows (optionally with a ``sheet_id`` column).

    Keys are ``(sheet_id or None, question_id)``.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            fields = set(reader.fieldnames or ())
            if not {"question_id", "expected"} <= fields:
                raise InputError(f"{path}: header must include question_id,expected")
            out = {}
            for lineno, row in enumerate(reader, start=2):
                try:
                    value = float(row["expected"])
                except (TypeError, ValueError):
                    raise InputError(f"{path}:{lineno}: expected mark {row['expected']!r} is not a number") from None
                sheet = (row.get("sheet_id") or "").strip() or None
                out[(sheet, row["question_id"].strip())] = value
            return out
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


@dataclass
class Tally:
    within: int
    checked: int
    rows: list[dict]
    missing: list[str]


def expectation_tally(reports: Iterable[Report], expected: Mapping[tuple[Optional[str], str], float],
                      band: float = 0.5) -> Tally:
    """Count questions whose score lies within ``band`` of the reference mark."""
    rows, matched = [], set()
    for report in sorted(reports, key=lambda r: r.sheet_id):
        for q in report.questions:
            key = (report.sheet_id, q.question_id)
            if key not in expected:
                key = (None, q.question_id)
                if key not in expected:
                    continue
            matched.add(key)
            ok = check_expectation(q, expected[key], band)
            rows.append({"sheet_id": report.sheet_id, "question_id": q.question_id,
                         "score": q.combined_score, "expected": expected[key], "within": ok})
    missing = [f"{s or '*'}/{qid}" for (s, qid) in expected if (s, qid) not in matched]
    return Tally(sum(r["within"] for r in rows), len(rows), rows, sorted(missing))
