"""Rubric prompts, chat-completion transport and verdict parsing.

Any OpenAI-compatible ``/chat/completions`` endpoint can serve as the
grader. The ``mock`` backend answers from the deterministic scorers so the
whole pipeline runs offline and reproducibly.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from typing import Callable, Optional, Sequence, Union

import httpx

from .config import BackendConfig, ScoringConfig
from .errors import BackendUnavailable, SchemaError, UnparsableVerdict
from .scoring import GradingVerdict, deterministic_text_score, graph_similarity, round_half

log = logging.getLogger(__name__)

__all__ = [
    "BackendConfig", "GradingRequest", "GradingVerdict", "RequestKind",
    "build_text_prompt", "build_diagram_prompt", "build_prompt",
    "parse_verdict", "mock_backend", "grade", "grade_many",
]

TEXT_FACTORS = (
    "grammatical correctness",
    "structure of the sentence",
    "important points coverage",
)
DIAGRAM_FACTORS = (
    "shape of the blocks",
    "connection of the blocks and their order",
    "text present inside the blocks",
)


class RequestKind(str, enum.Enum):
    TEXT = "Text"
    DIAGRAM = "Diagram"


@dataclass(frozen=True)
class GradingRequest:
    question_id: str
    kind: RequestKind
    student_payload: str
    model_payload: str
    max_marks: float
    rubric_factors: Optional[tuple[str, ...]] = None
    question_text: Optional[str] = None
    keywords: Optional[frozenset[str]] = None

    def __post_init__(self):
        if self.max_marks <= 0:
            raise ValueError("max_marks must be > 0")
        if not self.model_payload.strip():
            raise ValueError("model payload must be non-empty")

    @property
    def factors(self) -> tuple[str, ...]:
        if self.rubric_factors is not None:
            return tuple(self.rubric_factors)
        return TEXT_FACTORS if self.kind is RequestKind.TEXT else DIAGRAM_FACTORS


# --- prompts -----------------------------------------------------------------


def _template(name: str, prompt_dir: str = "") -> Template:
    if prompt_dir:
        path = Path(prompt_dir) / f"{name}.txt"
        if path.is_file():
            return Template(path.read_text(encoding="utf-8"))
    return Template(resources.files("flowgrade").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8"))


def _render(name: str, req: GradingRequest, prompt_dir: str) -> str:
    question = f"\nQuestion: {req.question_text.strip()}\n" if req.question_text else ""
    return _template(name, prompt_dir).substitute(
        question_block=question,
        factors="\n".join(f"- {f}" for f in req.factors),
        model=req.model_payload.strip("\n"),
        student=req.student_payload.strip("\n"),
        max_marks=f"{req.max_marks:g}",
    )


def build_text_prompt(req: GradingRequest, prompt_dir: str = "") -> str:
    if req.kind is not RequestKind.TEXT:
        raise ValueError("build_text_prompt needs a Text request")
    return _render("text", req, prompt_dir)


def build_diagram_prompt(req: GradingRequest, prompt_dir: str = "") -> str:
    if req.kind is not RequestKind.DIAGRAM:
        raise ValueError("build_diagram_prompt needs a Diagram request")
    return _render("diagram", req, prompt_dir)


def build_prompt(req: GradingRequest, prompt_dir: str = "") -> str:
    if req.kind is RequestKind.TEXT:
        return build_text_prompt(req, prompt_dir)
    return build_diagram_prompt(req, prompt_dir)


# --- verdict parsing ---------------------------------------------------------

_FALLBACK = re.compile(r"score\s*[:=]?\s*([0-9.]+)\s*(?:/\s*([0-9.]+))?", re.IGNORECASE)


def _number(value) -> Optional[float]:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        number = float(value)
    elif isinstance(value, str):
        try:
            number = float(value.strip())
        except ValueError:
            return None
    else:
        return None
    return number if math.isfinite(number) else None


def _json_candidates(raw: str):
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", raw):
        try:
            obj, _ = decoder.raw_decode(raw, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            yield obj


def _finish(score: float, reply_max: Optional[float], max_marks: float, justification: str,
            backend: str, approximate: bool) -> GradingVerdict:
    if reply_max is not None and reply_max > 0 and not math.isclose(reply_max, max_marks):
        score = score * max_marks / reply_max
        approximate = True
    clamped = min(max(score, 0.0), max_marks)
    if clamped != score:
        approximate = True
    return GradingVerdict(clamped, max_marks, justification, backend, approximate)


def parse_verdict(raw: str, max_marks: float, backend: str = "unknown") -> GradingVerdict:
    """Extract a verdict from a model reply.

    The first JSON object carrying a numeric ``score`` wins. Otherwise a
    ``score: x`` / ``score x/y`` pattern is searched, and the result is
    marked approximate. A reply scored on a different scale is rescaled to
    ``max_marks``; out-of-range scores are clamped and marked approximate.
    """
    if max_marks <= 0:
        raise ValueError("max_marks must be > 0")
    for obj in _json_candidates(raw):
        score = _number(obj.get("score"))
        if score is None:
            continue
        reply_max = _number(obj.get("max"))
        justification = obj.get("justification")
        justification = justification if isinstance(justification, str) else ""
        return _finish(score, reply_max, max_marks, justification, backend, False)

    for m in _FALLBACK.finditer(raw):
        score = _number(m.group(1))
        if score is None:
            continue
        reply_max = _number(m.group(2)) if m.group(2) else None
        text = " ".join(raw.split())
        return _finish(score, reply_max, max_marks, text[:500], backend, True)
    raise UnparsableVerdict(raw)


# --- backends ----------------------------------------------------------------


def mock_backend(req: GradingRequest, scoring: Optional[ScoringConfig] = None) -> str:
    """Deterministic stand-in for an LLM; replies with a JSON verdict."""
    from .flowgraph import parse_canonical

    scoring = scoring or ScoringConfig()
    if req.kind is RequestKind.TEXT:
        v = deterministic_text_score(req.student_payload, req.model_payload, req.keywords,
                                     req.max_marks, scoring.rounding_step)
        score, why = v.score, v.justification
    elif not req.student_payload.strip():
        score, why = 0.0, "no student diagram"
    else:
        try:
            student = parse_canonical(req.student_payload)
            model = parse_canonical(req.model_payload)
        except SchemaError as exc:
            score, why = 0.0, f"unreadable diagram representation ({exc})"
        else:
            sim = graph_similarity(student, model, scoring.graph_weights, scoring.synonyms,
                                   scoring.exhaustive_limit)
            score = min(req.max_marks, round_half(req.max_marks * sim.value, scoring.rounding_step))
            parts = ", ".join(f"{k} {v:.4f}" for k, v in sim.components.items())
            why = f"graph similarity {sim.value:.4f} ({parts})" + ("; approximate match" if sim.approximate else "")
    return json.dumps({"score": score, "max": req.max_marks, "justification": why})


def _chat_once(client: httpx.Client, backend: BackendConfig, prompt: str) -> httpx.Response:
    headers = {}
    key = backend.api_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    body = {
        "model": backend.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": backend.temperature,
    }
    url = backend.endpoint.rstrip("/") + "/chat/completions"
    return client.post(url, json=body, headers=headers, timeout=backend.timeout)


def _complete(prompt: str, backend: BackendConfig, client: Optional[httpx.Client],
              sleep: Callable[[float], None]) -> str:
    if not backend.endpoint:
        raise BackendUnavailable("no endpoint configured (set FLOWGRADE_LLM_ENDPOINT)")
    own = client is None
    client = client or httpx.Client()
    attempts = backend.max_retries + 1
    try:
        for attempt in range(attempts):
            try:
                resp = _chat_once(client, backend, prompt)
            except httpx.TransportError as exc:
                reason = f"transport error: {exc!r}"
            else:
                if resp.status_code < 400:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError):
                        raise BackendUnavailable("malformed chat-completion response", attempt + 1) from None
                if resp.status_code < 500:
                    raise BackendUnavailable(f"backend rejected request: HTTP {resp.status_code}", attempt + 1)
                reason = f"HTTP {resp.status_code}"
            if attempt + 1 < attempts:
                delay = backend.backoff_base * backend.backoff_factor ** attempt
                log.warning("grading request failed (%s); retry %d/%d in %.1fs",
                            reason, attempt + 1, backend.max_retries, delay)
                sleep(delay)
        raise BackendUnavailable(f"backend unavailable after {attempts} attempts ({reason})", attempts)
    finally:
        if own:
            client.close()


def grade(req: GradingRequest, backend: Optional[BackendConfig] = None,
          scoring: Optional[ScoringConfig] = None, client: Optional[httpx.Client] = None,
          sleep: Callable[[float], None] = time.sleep) -> GradingVerdict:
    """Grade one request. Transport failures and 5xx replies are retried with
    exponential backoff; an unparsable reply is never retried."""
    backend = backend or BackendConfig()
    if backend.kind == "mock":
        raw = mock_backend(req, scoring)
    else:
        raw = _complete(build_prompt(req, backend.prompt_dir), backend, client, sleep)
    return parse_verdict(raw, req.max_marks, backend.name)


def grade_many(reqs: Sequence[GradingRequest], backend: Optional[BackendConfig] = None,
               scoring: Optional[ScoringConfig] = None, client: Optional[httpx.Client] = None,
               sleep: Callable[[float], None] = time.sleep) -> list[Union[GradingVerdict, Exception]]:
    """Grade requests concurrently (bounded by ``backend.parallelism``).

    Results keep the input order; a failed request yields its exception.
    """
    backend = backend or BackendConfig()

    def one(req: GradingRequest):
        try:
            return grade(req, backend, scoring, client, sleep)
        except (BackendUnavailable, UnparsableVerdict) as exc:
            return exc

    if len(reqs) <= 1 or backend.parallelism == 1:
        return [one(r) for r in reqs]
    with ThreadPoolExecutor(max_workers=backend.parallelism) as pool:
        return list(pool.map(one, reqs))
