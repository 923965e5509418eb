"""Pydantic models for the detections file, the answer key, and the HTTP API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import SchemaError

SUPPORTED_MAJOR = 1


class BBoxModel(BaseModel):
    x: float = Field(ge=0)
    y: float = Field(ge=0)
    w: float = Field(gt=0)
    h: float = Field(gt=0)


class WordModel(BaseModel):
    bbox: BBoxModel
    text: str = ""
    confidence: float = Field(default=1.0, ge=0, le=1)


class PrimitiveModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    id: Optional[str] = None
    cls: Literal["terminator", "process", "decision", "arrow", "arrowhead", "text"] = Field(alias="class")
    bbox: BBoxModel
    confidence: float = Field(default=1.0, ge=0, le=1)
    polyline: Optional[list[tuple[float, float]]] = None

    @model_validator(mode="after")
    def _polyline_only_on_arrows(self):
        if self.cls == "arrow":
            if not self.polyline or len(self.polyline) < 2:
                raise ValueError("arrow primitives need a polyline with at least 2 points")
        elif self.polyline is not None:
            raise ValueError(f"polyline is only allowed on arrows, not {self.cls}")
        return self


class BlockModel(BaseModel):
    id: str = Field(min_length=1)
    bbox: BBoxModel
    kind_hint: Optional[Literal["text", "diagram"]] = None
    words: list[WordModel] = Field(default_factory=list)
    primitives: list[PrimitiveModel] = Field(default_factory=list)


class PageModel(BaseModel):
    index: int = Field(ge=0)
    width: float = Field(gt=0)
    height: float = Field(gt=0)
    blocks: list[BlockModel] = Field(default_factory=list)


class DetectionsDocument(BaseModel):
    version: str
    sheet_id: Optional[str] = None
    pages: list[PageModel]

    @field_validator("version", mode="before")
    @classmethod
    def _supported_version(cls, v):
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            v = str(v)
        if not isinstance(v, str):
            raise ValueError("version must be a string")
        major = v.split(".", 1)[0]
        if not major.isdigit() or int(major) != SUPPORTED_MAJOR:
            raise ValueError(f"unsupported version {v!r} (supported: {SUPPORTED_MAJOR}.x)")
        return v

    @model_validator(mode="after")
    def _unique_block_ids(self):
        seen: set[str] = set()
        for page in self.pages:
            for block in page.blocks:
                if block.id in seen:
                    raise ValueError(f"duplicate block id {block.id!r}")
                seen.add(block.id)
        return self


class WeightsModel(BaseModel):
    text: float = Field(ge=0)
    diagram: float = Field(ge=0)

    @model_validator(mode="after")
    def _sum_to_one(self):
        if abs(self.text + self.diagram - 1.0) > 1e-9:
            raise ValueError("text and diagram weights must sum to 1")
        return self


class ModelDiagramModel(BaseModel):
    """Model-answer diagram: canonical text, or a block of a detections document."""

    canonical: Optional[str] = None
    detections: Optional[DetectionsDocument | str] = None
    block: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.canonical is None) == (self.detections is None):
            raise ValueError("give exactly one of 'canonical' or 'detections'")
        if self.detections is not None and not self.block:
            raise ValueError("'block' is required with 'detections'")
        return self


class RegionModel(BaseModel):
    page: int = Field(ge=0)
    bbox: BBoxModel


class KeyQuestionModel(BaseModel):
    question_id: str = Field(min_length=1)
    question_text: Optional[str] = None
    model_text: str = ""
    model_diagram: Optional[ModelDiagramModel] = None
    max_marks: float = Field(gt=0)
    keywords: Optional[list[str]] = None
    weights: Optional[WeightsModel] = None
    regions: list[RegionModel] = Field(default_factory=list)

    @model_validator(mode="after")
    def _has_content(self):
        if not self.model_text.strip() and self.model_diagram is None:
            raise ValueError("question needs model_text or model_diagram")
        return self


class AnswerKeyDocument(BaseModel):
    sheet_id: Optional[str] = None
    questions: list[KeyQuestionModel] = Field(min_length=1)

    @model_validator(mode="after")
    def _unique_ids(self):
        ids = [q.question_id for q in self.questions]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate question_id in answer key")
        return self


# --- HTTP payloads -----------------------------------------------------------


class DiagnosticModel(BaseModel):
    code: str
    message: str = ""


class VerdictModel(BaseModel):
    score: float
    max: float
    justification: str
    backend: str
    approximate: bool = False


class QuestionResultModel(BaseModel):
    question_id: str
    text_verdict: Optional[VerdictModel] = None
    diagram_verdict: Optional[VerdictModel] = None
    combined_score: float
    max_marks: float
    warnings: list[DiagnosticModel] = Field(default_factory=list)
    within_expectation: Optional[bool] = None


class ReportModel(BaseModel):
    sheet_id: str
    questions: list[QuestionResultModel]
    total: float
    total_max: float
    warnings: list[DiagnosticModel] = Field(default_factory=list)
    meta: dict


class EvaluateRequest(BaseModel):
    detections: DetectionsDocument
    key: AnswerKeyDocument
    backend: Optional[Literal["mock", "http"]] = None


class ParseDiagramRequest(BaseModel):
    detections: DetectionsDocument
    block: str = Field(min_length=1)


class ParseDiagramResponse(BaseModel):
    block: str
    canonical: str
    warnings: list[DiagnosticModel] = Field(default_factory=list)


class HealthResponse(BaseModel):
    status: str


# --- helpers -----------------------------------------------------------------


def format_loc(loc) -> str:
    """Render a pydantic error location as ``pages[0].blocks[1].bbox.w``."""
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += ("." if out else "") + str(part)
    return out


def schema_error_from(exc: ValidationError) -> SchemaError:
    first = exc.errors()[0]
    return SchemaError(format_loc(first["loc"]), first["msg"])
