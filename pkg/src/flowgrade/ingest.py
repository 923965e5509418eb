"""Detections-file parsing, text/diagram block classification, line
segmentation and question-wise grouping of an answer sheet."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Mapping, Optional, Sequence, Union

from pydantic import ValidationError

from .config import IngestConfig
from .errors import DegenerateBlock, Diagnostic, EmptyDiagram, SchemaError, VersionError
from .geometry import (
    BoundingBox,
    Primitive,
    PrimitiveClass,
    TextFragment,
    bbox_union,
    union_area,
)
from .schemas import SUPPORTED_MAJOR, DetectionsDocument, schema_error_from

if TYPE_CHECKING:
    from .flowgraph import FlowGraph

UNASSIGNED = "unassigned"


class BlockKind(str, enum.Enum):
    TEXT = "Text"
    DIAGRAM = "Diagram"


class Source(str, enum.Enum):
    STUDENT = "Student"
    MODEL_KEY = "ModelKey"


@dataclass(frozen=True)
class Block:
    id: str
    page: int
    bbox: BoundingBox
    kind: BlockKind
    fragments: tuple[TextFragment, ...] = ()
    primitives: tuple[Primitive, ...] = ()
    notes: tuple[Diagnostic, ...] = ()

    def __post_init__(self):
        if self.kind is BlockKind.TEXT and self.primitives:
            raise ValueError(f"text block {self.id!r} cannot carry primitives")


@dataclass(frozen=True)
class Line:
    bbox: BoundingBox
    words: tuple[TextFragment, ...]

    @property
    def text(self) -> str:
        return " ".join(w.text for w in self.words if w.text)


@dataclass
class QuestionBundle:
    question_id: str
    source: Source = Source.STUDENT
    answer_text: list[Line] = field(default_factory=list)
    diagrams: list["FlowGraph"] = field(default_factory=list)
    block_ids: list[str] = field(default_factory=list)
    diagram_block_ids: list[str] = field(default_factory=list)
    warnings: list[Diagnostic] = field(default_factory=list)
    # answer lines with any leading question anchor removed
    _clean_lines: list[str] = field(default_factory=list, repr=False)

    @property
    def text(self) -> str:
        return " ".join(t for t in self._clean_lines if t)

    def add_line(self, line: Line, clean_text: str) -> None:
        self.answer_text.append(line)
        self._clean_lines.append(clean_text)


# --- classification ----------------------------------------------------------


def text_density(block_bbox: BoundingBox, text_boxes: Sequence[BoundingBox]) -> float:
    """Fraction of ``block_bbox`` covered by the union of ``text_boxes``."""
    if block_bbox.area <= 0:
        raise DegenerateBlock(f"block has zero area: {block_bbox}")
    clipped = [c for c in (block_bbox.intersection(b) for b in text_boxes) if c is not None]
    return union_area(clipped) / block_bbox.area


def classify_block(block_bbox: BoundingBox, text_boxes: Sequence[BoundingBox],
                   threshold: float = 0.5) -> BlockKind:
    if text_density(block_bbox, text_boxes) >= threshold:
        return BlockKind.TEXT
    return BlockKind.DIAGRAM


# --- line segmentation -------------------------------------------------------


def _word_key(word: TextFragment):
    b = word.bbox
    return (b.x, b.y, b.x2, b.y2, word.text, word.confidence)


def _same_line(a: BoundingBox, b: BoundingBox) -> bool:
    overlap = min(a.y2, b.y2) - max(a.y, b.y)
    return overlap > 0 and overlap >= 0.5 * min(a.h, b.h)


def segment_lines(words: Sequence[TextFragment]) -> list[Line]:
    """Group words into lines by vertical overlap.

    Two words share a line when their vertical extents overlap by at least
    half the smaller height; the relation is closed transitively.
    """
    words = sorted(words, key=_word_key)
    parent = list(range(len(words)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(words)):
        for j in range(i + 1, len(words)):
            if _same_line(words[i].bbox, words[j].bbox):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[TextFragment]] = {}
    for i, word in enumerate(words):
        groups.setdefault(find(i), []).append(word)

    lines = [Line(bbox_union(w.bbox for w in members), tuple(members))
             for members in groups.values()]
    lines.sort(key=lambda ln: (ln.bbox.y, ln.bbox.x, _word_key(ln.words[0])))
    return lines


# --- question anchoring ------------------------------------------------------


class RegexAnchorPolicy:
    """Lines starting with ``Q1.``, ``2)``, ``Q 3]`` ... open a new question."""

    name = "regex"
    DEFAULT_PATTERN = r"^Q?\s*([0-9]+)[).\]]"

    def __init__(self, pattern: str = DEFAULT_PATTERN):
        self.pattern = re.compile(pattern, re.IGNORECASE)

    def match(self, text: str) -> Optional[tuple[str, str]]:
        """Return ``(question_id, remaining_text)`` if ``text`` opens a question."""
        m = self.pattern.match(text.strip())
        if not m:
            return None
        return f"Q{int(m.group(1))}", text.strip()[m.end():].strip()


class ManifestAnchorPolicy:
    """Questions own fixed page regions declared by the answer key."""

    name = "manifest"

    def __init__(self, regions: Mapping[str, Sequence[tuple[int, BoundingBox]]]):
        self.regions = {qid: list(rs) for qid, rs in regions.items()}

    def question_for(self, block: Block) -> Optional[str]:
        center = block.bbox.center
        hits = [(bbox.area, qid) for qid, rs in self.regions.items()
                for page, bbox in rs if page == block.page and bbox.contains(center)]
        return min(hits)[1] if hits else None


AnchorPolicy = Union[RegexAnchorPolicy, ManifestAnchorPolicy]


def reading_order(blocks: Sequence[Block]) -> list[Block]:
    return sorted(blocks, key=lambda b: (b.page, b.bbox.y, b.bbox.x, b.id))


def _default_builder(block: Block) -> "FlowGraph":
    from .flowgraph import build_graph

    return build_graph(block.primitives, block.fragments)


def map_to_questions(
    blocks: Sequence[Block],
    anchors: Optional[AnchorPolicy] = None,
    build_diagram: Optional[Callable[[Block], "FlowGraph"]] = None,
    low_confidence: float = 0.35,
    source: Source = Source.STUDENT,
) -> dict[str, QuestionBundle]:
    """Partition a sheet's blocks into per-question bundles.

    Content before the first anchor lands under ``"unassigned"`` with an
    ``UnanchoredBlock`` warning per block. Diagram blocks go to the question
    that is open when they are reached.
    """
    anchors = anchors or RegexAnchorPolicy()
    build_diagram = build_diagram or _default_builder
    bundles: dict[str, QuestionBundle] = {}

    def bundle(qid: str) -> QuestionBundle:
        if qid not in bundles:
            bundles[qid] = QuestionBundle(qid, source=source)
        return bundles[qid]

    current: Optional[str] = None
    for block in reading_order(blocks):
        if isinstance(anchors, ManifestAnchorPolicy):
            current = anchors.question_for(block)

        if block.kind is BlockKind.TEXT:
            owner = None
            for line in segment_lines(block.fragments):
                clean = line.text
                if isinstance(anchors, RegexAnchorPolicy):
                    hit = anchors.match(line.text)
                    if hit:
                        current, clean = hit
                target = current or UNASSIGNED
                bundle(target).add_line(line, clean)
                owner = owner or target
            owner = owner or current or UNASSIGNED
        else:
            owner = current or UNASSIGNED
            target = bundle(owner)
            target.diagram_block_ids.append(block.id)
            try:
                target.diagrams.append(build_diagram(block))
            except EmptyDiagram as exc:
                target.warnings.append(Diagnostic("EmptyDiagram", f"block {block.id}: {exc}"))

        target = bundle(owner)
        target.block_ids.append(block.id)
        target.warnings.extend(block.notes)
        if owner == UNASSIGNED:
            target.warnings.append(Diagnostic(
                "UnanchoredBlock", f"block {block.id} (page {block.page}) precedes any question anchor"))
        for frag in block.fragments:
            if frag.confidence < low_confidence:
                target.warnings.append(Diagnostic(
                    "LowConfidence",
                    f"block {block.id}: word {frag.text!r} recognized with confidence {frag.confidence:.2f}"))
    return bundles


# --- detections file ---------------------------------------------------------


def _check_version(raw: Mapping) -> None:
    version = raw.get("version")
    if version is None:
        raise SchemaError("version", "field required")
    major = str(version).split(".", 1)[0]
    if not major.isdigit():
        raise SchemaError("version", f"malformed version {version!r}")
    if int(major) != SUPPORTED_MAJOR:
        raise VersionError(f"unsupported detections version {version!r} (supported: {SUPPORTED_MAJOR}.x)")


def load_detections(document: Union[bytes, str, Mapping]) -> DetectionsDocument:
    """Decode and validate a detections document (raw JSON or parsed mapping)."""
    if isinstance(document, DetectionsDocument):
        return document
    if isinstance(document, (bytes, str)):
        try:
            raw = json.loads(document)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise SchemaError("", f"not valid JSON: {exc}") from None
    else:
        raw = document
    if not isinstance(raw, Mapping):
        raise SchemaError("", "top level must be a JSON object")
    _check_version(raw)
    try:
        return DetectionsDocument.model_validate(raw)
    except ValidationError as exc:
        raise schema_error_from(exc) from None


def _convert_block(page, b, path: str, config: IngestConfig, force_kind: Optional[BlockKind] = None) -> Block:
    bbox = BoundingBox(b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h)
    frags = []
    for w_idx, w in enumerate(b.words):
        if not w.text.strip() and w.confidence >= config.low_confidence:
            raise SchemaError(f"{path}.words[{w_idx}].text",
                              "empty text is only allowed on low-confidence words")
        frags.append(TextFragment(BoundingBox(w.bbox.x, w.bbox.y, w.bbox.w, w.bbox.h),
                                  w.text.strip(), w.confidence))
    prims = tuple(
        Primitive(
            id=pm.id or f"{b.id}/p{i}",
            cls=PrimitiveClass(pm.cls),
            bbox=BoundingBox(pm.bbox.x, pm.bbox.y, pm.bbox.w, pm.bbox.h),
            confidence=pm.confidence,
            polyline=tuple(tuple(pt) for pt in pm.polyline) if pm.polyline else None,
        )
        for i, pm in enumerate(b.primitives)
    )
    if force_kind is not None:
        kind = force_kind
    elif b.kind_hint is not None:
        kind = BlockKind.TEXT if b.kind_hint == "text" else BlockKind.DIAGRAM
    else:
        kind = classify_block(bbox, [f.bbox for f in frags], config.density_threshold)
    notes: tuple[Diagnostic, ...] = ()
    if kind is BlockKind.TEXT and prims:
        shapes = sum(1 for p in prims if p.cls is not PrimitiveClass.TEXT)
        if shapes:
            notes = (Diagnostic("DroppedPrimitives",
                                f"block {b.id} classified as text; {shapes} shape primitives ignored"),)
        prims = ()
    return Block(b.id, page.index, bbox, kind, tuple(frags), prims, notes)


def blocks_from_document(doc: DetectionsDocument, config: Optional[IngestConfig] = None) -> list[Block]:
    config = config or IngestConfig()
    return [_convert_block(page, b, f"pages[{p_idx}].blocks[{b_idx}]", config)
            for p_idx, page in enumerate(doc.pages)
            for b_idx, b in enumerate(page.blocks)]


def find_block(doc: DetectionsDocument, block_id: str, config: Optional[IngestConfig] = None,
               force_kind: Optional[BlockKind] = None) -> Block:
    """Convert the single block ``block_id``; ``KeyError`` if absent."""
    config = config or IngestConfig()
    for p_idx, page in enumerate(doc.pages):
        for b_idx, b in enumerate(page.blocks):
            if b.id == block_id:
                return _convert_block(page, b, f"pages[{p_idx}].blocks[{b_idx}]", config, force_kind)
    raise KeyError(block_id)


def parse_detections(document: Union[bytes, str, Mapping], config: Optional[IngestConfig] = None) -> list[Block]:
    return blocks_from_document(load_detections(document), config)
