"""Flowchart reconstruction from detector primitives and the canonical
six-field text form used for grading prompts.

Pipeline: :func:`dedup_blocks` -> :func:`attach_text` -> :func:`resolve_arrows`
-> :func:`classify_node_kind`, composed by :func:`build_graph`.
:func:`serialize` renders a graph; :func:`parse_canonical` reads it back.
"""

from __future__ import annotations

import enum
import math
import re
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

from .config import GraphConfig
from .errors import Diagnostic, EmptyDiagram, SchemaError
from .geometry import (
    BoundingBox,
    Point,
    Primitive,
    PrimitiveClass,
    TextFragment,
    iou,
    point_to_boundary_distance,
    point_to_polyline_distance,
)
from .ingest import segment_lines


class NodeKind(str, enum.Enum):
    START = "Start"
    STOP = "Stop"
    CONDITION = "Condition"
    PROCESS = "Process"


@dataclass(frozen=True)
class FlowNode:
    id: str
    kind: NodeKind
    text: str
    bbox: BoundingBox


@dataclass(frozen=True)
class FlowEdge:
    source: str
    target: str
    label: str = ""


@dataclass(frozen=True)
class FlowGraph:
    nodes: tuple[FlowNode, ...]
    edges: tuple[FlowEdge, ...] = ()
    warnings: tuple[Diagnostic, ...] = ()

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(ids) != len(set(ids)):
            raise ValueError("node ids must be unique within a graph")
        known = set(ids)
        seen = set()
        for e in self.edges:
            if e.source not in known or e.target not in known:
                raise ValueError(f"edge {e.source}->{e.target} references an unknown node")
            triple = (e.source, e.target, e.label)
            if triple in seen:
                raise ValueError(f"duplicate edge {triple}")
            seen.add(triple)

    def node(self, node_id: str) -> FlowNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def degrees(self) -> dict[str, tuple[int, int]]:
        """Map node id -> (in_degree, out_degree)."""
        deg = {n.id: [0, 0] for n in self.nodes}
        for e in self.edges:
            deg[e.target][0] += 1
            deg[e.source][1] += 1
        return {k: (v[0], v[1]) for k, v in deg.items()}


# --- deduplication -----------------------------------------------------------


def _survivor_key(p: Primitive):
    # order-independent tie-breaks come before the id
    return (-p.confidence, -p.bbox.area, p.bbox.y, p.bbox.x, p.bbox.h, p.bbox.w, p.id)


def dedup_blocks(prims: Sequence[Primitive], iou_threshold: float = 0.7) -> list[Primitive]:
    """Greedy per-class suppression of duplicate block detections.

    Arrows, arrowheads and text primitives pass through untouched.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must be in (0, 1]")
    kept: list[Primitive] = []
    for p in sorted((p for p in prims if p.cls.is_block), key=_survivor_key):
        if all(k.cls is not p.cls or iou(k.bbox, p.bbox) < iou_threshold for k in kept):
            kept.append(p)
    survivors = {id(p) for p in kept}
    return [p for p in prims if not p.cls.is_block or id(p) in survivors]


# --- text attachment ---------------------------------------------------------


class TextAttachment(NamedTuple):
    texts: dict[str, str]
    leftovers: list[TextFragment]
    warnings: list[Diagnostic]


def _join_reading_order(frags: Sequence[TextFragment]) -> str:
    return " ".join(line.text for line in segment_lines(frags) if line.text)


def attach_text(blocks: Sequence[Primitive], frags: Sequence[TextFragment]) -> TextAttachment:
    """Assign each fragment to the block containing its center."""
    owned: dict[str, list[TextFragment]] = {b.id: [] for b in blocks}
    leftovers: list[TextFragment] = []
    warnings: list[Diagnostic] = []
    for frag in frags:
        hits = [b for b in blocks if b.bbox.contains(frag.bbox.center)]
        if not hits:
            leftovers.append(frag)
            continue
        if len(hits) > 1:
            warnings.append(Diagnostic(
                "AmbiguousFragment",
                f"text {frag.text!r} lies inside {len(hits)} blocks; assigned to the smallest"))
        best = min(hits, key=lambda b: (b.bbox.area, b.bbox.y, b.bbox.x, b.id))
        owned[best.id].append(frag)
    texts = {bid: _join_reading_order(fs) for bid, fs in owned.items()}
    leftovers.sort(key=lambda f: (f.bbox.y, f.bbox.x, f.text))
    warnings.sort(key=lambda d: d.message)
    return TextAttachment(texts, leftovers, warnings)


# --- arrow resolution --------------------------------------------------------


def _nearest_block(point: Point, blocks: Sequence[Primitive], epsilon: float) -> Optional[Primitive]:
    best = None
    best_key = None
    for b in blocks:
        d = point_to_boundary_distance(point, b.bbox)
        if d > epsilon:
            continue
        key = (d, b.bbox.area, b.bbox.y, b.bbox.x, b.id)
        if best_key is None or key < best_key:
            best, best_key = b, key
    return best


def _oriented(arrow: Primitive, heads: Sequence[Primitive], head_radius: float) -> tuple[Point, ...]:
    """Polyline ordered tail -> head, using the nearest arrowhead if any."""
    pts = tuple(arrow.polyline)
    if not heads:
        return pts
    first, last = pts[0], pts[-1]
    d_first = min(math.dist(first, h.bbox.center) for h in heads)
    d_last = min(math.dist(last, h.bbox.center) for h in heads)
    if d_first < d_last and d_first <= head_radius:
        return pts[::-1]
    return pts


def resolve_arrows(
    arrows: Sequence[Primitive],
    heads: Sequence[Primitive],
    blocks: Sequence[Primitive],
    leftovers: Sequence[TextFragment] = (),
    epsilon: float = 12.0,
    head_radius: float = 36.0,
) -> tuple[list[FlowEdge], list[Diagnostic]]:
    """Turn arrows into directed edges between blocks.

    Each end of an arrow must lie within ``epsilon`` of a block outline.
    Leftover text within ``2 * epsilon`` of an arrow becomes its label; a
    fragment near several arrows labels only the closest one.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    warnings: list[Diagnostic] = []
    attached: list[tuple[tuple[Point, ...], Primitive, Primitive]] = []
    for arrow in sorted(arrows, key=lambda a: (tuple(a.polyline), a.id)):
        pts = _oriented(arrow, heads, head_radius)
        src = _nearest_block(pts[0], blocks, epsilon)
        dst = _nearest_block(pts[-1], blocks, epsilon)
        if src is None or dst is None:
            end = "tail" if src is None else "head"
            warnings.append(Diagnostic(
                "UnattachedArrow",
                f"arrow {arrow.id} from {pts[0]} to {pts[-1]}: {end} is not within {epsilon:g}px of any block"))
            continue
        attached.append((pts, src, dst))

    labels: list[list[TextFragment]] = [[] for _ in attached]
    for frag in leftovers:
        center = frag.bbox.center
        best = None
        for i, (pts, _, _) in enumerate(attached):
            d = point_to_polyline_distance(center, pts)
            if d <= 2 * epsilon and (best is None or d < best[0]):
                best = (d, i)
        if best is not None:
            labels[best[1]].append(frag)

    edges: list[FlowEdge] = []
    seen = set()
    for (pts, src, dst), frags in zip(attached, labels):
        edge = FlowEdge(src.id, dst.id, _join_reading_order(frags))
        key = (edge.source, edge.target, edge.label)
        if key in seen:
            warnings.append(Diagnostic("DuplicateEdge", f"{src.id}->{dst.id} drawn more than once"))
            continue
        seen.add(key)
        edges.append(edge)
    return edges, warnings


# --- node kinds and graph assembly -------------------------------------------


def classify_node_kind(cls: PrimitiveClass, in_degree: int, out_degree: int) -> tuple[NodeKind, Optional[Diagnostic]]:
    if cls is PrimitiveClass.DECISION:
        return NodeKind.CONDITION, None
    if cls is PrimitiveClass.PROCESS:
        return NodeKind.PROCESS, None
    if cls is not PrimitiveClass.TERMINATOR:
        raise ValueError(f"{cls.value} is not a block class")
    if in_degree == 0:
        return NodeKind.START, None
    if out_degree == 0:
        return NodeKind.STOP, None
    return NodeKind.PROCESS, Diagnostic(
        "TerminatorInFlow", f"terminator has {in_degree} incoming and {out_degree} outgoing edges; treated as Process")


def build_graph(prims: Sequence[Primitive], frags: Sequence[TextFragment] = (),
                config: Optional[GraphConfig] = None) -> FlowGraph:
    config = config or GraphConfig()
    survivors = dedup_blocks(prims, config.iou_threshold)
    blocks = [p for p in survivors if p.cls.is_block]
    if not blocks:
        raise EmptyDiagram("no block primitives in diagram")
    arrows = [p for p in survivors if p.cls is PrimitiveClass.ARROW]
    heads = [p for p in survivors if p.cls is PrimitiveClass.ARROWHEAD]

    texts, leftovers, warnings = attach_text(blocks, frags)
    edges, arrow_warnings = resolve_arrows(arrows, heads, blocks, leftovers, config.epsilon, config.head_radius)
    warnings = list(warnings) + arrow_warnings

    degree = {b.id: [0, 0] for b in blocks}
    for e in edges:
        degree[e.target][0] += 1
        degree[e.source][1] += 1

    nodes = []
    for b in sorted(blocks, key=lambda b: (b.bbox.y, b.bbox.x, b.id)):
        kind, note = classify_node_kind(b.cls, *degree[b.id])
        if note is not None:
            warnings.append(Diagnostic(note.code, f"block {b.id}: {note.message}"))
        nodes.append(FlowNode(b.id, kind, texts[b.id], b.bbox))

    graph = FlowGraph(tuple(nodes), tuple(edges))
    warnings.extend(validate(graph))
    return FlowGraph(graph.nodes, graph.edges, tuple(warnings))


def validate(graph: FlowGraph) -> list[Diagnostic]:
    """Structural checks; findings are reported, never raised."""
    out = []
    starts = [n for n in graph.nodes if n.kind is NodeKind.START]
    if not starts:
        out.append(Diagnostic("NoStart", "diagram has no Start node"))
    elif len(starts) > 1:
        out.append(Diagnostic("MultipleStart", f"diagram has {len(starts)} Start nodes"))

    succ: dict[str, list[str]] = {n.id: [] for n in graph.nodes}
    for e in graph.edges:
        succ[e.source].append(e.target)
        if e.source == e.target:
            out.append(Diagnostic("SelfLoop", f"block {e.source} points to itself"))
    if starts:
        seen = {n.id for n in starts}
        stack = [n.id for n in starts]
        while stack:
            for t in succ[stack.pop()]:
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        for n in graph.nodes:
            if n.id not in seen:
                out.append(Diagnostic("Unreachable", f"block {n.id} is not reachable from Start"))

    for n in graph.nodes:
        if n.kind is not NodeKind.CONDITION:
            continue
        outgoing = [e for e in graph.edges if e.source == n.id]
        if len(outgoing) != 2:
            out.append(Diagnostic("ConditionArity", f"condition {n.id} has {len(outgoing)} outgoing edges, expected 2"))
        if any(not e.label for e in outgoing):
            out.append(Diagnostic("UnlabeledBranch", f"condition {n.id} has an unlabeled outgoing edge"))
    return out


# --- canonical text ----------------------------------------------------------

_KIND_RANK = {NodeKind.START: 0, NodeKind.CONDITION: 1, NodeKind.PROCESS: 2, NodeKind.STOP: 3}
_WS = re.compile(r"\s+")


def _position_key(n: FlowNode):
    b = n.bbox
    return (b.y, b.x, b.h, b.w, _KIND_RANK[n.kind], n.text, n.id)


def canonical_order(graph: FlowGraph) -> tuple[list[FlowNode], list[Diagnostic]]:
    """Breadth-first order from the Start node(s), reading order on ties.

    Nodes unreachable from the roots are appended by restarting the search at
    the topmost-leftmost unvisited node.
    """
    warnings = []
    if not graph.nodes:
        return [], warnings
    by_id = {n.id: n for n in graph.nodes}
    succ: dict[str, list[FlowNode]] = {n.id: [] for n in graph.nodes}
    for e in graph.edges:
        if by_id[e.target] not in succ[e.source]:
            succ[e.source].append(by_id[e.target])
    for targets in succ.values():
        targets.sort(key=_position_key)

    remaining = sorted(graph.nodes, key=_position_key)
    roots = [n for n in remaining if n.kind is NodeKind.START]
    if not roots:
        warnings.append(Diagnostic("NoStartNode", "no Start node; ordering anchored at the topmost-leftmost block"))
        roots = [remaining[0]]

    order: list[FlowNode] = []
    visited = {n.id for n in roots}
    queue = deque(roots)
    while True:
        while queue:
            node = queue.popleft()
            order.append(node)
            for t in succ[node.id]:
                if t.id not in visited:
                    visited.add(t.id)
                    queue.append(t)
        if len(order) == len(graph.nodes):
            return order, warnings
        nxt = next(n for n in remaining if n.id not in visited)
        visited.add(nxt.id)
        queue.append(nxt)


def _clean(text: str) -> str:
    return _WS.sub(" ", text).strip()


def _clean_label(label: str) -> str:
    return _clean(re.sub(r"[,()]", " ", label))


def serialize(graph: FlowGraph) -> str:
    """Render ``graph`` as canonical text: one six-line record per block,
    blank line between records, ids B1, B2, ... in canonical order."""
    order, _ = canonical_order(graph)
    rank = {n.id: i for i, n in enumerate(order)}
    cid = {n.id: f"B{i + 1}" for i, n in enumerate(order)}
    kinds = {n.id: n.kind for n in graph.nodes}

    incoming: dict[str, set[str]] = {n.id: set() for n in graph.nodes}
    outgoing: dict[str, list[tuple[int, str]]] = {n.id: [] for n in graph.nodes}
    incidences = {n.id: 0 for n in graph.nodes}
    for e in graph.edges:
        incoming[e.target].add(e.source)
        label = _clean_label(e.label)
        if not label and kinds[e.source] is NodeKind.CONDITION:
            label = "?"
        entry = f"{cid[e.target]}({label})" if label else cid[e.target]
        outgoing[e.source].append((rank[e.target], entry))
        incidences[e.source] += 1
        incidences[e.target] += 1

    records = []
    for n in order:
        prev = ",".join(cid[s] for s in sorted(incoming[n.id], key=rank.__getitem__)) or "none"
        nxt = ",".join(entry for _, entry in sorted(outgoing[n.id])) or "none"
        records.append("\n".join([
            f"id={cid[n.id]}",
            f"neighbors={incidences[n.id]}",
            f"prev={prev}",
            f"next={nxt}",
            f"type={n.kind.value}",
            f"text={_clean(n.text)}",
        ]))
    return "\n\n".join(records) + "\n" if records else ""


_FIELDS = ("id", "neighbors", "prev", "next", "type", "text")
_NEXT_ENTRY = re.compile(r"^(B\d+)(?:\((.*)\))?$")


def parse_canonical(text: str, strict: bool = False) -> FlowGraph:
    """Read canonical text back into a graph with ids ``B1``, ``B2``, ...

    Node boxes are synthetic (stacked in record order) so that re-serializing
    reproduces the same ordering. ``strict`` also checks the ``prev`` and
    ``neighbors`` fields against the edges and requires ids in record order.
    Empty text gives an empty graph.
    """
    records = [r for r in re.split(r"\n\s*\n", text.strip()) if r.strip()]
    nodes, edges, declared = [], [], []
    for idx, record in enumerate(records):
        lines = record.strip().split("\n")
        if len(lines) != len(_FIELDS):
            raise SchemaError(f"record[{idx}]", f"expected {len(_FIELDS)} fields, got {len(lines)}")
        values = {}
        for name, line in zip(_FIELDS, lines):
            key, sep, value = line.partition("=")
            if not sep or key.strip() != name:
                raise SchemaError(f"record[{idx}].{name}", f"expected '{name}=...', got {line!r}")
            values[name] = value.strip()
        if not re.fullmatch(r"B\d+", values["id"]):
            raise SchemaError(f"record[{idx}].id", f"ids look like B1, B2, ...; got {values['id']!r}")
        if strict and values["id"] != f"B{idx + 1}":
            raise SchemaError(f"record[{idx}].id", f"expected B{idx + 1}, got {values['id']!r}")
        try:
            kind = NodeKind(values["type"])
        except ValueError:
            raise SchemaError(f"record[{idx}].type", f"unknown block type {values['type']!r}") from None
        nodes.append(FlowNode(values["id"], kind, values["text"], BoundingBox(0, idx, 1, 1)))
        declared.append(values)
        if values["next"] != "none":
            for entry in values["next"].split(","):
                m = _NEXT_ENTRY.match(entry.strip())
                if not m:
                    raise SchemaError(f"record[{idx}].next", f"bad entry {entry!r}")
                label = m.group(2) or ""
                if kind is NodeKind.CONDITION and label == "?":
                    label = ""
                edges.append(FlowEdge(values["id"], m.group(1), label))
    try:
        graph = FlowGraph(tuple(nodes), tuple(edges))
    except ValueError as exc:
        raise SchemaError("canonical", str(exc)) from None
    if strict:
        degree = graph.degrees()
        for idx, values in enumerate(declared):
            nid = values["id"]
            if not values["neighbors"].isdigit() or int(values["neighbors"]) != sum(degree[nid]):
                raise SchemaError(f"record[{idx}].neighbors", "does not match edges")
            preds = sorted({e.source for e in edges if e.target == nid}, key=lambda s: int(s[1:]))
            if (",".join(preds) or "none") != values["prev"]:
                raise SchemaError(f"record[{idx}].prev", "does not match edges")
    return graph
