"""Synthetic detector output for tests: flowchart layouts and answer sheets."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from flowgrade.flowgraph import FlowEdge, FlowGraph, FlowNode, NodeKind
from flowgrade.geometry import BoundingBox, Primitive, PrimitiveClass, TextFragment

CELL_W, CELL_H = 220, 140
BOX_W, BOX_H = 120, 50
CHAR_W, WORD_H = 9, 16


@dataclass
class Sketch:
    """A flowchart to draw: nodes ``(key, class, text, (col, row))`` and
    edges ``(src, dst, label)``."""

    nodes: list
    edges: list


def word_boxes(text: str, cx: float, cy: float) -> list[dict]:
    """Lay ``text`` out as one centered line of word boxes."""
    words = text.split()
    widths = [CHAR_W * len(w) + 4 for w in words]
    total = sum(widths) + 6 * (len(words) - 1)
    x = cx - total / 2
    out = []
    for word, w in zip(words, widths):
        out.append({"bbox": {"x": round(x, 3), "y": round(cy - WORD_H / 2, 3), "w": w, "h": WORD_H},
                    "text": word, "confidence": 0.95})
        x += w + 6
    return out


def _boundary_point(box, toward):
    x, y, w, h = box
    cx, cy = x + w / 2, y + h / 2
    dx, dy = toward[0] - cx, toward[1] - cy
    norm = math.hypot(dx, dy)
    dx, dy = dx / norm, dy / norm
    t = min(w / 2 / abs(dx) if dx else math.inf, h / 2 / abs(dy) if dy else math.inf)
    return (cx + t * dx, cy + t * dy)


def draw(sketch: Sketch, origin=(20, 20), bend: bool = False) -> tuple[list[dict], list[dict]]:
    """Render ``sketch`` to (primitives, words) in detections-file form."""
    boxes = {}
    prims, words = [], []
    for key, cls, text, (col, row) in sketch.nodes:
        x = origin[0] + col * CELL_W + (CELL_W - BOX_W) / 2
        y = origin[1] + row * CELL_H + (CELL_H - BOX_H) / 2
        boxes[key] = (x, y, BOX_W, BOX_H)
        prims.append({"id": key, "class": cls, "confidence": 0.9,
                      "bbox": {"x": x, "y": y, "w": BOX_W, "h": BOX_H}})
        words.extend(word_boxes(text, x + BOX_W / 2, y + BOX_H / 2))
    for i, (src, dst, label) in enumerate(sketch.edges):
        sb, db = boxes[src], boxes[dst]
        s_c = (sb[0] + sb[2] / 2, sb[1] + sb[3] / 2)
        d_c = (db[0] + db[2] / 2, db[1] + db[3] / 2)
        tail = _boundary_point(sb, d_c)
        head = _boundary_point(db, s_c)
        pts = [tail, head]
        if bend:
            pts.insert(1, ((tail[0] + head[0]) / 2, (tail[1] + head[1]) / 2))
        pts = [(round(px, 3), round(py, 3)) for px, py in pts]
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        prims.append({"id": f"arrow{i}", "class": "arrow", "confidence": 0.8,
                      "bbox": {"x": min(xs), "y": min(ys), "w": max(1, max(xs) - min(xs)), "h": max(1, max(ys) - min(ys))},
                      "polyline": [list(p) for p in pts]})
        ux, uy = head[0] - tail[0], head[1] - tail[1]
        length = math.hypot(ux, uy)
        ux, uy = ux / length, uy / length
        hc = (head[0] - 7 * ux, head[1] - 7 * uy)
        prims.append({"id": f"head{i}", "class": "arrowhead", "confidence": 0.8,
                      "bbox": {"x": round(hc[0] - 7, 3), "y": round(hc[1] - 7, 3), "w": 14, "h": 14}})
        if label:
            lx = tail[0] + 0.3 * length * ux - 10 * uy
            ly = tail[1] + 0.3 * length * uy + 10 * ux
            words.extend(word_boxes(label, lx, ly))
    return prims, words


def to_primitives(prims: list[dict]) -> list[Primitive]:
    out = []
    for p in prims:
        b = p["bbox"]
        out.append(Primitive(p["id"], PrimitiveClass(p["class"]), BoundingBox(b["x"], b["y"], b["w"], b["h"]),
                             p.get("confidence", 1.0),
                             tuple(tuple(pt) for pt in p["polyline"]) if p.get("polyline") else None))
    return out


def to_fragments(words: list[dict]) -> list[TextFragment]:
    return [TextFragment(BoundingBox(**w["bbox"]), w["text"], w.get("confidence", 1.0)) for w in words]


def intended_graph(sketch: Sketch) -> FlowGraph:
    """The graph ``sketch`` depicts, built directly (no geometry)."""
    indeg = {k: 0 for k, *_ in sketch.nodes}
    outdeg = dict(indeg)
    for s, d, _ in sketch.edges:
        outdeg[s] += 1
        indeg[d] += 1
    nodes = []
    for key, cls, text, (col, row) in sketch.nodes:
        if cls == "decision":
            kind = NodeKind.CONDITION
        elif cls == "process":
            kind = NodeKind.PROCESS
        elif indeg[key] == 0:
            kind = NodeKind.START
        elif outdeg[key] == 0:
            kind = NodeKind.STOP
        else:
            kind = NodeKind.PROCESS
        x = 20 + col * CELL_W + (CELL_W - BOX_W) / 2
        y = 20 + row * CELL_H + (CELL_H - BOX_H) / 2
        nodes.append(FlowNode(key, kind, text, BoundingBox(x, y, BOX_W, BOX_H)))
    return FlowGraph(tuple(nodes), tuple(FlowEdge(s, d, l) for s, d, l in sketch.edges))


PROCESS_WORDS = ["read n", "set i to 1", "print i", "add i to sum", "increment i", "compute area",
                 "swap a b", "output result", "initialise total", "push item"]
CONDITION_WORDS = ["i <= n", "n > 0", "is empty", "a > b", "found", "x mod 2 == 0"]


def random_sketch(rng: random.Random, n_nodes: int) -> Sketch:
    """Random connected flowchart: a Start, a Stop, processes and decisions.

    Every non-terminal node lies on a path from Start; each decision has a
    yes and a no branch. Nodes occupy distinct cells of a 4x4 grid.
    """
    cells = rng.sample([(c, r) for c in range(4) for r in range(4)], n_nodes)
    keys = [f"n{i}" for i in range(n_nodes)]
    classes = ["terminator"] + [rng.choice(["process", "process", "decision"]) for _ in range(n_nodes - 2)] + ["terminator"]
    texts = ["start"] + [rng.choice(CONDITION_WORDS if c == "decision" else PROCESS_WORDS) for c in classes[1:-1]] + ["stop"]
    edges = []
    for i in range(n_nodes - 1):
        others = [j for j in range(1, n_nodes) if j not in (i, i + 1)]
        if classes[i] == "decision" and not others:
            classes[i] = "process"
            texts[i] = rng.choice(PROCESS_WORDS)
        if classes[i] == "decision":
            edges.append((keys[i], keys[i + 1], "yes"))
            edges.append((keys[i], keys[rng.choice(others)], "no"))
        else:
            edges.append((keys[i], keys[i + 1], ""))
    nodes = [(k, c, t, cell) for k, c, t, cell in zip(keys, classes, texts, cells)]
    return Sketch(nodes, edges)


def random_chart(rng: random.Random, n_nodes: int, tries: int = 200):
    """A random sketch whose drawing builds back into exactly the intended graph.

    Straight arrows on a grid sometimes cross boxes or crowd each other's
    heads; those layouts are resampled.
    """
    from flowgrade.flowgraph import build_graph, serialize

    for _ in range(tries):
        sketch = random_sketch(rng, n_nodes)
        prims, words = draw(sketch)
        built = build_graph(to_primitives(prims), to_fragments(words))
        if not built.warnings and serialize(built) == serialize(intended_graph(sketch)):
            return sketch, prims, words
    raise RuntimeError("no clean layout found")


Q1_ANSWER = ["A stack is a linear LIFO structure where push adds",
             "an element on top and pop removes the top element"]
MODEL_TEXT = "A stack is a linear LIFO data structure: push adds an element on top and pop removes the top element."


def sheet_detections(sheet_id: str = "fixture-sheet", q1_lines=None, diagram: bool = True) -> dict:
    """Two questions: Q1 answered in text, Q2 answered with a flowchart.

    ``q1_lines`` replaces the Q1 answer lines (``[]`` leaves only the
    anchor); ``diagram=False`` leaves Q2 without a drawing.
    """
    def text_block(block_id, lines, x, y):
        words, top = [], y
        for line in lines:
            cursor = x
            for word in line.split():
                w = CHAR_W * len(word) + 4
                words.append({"bbox": {"x": cursor, "y": top, "w": w, "h": 24}, "text": word, "confidence": 0.93})
                cursor += w + 2
            top += 28
        right = max(wd["bbox"]["x"] + wd["bbox"]["w"] for wd in words)
        bottom = max(wd["bbox"]["y"] + wd["bbox"]["h"] for wd in words)
        return {"id": block_id, "bbox": {"x": x - 2, "y": y - 2, "w": right - x + 4, "h": bottom - y + 4},
                "words": words, "primitives": []}

    lines = Q1_ANSWER if q1_lines is None else q1_lines
    q1 = text_block("t1", ["Q1."] + list(lines) if not lines else ["Q1. Define a stack."] + list(lines), 40, 40)
    q2 = text_block("t2", ["Q2. Flowchart to test whether n is positive"], 40, 200)
    prims, words = draw(decision_sketch("yes", "no"), origin=(40, 260))
    diagram = diagram and _diagram_block(prims, words)
    blocks = [q1, q2, diagram] if diagram else [q1, q2]
    return {"version": "1", "sheet_id": sheet_id,
            "pages": [{"index": 0, "width": 1240, "height": 1754, "blocks": blocks}]}


def _diagram_block(prims, words) -> dict:
    xs = [p["bbox"]["x"] for p in prims] + [p["bbox"]["x"] + p["bbox"]["w"] for p in prims]
    ys = [p["bbox"]["y"] for p in prims] + [p["bbox"]["y"] + p["bbox"]["h"] for p in prims]
    return {"id": "d1", "bbox": {"x": min(xs) - 10, "y": min(ys) - 10,
                                 "w": max(xs) - min(xs) + 20, "h": max(ys) - min(ys) + 20},
            "words": words, "primitives": prims}


def decision_sketch(yes: str, no: str) -> Sketch:
    return Sketch(
        nodes=[("s", "terminator", "start", (1, 0)),
               ("r", "process", "read n", (1, 1)),
               ("c", "decision", "n > 0", (1, 2)),
               ("p", "process", "print positive", (0, 3)),
               ("q", "process", "print not positive", (2, 3)),
               ("e", "terminator", "stop", (1, 4))],
        edges=[("s", "r", ""), ("r", "c", ""), ("c", "p", yes), ("c", "q", no), ("p", "e", ""), ("q", "e", "")],
    )


def answer_key(model_diagram_canonical: str) -> dict:
    return {
        "sheet_id": "fixture-key",
        "questions": [
            {"question_id": "Q1", "question_text": "Define a stack.",
             "model_text": MODEL_TEXT,
             "keywords": ["stack", "LIFO", "push", "pop"], "max_marks": 5},
            {"question_id": "Q2", "question_text": "Draw a flowchart that tests whether n is positive.",
             "model_diagram": {"canonical": model_diagram_canonical}, "max_marks": 4},
        ],
    }
