"""Independent reference implementations used to cross-check the package."""

from __future__ import annotations

import itertools
import math
import random


def union_area_inclusion_exclusion(boxes) -> float:
    """Exact union area by inclusion-exclusion over all subsets (small n only)."""
    total = 0.0
    n = len(boxes)
    for r in range(1, n + 1):
        for subset in itertools.combinations(boxes, r):
            x1 = max(b.x for b in subset)
            y1 = max(b.y for b in subset)
            x2 = min(b.x + b.w for b in subset)
            y2 = min(b.y + b.h for b in subset)
            if x2 > x1 and y2 > y1:
                total += (-1) ** (r + 1) * (x2 - x1) * (y2 - y1)
    return total


def union_area_grid(boxes) -> int:
    """Union area of integer-aligned boxes by counting covered unit cells."""
    cells = set()
    for b in boxes:
        for i in range(int(b.x), int(b.x + b.w)):
            for j in range(int(b.y), int(b.y + b.h)):
                cells.add((i, j))
    return len(cells)


def union_area_monte_carlo(boxes, frame, samples: int, seed: int = 0) -> float:
    """Monte-Carlo estimate of the union area clipped to ``frame``."""
    import numpy as np

    rng = np.random.default_rng(seed)
    xs = rng.uniform(frame.x, frame.x + frame.w, samples)
    ys = rng.uniform(frame.y, frame.y + frame.h, samples)
    hit = np.zeros(samples, dtype=bool)
    for b in boxes:
        hit |= (xs >= b.x) & (xs <= b.x + b.w) & (ys >= b.y) & (ys <= b.y + b.h)
    return float(hit.mean()) * frame.w * frame.h


def levenshtein_dp(a: str, b: str) -> int:
    """Full-matrix Wagner-Fischer edit distance."""
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[len(a)][len(b)]


def cosine_counts(a: str, b: str) -> float:
    """Cosine of word-count vectors, written against plain dicts."""
    import re

    def vec(s):
        out: dict[str, int] = {}
        for tok in re.sub(r"[^\w\s]|_", " ", s.lower()).split():
            out[tok] = out.get(tok, 0) + 1
        return out

    va, vb = vec(a), vec(b)
    if not va or not vb:
        return 0.0
    dot = sum(c * vb.get(t, 0) for t, c in va.items())
    return dot / (math.sqrt(sum(c * c for c in va.values())) * math.sqrt(sum(c * c for c in vb.values())))


SYN = {"yes": "yes", "true": "yes", "y": "yes", "t": "yes", "no": "no", "false": "no", "n": "no", "f": "no"}


def _label(s: str) -> str:
    s = " ".join(s.lower().split())
    return SYN.get(s, s)


def _text_sim(a: str, b: str) -> float:
    if not a.strip() and not b.strip():
        return 1.0
    return cosine_counts(a, b)


def graph_similarity_bruteforce(g1, g2, weights=(0.3, 0.4, 0.3)) -> float:
    """Try every injective map from the smaller node set into the larger."""
    wt, we, wx = weights
    small, large = (g1, g2) if len(g1.nodes) <= len(g2.nodes) else (g2, g1)
    n = len(large.nodes)
    m = max(len(g1.edges), len(g2.edges))
    if not small.nodes:
        return 1.0 if not large.nodes else 0.0
    large_edges: dict = {}
    for e in large.edges:
        key = (e.source, e.target, _label(e.label))
        large_edges[key] = large_edges.get(key, 0) + 1
    best = -1.0
    for perm in itertools.permutations(large.nodes, len(small.nodes)):
        f = {a.id: b for a, b in zip(small.nodes, perm)}
        types = sum(a.kind == f[a.id].kind for a in small.nodes)
        text = sum(_text_sim(a.text, f[a.id].text) for a in small.nodes)
        avail = dict(large_edges)
        pres = 0
        for e in small.edges:
            key = (f[e.source].id, f[e.target].id, _label(e.label))
            if avail.get(key, 0) > 0:
                avail[key] -= 1
                pres += 1
        edge_term = pres / m if m else 1.0
        best = max(best, wt * types / n + we * edge_term + wx * text / n)
    return best


def random_words_layout(rng: random.Random, n_lines: int):
    """Word boxes on ``n_lines`` well separated text lines with jittered
    baselines and heights. Returns (words, expected) where expected lists
    each line's words left to right."""
    from flowgrade.geometry import BoundingBox, TextFragment

    lines = []
    top = rng.uniform(10, 40)
    for li in range(n_lines):
        h_base = rng.uniform(14, 30)
        x = rng.uniform(0, 40)
        row = []
        for wi in range(rng.randint(1, 7)):
            h = h_base * rng.uniform(0.85, 1.15)
            y = top + rng.uniform(-0.15, 0.15) * h_base
            w = rng.uniform(10, 80)
            row.append(TextFragment(BoundingBox(x, y, w, h), f"w{li}_{wi}", 0.9))
            x += w + rng.uniform(3, 15)
        lines.append(row)
        top += h_base * 1.6 + rng.uniform(2, 12)
    return [f for row in lines for f in row], [[f.text for f in row] for row in lines]
