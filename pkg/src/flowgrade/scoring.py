"""Deterministic similarity scorers for text answers and flowchart graphs.

These back the mock grading backend and the offline fallback path, and give
a reproducible cross-check against LLM verdicts.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

from .config import DEFAULT_SYNONYMS
from .errors import EmptyKeywordSet

if TYPE_CHECKING:
    from .flowgraph import FlowGraph

DEFAULT_GRAPH_WEIGHTS = (0.3, 0.4, 0.3)
_NON_WORD = re.compile(r"[^\w\s]|_")


@dataclass(frozen=True)
class GradingVerdict:
    score: float
    max: float
    justification: str = ""
    backend: str = "deterministic"
    approximate: bool = False

    def __post_init__(self):
        if self.max <= 0:
            raise ValueError("max must be > 0")
        if not 0 <= self.score <= self.max:
            raise ValueError(f"score {self.score} outside [0, {self.max}]")

    @property
    def fraction(self) -> float:
        return self.score / self.max

    def to_dict(self) -> dict:
        return {"score": self.score, "max": self.max, "justification": self.justification,
                "backend": self.backend, "approximate": self.approximate}


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    components: dict[str, float] = field(default_factory=dict)
    approximate: bool = False
    # student node id -> model node id for the best mapping found
    mapping: dict[str, str] = field(default_factory=dict)


def round_half(value: float, step: float = 0.5) -> float:
    """Round to the nearest multiple of ``step``, halves rounding up."""
    return math.floor(value / step + 0.5 + 1e-9) * step


# --- text --------------------------------------------------------------------


def tokenize(text: str) -> list[str]:
    return _NON_WORD.sub(" ", text.lower()).split()


def token_vector(text: str) -> Counter:
    return Counter(tokenize(text))


def cosine_similarity(a: str, b: str) -> float:
    va, vb = token_vector(a), token_vector(b)
    if not va or not vb:
        return 0.0
    if va == vb:
        return 1.0
    # fixed summation order keeps the result bit-identical under argument swap
    dot = sum(va[tok] * vb[tok] for tok in sorted(va.keys() & vb.keys()))
    norm_a = math.sqrt(sum(c * c for _, c in sorted(va.items())))
    norm_b = math.sqrt(sum(c * c for _, c in sorted(vb.items())))
    return min(1.0, dot / (norm_a * norm_b))


def levenshtein(a: str, b: str) -> tuple[int, float]:
    """Unit-cost character edit distance and ``1 - d / max(len)`` similarity."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    distance = prev[-1]
    longest = max(len(a), len(b))
    return distance, (1.0 - distance / longest) if longest else 1.0


def _contains_phrase(tokens: Sequence[str], phrase: Sequence[str]) -> bool:
    n = len(phrase)
    return any(list(tokens[i:i + n]) == list(phrase) for i in range(len(tokens) - n + 1))


def keyword_coverage(answer: str, keywords: Iterable[str]) -> float:
    keywords = set(keywords)
    if not keywords:
        raise EmptyKeywordSet("keyword set is empty")
    tokens = tokenize(answer)
    hits = 0
    for kw in keywords:
        phrase = tokenize(kw)
        if phrase and _contains_phrase(tokens, phrase):
            hits += 1
    return hits / len(keywords)


def deterministic_text_score(student: str, model: str, keywords: Optional[Iterable[str]] = None,
                             max_marks: float = 1.0, step: float = 0.5) -> GradingVerdict:
    if max_marks <= 0:
        raise ValueError("max_marks must be > 0")
    cos = cosine_similarity(student, model)
    keywords = set(keywords or ())
    if keywords:
        cov = keyword_coverage(student, keywords)
        raw = max_marks * (0.6 * cos + 0.4 * cov)
        why = f"cosine similarity {cos:.4f} (weight 0.6), keyword coverage {cov:.4f} (weight 0.4)"
    else:
        raw = max_marks * cos
        why = f"cosine similarity {cos:.4f}"
    score = min(max_marks, round_half(raw, step))
    return GradingVerdict(score, max_marks, f"{why}; raw {raw:.4f} of {max_marks:g}")


# --- labels ------------------------------------------------------------------


def normalize_label(label: str, synonyms: Sequence[Sequence[str]] = DEFAULT_SYNONYMS) -> str:
    value = label.strip().lower()
    for cls in synonyms:
        if value in cls:
            return cls[0]
    return value


# --- graphs ------------------------------------------------------------------


def node_text_similarity(a: str, b: str) -> float:
    """Cosine similarity, except that two blank texts count as identical."""
    if not tokenize(a) and not tokenize(b):
        return 1.0
    return cosine_similarity(a, b)


class _Problem:
    """Precomputed tables for matching the smaller graph into the larger."""

    def __init__(self, small: "FlowGraph", large: "FlowGraph", weights, synonyms):
        self.small, self.large = small, large
        self.wt, self.we, self.wx = weights
        self.n = len(large.nodes)
        self.m = max(len(small.edges), len(large.edges))
        s_idx = {nd.id: i for i, nd in enumerate(small.nodes)}
        l_idx = {nd.id: i for i, nd in enumerate(large.nodes)}
        self.type_eq = [[int(a.kind == b.kind) for b in large.nodes] for a in small.nodes]
        self.text_sim = [[node_text_similarity(a.text, b.text) for b in large.nodes] for a in small.nodes]
        self.small_edges: dict[tuple[int, int], Counter] = {}
        for e in small.edges:
            key = (s_idx[e.source], s_idx[e.target])
            self.small_edges.setdefault(key, Counter())[normalize_label(e.label, synonyms)] += 1
        self.large_edges: dict[tuple[int, int], Counter] = {}
        for e in large.edges:
            key = (l_idx[e.source], l_idx[e.target])
            self.large_edges.setdefault(key, Counter())[normalize_label(e.label, synonyms)] += 1
        # edges of the small graph grouped by the later-assigned endpoint
        self.edges_closing_at: list[list[tuple[int, int, Counter]]] = [[] for _ in small.nodes]
        for (u, v), labels in self.small_edges.items():
            self.edges_closing_at[max(u, v)].append((u, v, labels))

    def preserved(self, u: int, v: int, labels: Counter, fu: int, fv: int) -> int:
        other = self.large_edges.get((fu, fv))
        if not other:
            return 0
        return sum(min(c, other[lab]) for lab, c in labels.items())

    def value(self, types: int, preserved: int, text: float) -> float:
        edge_term = preserved / self.m if self.m else 1.0
        return self.wt * (types / self.n) + self.we * edge_term + self.wx * (text / self.n)

    def evaluate(self, mapping: Sequence[int]) -> tuple[int, int, float]:
        types = sum(self.type_eq[i][j] for i, j in enumerate(mapping))
        text = sum(self.text_sim[i][j] for i, j in enumerate(mapping))
        pres = sum(self.preserved(u, v, labels, mapping[u], mapping[v])
                   for (u, v), labels in self.small_edges.items())
        return types, pres, text


def _exhaustive(p: _Problem) -> tuple[list[int], tuple[int, int, float]]:
    k = len(p.small.nodes)
    node_gain = [[(p.wt * p.type_eq[i][j] + p.wx * p.text_sim[i][j]) / p.n for j in range(p.n)]
                 for i in range(k)]
    row_best = [max(row) for row in node_gain]
    # optimistic node gain still available from position i onwards
    suffix_nodes = [0.0] * (k + 1)
    for i in range(k - 1, -1, -1):
        suffix_nodes[i] = suffix_nodes[i + 1] + row_best[i]
    edge_unit = p.we / p.m if p.m else 0.0
    closing_counts = [sum(sum(lab.values()) for _, _, lab in p.edges_closing_at[i]) for i in range(k)]
    suffix_edges = [0] * (k + 1)
    for i in range(k - 1, -1, -1):
        suffix_edges[i] = suffix_edges[i + 1] + closing_counts[i]

    best_val = -1.0
    best_map: list[int] = []
    best_parts = (0, 0, 0.0)
    mapping = [-1] * k
    used = [False] * p.n

    def dfs(i: int, types: int, pres: int, text: float, gain: float):
        nonlocal best_val, best_map, best_parts
        if i == k:
            val = p.value(types, pres, text)
            if val > best_val + 1e-12:
                best_val, best_map, best_parts = val, mapping.copy(), (types, pres, text)
            return
        if gain + suffix_nodes[i] + edge_unit * suffix_edges[i] <= best_val + 1e-12:
            return
        for j in range(p.n):
            if used[j]:
                continue
            mapping[i] = j
            used[j] = True
            add = sum(p.preserved(u, v, lab, mapping[u], mapping[v]) for u, v, lab in p.edges_closing_at[i])
            dfs(i + 1, types + p.type_eq[i][j], pres + add, text + p.text_sim[i][j],
                gain + node_gain[i][j] + edge_unit * add)
            used[j] = False
        mapping[i] = -1

    # with no edges anywhere the edge term is a constant full credit
    dfs(0, 0, 0, 0.0, 0.0 if p.m else p.we)
    return best_map, best_parts


def _greedy(p: _Problem) -> tuple[list[int], tuple[int, int, float]]:
    k = len(p.small.nodes)
    pairs = sorted(((p.wt * p.type_eq[i][j] + p.wx * p.text_sim[i][j], i, j)
                    for i in range(k) for j in range(p.n)), key=lambda t: (-t[0], t[1], t[2]))
    mapping = [-1] * k
    used: set[int] = set()
    for _, i, j in pairs:
        if mapping[i] < 0 and j not in used:
            mapping[i] = j
            used.add(j)

    current = p.value(*p.evaluate(mapping))
    improved = True
    rounds = 0
    while improved and rounds < 50:
        improved = False
        rounds += 1
        for a in range(k):
            # swap with another small node, or move to a free large node
            candidates = [("swap", b) for b in range(a + 1, k)] + \
                         [("move", j) for j in range(p.n) if j not in used]
            for op, t in candidates:
                trial = mapping.copy()
                if op == "swap":
                    trial[a], trial[t] = trial[t], trial[a]
                else:
                    trial[a] = t
                val = p.value(*p.evaluate(trial))
                if val > current + 1e-12:
                    if op == "move":
                        used.discard(mapping[a])
                        used.add(t)
                    mapping, current, improved = trial, val, True
                    break
    return mapping, p.evaluate(mapping)


def graph_similarity(student: "FlowGraph", model: "FlowGraph",
                     weights: Sequence[float] = DEFAULT_GRAPH_WEIGHTS,
                     synonyms: Sequence[Sequence[str]] = DEFAULT_SYNONYMS,
                     exhaustive_limit: int = 8) -> SimilarityScore:
    """Best node mapping score between two flowcharts.

    For every injective mapping of the smaller node set into the larger one,
    the score is ``w_type * kind_matches / N + w_edge * preserved_edges / M +
    w_text * sum(text similarity) / N`` where ``N`` is the larger node count
    and ``M`` the larger edge count. An edge is preserved when the mapped
    pair is joined in the same direction with a synonym-equal label.
    Matching is exhaustive up to ``exhaustive_limit`` nodes, greedy with
    local repair above it (``approximate=True``).
    """
    weights = tuple(float(w) for w in weights)
    if len(weights) != 3 or any(w < 0 for w in weights) or abs(sum(weights) - 1) > 1e-9:
        raise ValueError("weights must be three non-negative numbers summing to 1")
    if not student.nodes and not model.nodes:
        return SimilarityScore(1.0, {"type": 1.0, "edges": 1.0, "text": 1.0})
    if not student.nodes or not model.nodes:
        return SimilarityScore(0.0, {"type": 0.0, "edges": 0.0, "text": 0.0})

    swapped = len(student.nodes) > len(model.nodes)
    small, large = (model, student) if swapped else (student, model)
    prob = _Problem(small, large, weights, synonyms)
    approximate = len(large.nodes) > exhaustive_limit
    mapping, (types, pres, text) = (_greedy if approximate else _exhaustive)(prob)

    value = min(1.0, max(0.0, prob.value(types, pres, text)))
    components = {
        "type": types / prob.n,
        "edges": pres / prob.m if prob.m else 1.0,
        "text": text / prob.n,
    }
    pairs = {small.nodes[i].id: large.nodes[j].id for i, j in enumerate(mapping)}
    if swapped:
        pairs = {v: k for k, v in pairs.items()}
    return SimilarityScore(value, components, approximate, dict(sorted(pairs.items())))
