"""Axis-aligned boxes, detector primitives and the plane geometry used on them.

Coordinates are page pixels with the origin at the top-left corner and y
growing downwards. Boxes are stored as ``(x, y, w, h)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

Point = tuple[float, float]


@dataclass(frozen=True, order=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value!r}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return cls(x1, y1, max(0.0, x2 - x1), max(0.0, y2 - y1))

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> Point:
        return (self.x + self.w / 2, self.y + self.h / 2)

    def contains(self, point: Point) -> bool:
        px, py = point
        return self.x <= px <= self.x2 and self.y <= py <= self.y2

    def intersection(self, other: "BoundingBox") -> Optional["BoundingBox"]:
        x1, y1 = max(self.x, other.x), max(self.y, other.y)
        x2, y2 = min(self.x2, other.x2), min(self.y2, other.y2)
        if x2 <= x1 or y2 <= y1:
            return None
        return BoundingBox.from_corners(x1, y1, x2, y2)

    def union(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox.from_corners(
            min(self.x, other.x), min(self.y, other.y),
            max(self.x2, other.x2), max(self.y2, other.y2),
        )

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}


def bbox_union(boxes: Iterable[BoundingBox]) -> BoundingBox:
    """Smallest box covering every box in ``boxes`` (must be non-empty)."""
    it = iter(boxes)
    try:
        acc = next(it)
    except StopIteration:
        raise ValueError("bbox_union of an empty sequence") from None
    for box in it:
        acc = acc.union(box)
    return acc


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = a.intersection(b)
    if inter is None:
        return 0.0
    union = a.area + b.area - inter.area
    return min(1.0, inter.area / union) if union > 0 else 0.0


def union_area(boxes: Sequence[BoundingBox]) -> float:
    """Exact area covered by the union of ``boxes``.

    Sweeps vertical slabs between consecutive distinct x edges and merges the
    y-intervals of the boxes spanning each slab, so overlaps count once.
    """
    boxes = [b for b in boxes if b.w > 0 and b.h > 0]
    if not boxes:
        return 0.0
    xs = sorted({b.x for b in boxes} | {b.x2 for b in boxes})
    total = 0.0
    for left, right in zip(xs, xs[1:]):
        spans = sorted((b.y, b.y2) for b in boxes if b.x <= left and b.x2 >= right)
        if not spans:
            continue
        covered = 0.0
        cur_lo, cur_hi = spans[0]
        for lo, hi in spans[1:]:
            if lo > cur_hi:
                covered += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            elif hi > cur_hi:
                cur_hi = hi
        covered += cur_hi - cur_lo
        total += covered * (right - left)
    return total


def point_to_rect_distance(point: Point, box: BoundingBox) -> float:
    """Euclidean distance from ``point`` to the filled rectangle (0 inside)."""
    px, py = point
    dx = max(box.x - px, 0.0, px - box.x2)
    dy = max(box.y - py, 0.0, py - box.y2)
    return math.hypot(dx, dy)


def point_to_boundary_distance(point: Point, box: BoundingBox) -> float:
    """Distance from ``point`` to the rectangle's outline."""
    if not box.contains(point):
        return point_to_rect_distance(point, box)
    px, py = point
    return min(px - box.x, box.x2 - px, py - box.y, box.y2 - py)


def point_to_segment_distance(point: Point, a: Point, b: Point) -> float:
    px, py = point
    ax, ay = a
    bx, by = b
    vx, vy = bx - ax, by - ay
    length_sq = vx * vx + vy * vy
    if length_sq == 0:
        return math.hypot(px - ax, py - ay)
    t = max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / length_sq))
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def point_to_polyline_distance(point: Point, polyline: Sequence[Point]) -> float:
    if len(polyline) == 1:
        return math.dist(point, polyline[0])
    return min(point_to_segment_distance(point, a, b) for a, b in zip(polyline, polyline[1:]))


@dataclass(frozen=True)
class TextFragment:
    """A recognized word (or short phrase) with its box and OCR confidence."""

    bbox: BoundingBox
    text: str
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence!r}")


class PrimitiveClass(str, enum.Enum):
    TERMINATOR = "terminator"
    PROCESS = "process"
    DECISION = "decision"
    ARROW = "arrow"
    ARROWHEAD = "arrowhead"
    TEXT = "text"

    @property
    def is_block(self) -> bool:
        return self in (PrimitiveClass.TERMINATOR, PrimitiveClass.PROCESS, PrimitiveClass.DECISION)


@dataclass(frozen=True)
class Primitive:
    """One detector output inside a diagram region."""

    id: str
    cls: PrimitiveClass
    bbox: BoundingBox
    confidence: float = 1.0
    polyline: Optional[tuple[Point, ...]] = field(default=None)

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence!r}")
        if self.cls is PrimitiveClass.ARROW:
            if self.polyline is None or len(self.polyline) < 2:
                raise ValueError(f"arrow {self.id!r} needs a polyline with at least 2 points")
        elif self.polyline is not None:
            raise ValueError(f"only arrows carry a polyline ({self.id!r} is {self.cls.value})")
