"""Runtime configuration.

The on-disk format is INI (``configparser``)::

    [ingest]
    density_threshold = 0.5
    low_confidence = 0.35
    anchor_policy = regex

    [flowgraph]
    iou_threshold = 0.7
    epsilon = 12

    [scoring]
    type_weight = 0.3
    edge_weight = 0.4
    text_weight = 0.3

    [synonyms]
    yes = true, y, t
    no = false, n, f

    [aggregate]
    text_weight = 0.6
    diagram_weight = 0.4
    expectation_band = 0.5

    [backend]
    kind = mock
    endpoint = http://localhost:8000/v1

Each key under ``[synonyms]`` is the canonical label of one synonym class.
Any omitted key keeps its default.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .errors import InputError

DEFAULT_SYNONYMS: tuple[tuple[str, ...], ...] = (
    ("yes", "true", "y", "t"),
    ("no", "false", "n", "f"),
)

ENV_ENDPOINT = "FLOWGRADE_LLM_ENDPOINT"
ENV_API_KEY = "FLOWGRADE_LLM_API_KEY"
ENV_MODEL = "FLOWGRADE_LLM_MODEL"


@dataclass(frozen=True)
class IngestConfig:
    density_threshold: float = 0.5
    low_confidence: float = 0.35
    anchor_policy: str = "regex"  # "regex" or "manifest"

    def __post_init__(self):
        if self.anchor_policy not in ("regex", "manifest"):
            raise ValueError(f"anchor_policy must be 'regex' or 'manifest', got {self.anchor_policy!r}")
        if not 0 <= self.density_threshold <= 1 or not 0 <= self.low_confidence <= 1:
            raise ValueError("density_threshold and low_confidence must lie in [0, 1]")


@dataclass(frozen=True)
class GraphConfig:
    iou_threshold: float = 0.7
    epsilon: float = 12.0
    # an arrowhead further than this from both arrow ends is ignored
    head_radius: float = 36.0

    def __post_init__(self):
        if not 0 < self.iou_threshold <= 1:
            raise ValueError("iou_threshold must be in (0, 1]")
        if self.epsilon <= 0 or self.head_radius <= 0:
            raise ValueError("epsilon and head_radius must be > 0")


@dataclass(frozen=True)
class ScoringConfig:
    type_weight: float = 0.3
    edge_weight: float = 0.4
    text_weight: float = 0.3
    exhaustive_limit: int = 8
    rounding_step: float = 0.5
    synonyms: tuple[tuple[str, ...], ...] = DEFAULT_SYNONYMS

    def __post_init__(self):
        w = self.graph_weights
        if any(x < 0 for x in w) or abs(sum(w) - 1) > 1e-9:
            raise ValueError("type_weight, edge_weight and text_weight must be >= 0 and sum to 1")
        if self.rounding_step <= 0:
            raise ValueError("rounding_step must be > 0")
        if self.exhaustive_limit < 0:
            raise ValueError("exhaustive_limit must be >= 0")

    @property
    def graph_weights(self) -> tuple[float, float, float]:
        return (self.type_weight, self.edge_weight, self.text_weight)


@dataclass(frozen=True)
class AggregateConfig:
    text_weight: float = 0.6
    diagram_weight: float = 0.4
    expectation_band: float = 0.5

    def __post_init__(self):
        if self.text_weight < 0 or self.diagram_weight < 0 or abs(self.text_weight + self.diagram_weight - 1) > 1e-9:
            raise ValueError("text_weight and diagram_weight must be >= 0 and sum to 1")
        if self.expectation_band < 0:
            raise ValueError("expectation_band must be >= 0")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"  # "mock" or "http"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = ENV_API_KEY
    timeout: float = 60.0
    max_retries: int = 2
    temperature: float = 0.0
    parallelism: int = 4
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    # directory holding text.txt / diagram.txt overrides; empty = bundled templates
    prompt_dir: str = ""

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ValueError(f"backend kind must be 'mock' or 'http', got {self.kind!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    @property
    def name(self) -> str:
        return "mock" if self.kind == "mock" else f"http:{self.model or 'default'}"

    @classmethod
    def from_env(cls, base: Optional["BackendConfig"] = None, **overrides) -> "BackendConfig":
        """Fill endpoint and model from ``FLOWGRADE_LLM_*`` when not set."""
        base = base or cls()
        values = dataclasses.asdict(base)
        if not values["endpoint"]:
            values["endpoint"] = os.environ.get(ENV_ENDPOINT, "")
        if not values["model"]:
            values["model"] = os.environ.get(ENV_MODEL, "")
        values.update(overrides)
        return cls(**values)

    def api_key(self) -> Optional[str]:
        return os.environ.get(self.api_key_env) or None


@dataclass(frozen=True)
class Config:
    ingest: IngestConfig = field(default_factory=IngestConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    aggregate: AggregateConfig = field(default_factory=AggregateConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Short stable hash of the grading-relevant settings."""
        data = self.to_dict()
        # endpoint credentials and transport tuning do not change grades
        data["backend"] = {"kind": self.backend.kind, "model": self.backend.model,
                           "temperature": self.backend.temperature}
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def replace_backend(self, **changes) -> "Config":
        return dataclasses.replace(self, backend=dataclasses.replace(self.backend, **changes))


_SECTIONS = {
    "ingest": IngestConfig,
    "flowgraph": GraphConfig,
    "scoring": ScoringConfig,
    "aggregate": AggregateConfig,
    "backend": BackendConfig,
}
_ATTRS = {"ingest": "ingest", "flowgraph": "graph", "scoring": "scoring",
          "aggregate": "aggregate", "backend": "backend"}


def _coerce(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise InputError(f"config [{section}] {key}: cannot parse {raw!r}") from None
    return raw.strip()


def parse_config(text: str) -> Config:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InputError(f"config: {exc}") from None

    unknown = set(parser.sections()) - set(_SECTIONS) - {"synonyms"}
    if unknown:
        raise InputError(f"config: unknown section(s) {', '.join(sorted(unknown))}")
    parts: dict[str, object] = {}
    for section, cls in _SECTIONS.items():
        defaults = cls()
        known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(cls)}
        values = {}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                if key not in known or key == "synonyms":
                    raise InputError(f"config [{section}]: unknown key {key!r}")
                values[key] = _coerce(section, key, raw, known[key])
        if section == "scoring" and parser.has_section("synonyms"):
            classes = []
            for canonical, members in parser.items("synonyms"):
                extra = [m.strip().lower() for m in members.split(",") if m.strip()]
                classes.append((canonical.strip().lower(), *extra))
            values["synonyms"] = tuple(classes)
        try:
            parts[_ATTRS[section]] = cls(**values)
        except ValueError as exc:
            raise InputError(f"config [{section}]: {exc}") from None
    return Config(**parts)


def load_config(path: Union[str, Path, None]) -> Config:
    if path is None:
        return Config()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
