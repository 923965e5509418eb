"""flowgrade: flowchart reconstruction and multimodal answer-sheet grading."""

__version__ = "0.1.0"

from .config import Config, load_config  # noqa: E402
from .flowgraph import FlowGraph, build_graph, parse_canonical, serialize  # noqa: E402
from .pipeline import Report, aggregate, evaluate_sheet  # noqa: E402

__all__ = [
    "Config", "FlowGraph", "Report", "__version__", "aggregate", "build_graph",
    "evaluate_sheet", "load_config", "parse_canonical", "serialize",
]
