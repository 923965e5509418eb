"""Exception types and the diagnostic record shared across the pipeline."""

from __future__ import annotations

from dataclasses import dataclass


class FlowgradeError(Exception):
    """Base class for all errors raised by flowgrade."""


class InputError(FlowgradeError):
    """Bad user-supplied input. The CLI maps these to exit code 1."""


class SchemaError(InputError):
    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class VersionError(InputError):
    pass


class DegenerateBlock(FlowgradeError, ValueError):
    pass


class EmptyDiagram(FlowgradeError, ValueError):
    pass


class EmptyKeywordSet(FlowgradeError, ValueError):
    pass


class NoVerdicts(FlowgradeError, ValueError):
    pass


class UnparsableVerdict(FlowgradeError):
    def __init__(self, raw: str):
        self.raw = raw
        preview = raw if len(raw) <= 80 else raw[:77] + "..."
        super().__init__(f"could not extract a score from reply: {preview!r}")


class BackendUnavailable(FlowgradeError):
    def __init__(self, message: str, attempts: int = 0):
        self.attempts = attempts
        super().__init__(message)


@dataclass(frozen=True)
class Diagnostic:
    """A non-fatal finding. ``code`` is a stable CamelCase identifier."""

    code: str
    message: str = ""

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message}

    def __str__(self) -> str:
        return f"{self.code}: {self.message}" if self.message else self.code
