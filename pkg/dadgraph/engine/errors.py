# dadgraph/engine/errors.py
from __future__ import annotations
from typing import List, Optional, Sequence


class DadgraphError(Exception):
    """Base class for every error raised by the engine."""


# --- numerics ---
class ShapeError(DadgraphError):
    pass


class UnknownOpError(DadgraphError):
    pass


class TapeError(DadgraphError):
    pass


class NonFiniteError(DadgraphError):
    pass


class OptimizerError(DadgraphError):
    pass


# --- corpus ---
class CorpusError(DadgraphError):
    pass


class CorpusSyntaxError(CorpusError):
    def __init__(self, path: str, line: int, column: int, msg: str) -> None:
        self.path, self.line, self.column = path, line, column
        super().__init__(f"{path}:{line}:{column}: syntax error: {msg}")


class SchemaViolation(CorpusError):
    def __init__(self, field_path: str, msg: str) -> None:
        self.field_path = field_path
        super().__init__(f"schema violation at {field_path or '<root>'}: {msg}")


class CorpusValidationError(CorpusError):
    """All issues found while validating a corpus, grouped by dialogue id."""

    def __init__(self, issues: Sequence[tuple[str, str]]) -> None:
        self.issues: List[tuple[str, str]] = list(issues)
        lines = [f"dialogue {did}: {msg}" for did, msg in self.issues]
        super().__init__(f"{len(self.issues)} corpus issue(s)\n" + "\n".join(lines))


class AlignmentError(CorpusError):
    pass


class VocabularyError(DadgraphError):
    pass


# --- graph / model ---
class GraphError(DadgraphError):
    pass


class EmbeddingError(DadgraphError):
    pass


class ConfigError(DadgraphError):
    pass


class CheckpointError(DadgraphError):
    def __init__(self, msg: str, path: Optional[str] = None) -> None:
        self.path = path
        super().__init__(f"{path}: {msg}" if path else msg)
