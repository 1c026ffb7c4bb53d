# dadgraph/engine/contracts.py
from __future__ import annotations
import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict

import jsonschema

from .errors import SchemaViolation

CONTRACTS_DIR = Path(__file__).resolve().parent.parent / "contracts"


@lru_cache(maxsize=None)
def load_schema(schema_file: str) -> Dict[str, Any]:
    p = CONTRACTS_DIR / schema_file
    return json.loads(p.read_text(encoding="utf-8"))


def field_path(path: Any) -> str:
    """jsonschema's deque path as ``dialogues[0].links[2].head``."""
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out


def validate(obj: Any, schema_file: str, prefix: str = "") -> None:
    """Raise SchemaViolation for jsonschema's most relevant error, with its field path."""
    validator = jsonschema.Draft202012Validator(load_schema(schema_file))
    error = jsonschema.exceptions.best_match(validator.iter_errors(obj))
    if error is not None:
        raise SchemaViolation(prefix + field_path(error.absolute_path), error.message)
