# dadgraph/engine/logging_io.py
from __future__ import annotations
from pathlib import Path
from typing import Any, Dict, List
import json
import logging
import time

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | int = "INFO") -> None:
    logging.basicConfig(level=level if isinstance(level, int) else level.upper(), format=LOG_FORMAT, force=True)


def init_run_dir(root: Path, label: str = "") -> Path:
    root.mkdir(parents=True, exist_ok=True)
    ts = time.strftime("%Y%m%d-%H%M%S")
    base = f"{ts}-{label}" if label else ts
    d = root / base
    n = 1
    while d.exists():  # two runs in the same second
        n += 1
        d = root / f"{base}-{n}"
    d.mkdir(parents=True)
    return d


def write_jsonl(path: Path, obj: Dict[str, Any]) -> None:
    with path.open("a", encoding="utf-8") as f:
        f.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8")


def read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def read_jsonl(path: Path) -> List[Dict[str, Any]]:
    """Records of a JSON-lines file; blank lines are skipped."""
    out: List[Dict[str, Any]] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out
