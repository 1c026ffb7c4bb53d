# dadgraph/engine/checkpoint.py
"""
Binary checkpoints. All integers little-endian:

    b"DADG" | version u32 | seed u64 | meta_len u32 | meta (UTF-8 JSON)
    n_params u32 | per parameter, ascending name order:
        name_len u16 | name | ndim u8 | dims u32 x ndim | values f64 x prod(dims)
    crc32 u32 over every preceding byte
"""
from __future__ import annotations
import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from .errors import CheckpointError
from .params import ParamStore

logger = logging.getLogger(__name__)

MAGIC = b"DADG"
VERSION = 1


@dataclass
class Checkpoint:
    config: Dict[str, Any]
    vocab: List[str]
    params: ParamStore
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.params.seed

    def to_bytes(self) -> bytes:
        meta = json.dumps({"config": self.config, "vocab": self.vocab, "extra": self.extra},
                          sort_keys=True, ensure_ascii=False).encode("utf-8")
        parts = [MAGIC, struct.pack("<IQI", VERSION, self.params.seed & 0xFFFFFFFFFFFFFFFF, len(meta)), meta,
                 struct.pack("<I", len(self.params))]
        for name, t in self.params.items():
            raw = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw)
            parts.append(struct.pack(f"<B{t.values.ndim}I", t.values.ndim, *t.shape))
            parts.append(np.ascontiguousarray(t.values, dtype="<f8").tobytes())
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes, path: str | None = None) -> "Checkpoint":
        def fail(msg: str) -> CheckpointError:
            return CheckpointError(msg, path)

        if len(data) < 4 + 16 + 4 + 4:
            raise fail("file too short to be a checkpoint")
        if data[:4] != MAGIC:
            raise fail(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
        version, seed, meta_len = struct.unpack_from("<IQI", data, 4)
        if version != VERSION:
            raise fail(f"unsupported checkpoint version {version}, expected {VERSION}")
        (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
        if zlib.crc32(data[:-4]) != stored_crc:
            raise fail("CRC mismatch, file is corrupted")

        body = memoryview(data)[:-4]
        pos = 20
        try:
            meta = json.loads(bytes(body[pos:pos + meta_len]).decode("utf-8"))
            if not isinstance(meta, dict):
                raise fail("metadata is not a JSON object")
            config, vocab, extra = meta["config"], list(meta["vocab"]), dict(meta.get("extra", {}))
            pos += meta_len
            (n_params,) = struct.unpack_from("<I", body, pos)
            pos += 4
            store = ParamStore(seed)
            for _ in range(n_params):
                (name_len,) = struct.unpack_from("<H", body, pos)
                pos += 2
                name = bytes(body[pos:pos + name_len]).decode("utf-8")
                pos += name_len
                (ndim,) = struct.unpack_from("<B", body, pos)
                pos += 1
                dims = struct.unpack_from(f"<{ndim}I", body, pos)
                pos += 4 * ndim
                count = int(np.prod(dims))
                if pos + 8 * count > len(body):
                    raise fail(f"parameter {name!r} runs past the end of the file")
                values = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(dims)
                pos += 8 * count
                store.add(name, values.astype(np.float64))
        except KeyError as e:
            raise fail(f"metadata is missing {e}") from e
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError, TypeError, ValueError) as e:
            raise fail(f"malformed checkpoint: {e}") from e
        if pos != len(body):
            raise fail(f"{len(body) - pos} trailing bytes before the CRC")
        return cls(config, vocab, store, extra)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = self.to_bytes()
        path.write_bytes(data)
        logger.info("wrote checkpoint %s (%d bytes, %d tensors)", path, len(data), len(self.params))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as e:
            raise CheckpointError(f"cannot read checkpoint: {e}", str(path)) from e
        return cls.from_bytes(data, str(path))
