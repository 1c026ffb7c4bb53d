# dadgraph/engine/params.py
from __future__ import annotations
import zlib
from typing import Dict, Iterator, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .numerics import Tensor


def _rng_for(seed: int, name: str) -> np.random.Generator:
    # initialisation depends only on (seed, name, shape)
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8"))]))


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class ParamStore:
    """Named trainable tensors. Single owner while training, read-only afterwards."""

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        self._params: Dict[str, Tensor] = {}

    # --- creation ---
    def _register(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(values, grad_required=True, name=name)
        self._params[name] = t
        return t

    def matrix(self, name: str, shape: Sequence[int]) -> Tensor:
        """Glorot-uniform matrix; vectors use (n, 1) fan."""
        shape = tuple(int(d) for d in shape)
        if len(shape) == 1:
            fan_in, fan_out = shape[0], 1
        elif len(shape) == 2:
            fan_in, fan_out = shape
        else:
            raise ShapeError(f"{name}: only vectors and matrices are supported, got {shape}")
        bound = glorot_bound(fan_in, fan_out)
        return self._register(name, _rng_for(self.seed, name).uniform(-bound, bound, size=shape))

    def bias(self, name: str, size: int) -> Tensor:
        return self._register(name, np.zeros(int(size)))

    def add(self, name: str, values: np.ndarray) -> Tensor:
        return self._register(name, np.asarray(values, dtype=np.float64))

    # --- mapping protocol ---
    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        for name in sorted(self._params):
            yield name, self._params[name]

    def as_dict(self) -> Dict[str, Tensor]:
        return dict(self.items())

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in sorted(self._params) if n.startswith(prefix)]

    def count(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    # --- copies ---
    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.items()}

    def restore(self, values: Dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            t = self._params[name]
            if t.shape != arr.shape:
                raise ShapeError(f"{name}: expected shape {t.shape}, got {arr.shape}")
            t.values[...] = arr

    def copy(self) -> "ParamStore":
        out = ParamStore(self.seed)
        for name, t in self.items():
            out.add(name, t.values.copy())
        return out

    def identical(self, other: "ParamStore") -> bool:
        """Bit-level equality of names, shapes and values."""
        if self.seed != other.seed or list(self) != list(other):
            return False
        return all(self[n].shape == other[n].shape and self[n].values.tobytes() == other[n].values.tobytes()
                   for n in self)
