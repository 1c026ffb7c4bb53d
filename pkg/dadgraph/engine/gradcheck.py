# dadgraph/engine/gradcheck.py
"""Central finite differences, used as the oracle for ``backward``."""
from __future__ import annotations
import math
from typing import Callable, Dict, Iterable, Mapping, Optional

import numpy as np

from .errors import NonFiniteError
from .numerics import Tensor
from .params import ParamStore


def finite_difference_gradient(
    f: Callable[[ParamStore], float],
    params: ParamStore,
    epsilon: float = 1e-5,
    names: Optional[Iterable[str]] = None,
) -> Dict[str, Tensor]:
    """(f(θ+ε) − f(θ−ε)) / 2ε for every coordinate; parameters are restored afterwards."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    out: Dict[str, Tensor] = {}
    for name in (list(names) if names is not None else list(params)):
        p = params[name]
        flat = p.values.reshape(-1)
        grad = np.zeros(flat.size)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            hi = float(f(params))
            flat[k] = orig - epsilon
            lo = float(f(params))
            flat[k] = orig
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise NonFiniteError(f"objective is not finite around {name}[{k}]")
            grad[k] = (hi - lo) / (2.0 * epsilon)
        out[name] = Tensor(grad.reshape(p.shape))
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(float(np.linalg.norm(a) + np.linalg.norm(n)), floor)
    return float(np.linalg.norm(a - n)) / denom


def max_relative_error(analytic: Mapping[str, Tensor], numeric: Mapping[str, Tensor]) -> Dict[str, float]:
    return {name: relative_error(analytic[name].values, numeric[name].values) for name in numeric}
