# dadgraph/engine/optim.py
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import OptimizerError, ShapeError
from .numerics import Tensor
from .params import ParamStore

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8
ALGORITHMS = ("sgd", "adam")


@dataclass
class OptimizerState:
    algorithm: str = "adam"
    lr: float = 1e-3
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise OptimizerError(f"unknown optimizer {self.algorithm!r}, expected one of {ALGORITHMS}")
        if not self.lr > 0:
            raise OptimizerError(f"learning rate must be positive, got {self.lr}")


def optimizer_step(state: OptimizerState, params: ParamStore, grads: Mapping[str, Tensor]) -> Tuple[ParamStore, OptimizerState]:
    """Update every parameter in place and advance the step counter."""
    for name, p in params.items():
        if name not in grads:
            raise OptimizerError(f"missing gradient for parameter {name!r}")
        if grads[name].shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {grads[name].shape}, parameter has {p.shape}")

    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name].values
        if state.algorithm == "sgd":
            p.values -= state.lr * g
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            v = state.v[name] = np.zeros(p.shape)
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2  # type: ignore[operator]
        v += (1.0 - BETA2) * g * g  # type: ignore[operator]
        m_hat = m / (1.0 - BETA1 ** t)
        v_hat = v / (1.0 - BETA2 ** t)
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params, state
