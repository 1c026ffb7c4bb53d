# dadgraph/engine/mrc_head.py
"""
Reading-comprehension head: word/utterance attention, question fusion, span scoring and
answer decoding.

Token position 0 of every context is the sentinel; its logits stand for the no-answer option.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .corpus import FlattenedContext
from .errors import ShapeError
from .numerics import Tape, Tensor
from .params import ParamStore

NA_VECTORS = ("sentinel", "mean")


@dataclass(frozen=True)
class MrcParams:
    S: Tensor
    E: Tensor
    tau: float = 0.0
    max_answer_len: int = 30

    def __post_init__(self) -> None:
        if self.S.shape != self.E.shape or len(self.S.shape) != 1:
            raise ShapeError(f"S and E must be vectors of one length, got {self.S.shape} and {self.E.shape}")
        if self.max_answer_len < 1:
            raise ShapeError(f"max_answer_len must be >= 1, got {self.max_answer_len}")

    @property
    def hidden(self) -> int:
        return self.S.shape[0]

    @classmethod
    def create(cls, store: ParamStore, hidden: int, tau: float = 0.0, max_answer_len: int = 30) -> "MrcParams":
        store.matrix("mrc.S", (hidden,))
        store.matrix("mrc.E", (hidden,))
        return cls.from_store(store, tau, max_answer_len)

    @classmethod
    def from_store(cls, store: ParamStore, tau: float = 0.0, max_answer_len: int = 30) -> "MrcParams":
        return cls(store["mrc.S"], store["mrc.E"], tau, max_answer_len)


@dataclass(frozen=True)
class WordFeatures:
    """Per-token matrices, sentinel row included: w (embeddings), f (attention mix), c (question-aware), t."""

    w: Tensor
    f: Tensor
    c: Tensor
    t: Tensor


def attention_fuse(tape: Tape, H: Tensor, W: Tensor) -> Tensor:
    """f_p = sum_i softmax_i(h_i . w_p) h_i, normalised over utterances for each word."""
    if W.shape[1] != H.shape[1]:
        raise ShapeError(f"word dimension {W.shape[1]} does not match utterance dimension {H.shape[1]}")
    alpha = tape.softmax(tape.matmul(W, tape.transpose(H)), axis=1)  # (P, N)
    return tape.matmul(alpha, H)


def question_fuse(tape: Tape, F: Tensor, q: Tensor) -> Tensor:
    """c_p = f_p * q (element-wise); ``q`` is a 1 x d row."""
    if q.shape != (1, F.shape[1]):
        raise ShapeError(f"question vector {q.shape} does not match word features of width {F.shape[1]}")
    tiled = tape.matmul(tape.constant(np.ones((F.shape[0], 1))), q)
    return tape.mul(F, tiled)


def fuse_concat(tape: Tape, W: Tensor, C: Tensor) -> Tensor:
    if W.shape[0] != C.shape[0]:
        raise ShapeError(f"word lists differ in length: {W.shape[0]} vs {C.shape[0]}")
    return tape.concat(W, C, axis=1)


@dataclass(frozen=True)
class SpanScores:
    """Start/end logits over T+1 positions; position 0 is the no-answer slot."""

    start: Tensor
    end: Tensor

    @property
    def s_na(self) -> float:
        return float(self.start.values[0] + self.end.values[0])


def score_spans(tape: Tape, T: Tensor, p: MrcParams, na_vector: str = "sentinel") -> SpanScores:
    P = T.shape[0]
    if P < 2:
        raise ShapeError("scoring needs at least one token besides the sentinel")
    if T.shape[1] != p.hidden:
        raise ShapeError(f"fused width {T.shape[1]} does not match S/E length {p.hidden}")
    S = tape.reshape(p.S, (p.hidden, 1))
    E = tape.reshape(p.E, (p.hidden, 1))
    start = tape.reshape(tape.matmul(T, S), (P,))
    end = tape.reshape(tape.matmul(T, E), (P,))
    if na_vector == "sentinel":
        return SpanScores(start, end)
    if na_vector != "mean":
        raise ShapeError(f"unknown no-answer vector {na_vector!r}, expected one of {NA_VECTORS}")
    # C = mean of the real token rows replaces the sentinel slot
    words = list(range(1, P))
    C = tape.matmul(tape.constant(np.full((1, P - 1), 1.0 / (P - 1))), tape.take(T, words))
    start = tape.concat(tape.reshape(tape.matmul(C, S), (1,)), tape.take(start, words))
    end = tape.concat(tape.reshape(tape.matmul(C, E), (1,)), tape.take(end, words))
    return SpanScores(start, end)


def best_span(start: np.ndarray, end: np.ndarray, max_answer_len: int) -> Tuple[float, int, int]:
    """
    Highest start[i] + end[j] over 1 <= i <= j, j - i < max_answer_len.

    Ties go to the smallest i, then the smallest j (row-major argmax).
    """
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    if start.shape != end.shape or start.ndim != 1 or start.size < 2:
        raise ShapeError(f"logit vectors must be 1-D of equal length >= 2, got {start.shape} and {end.shape}")
    n = start.size - 1
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    scores = np.where((j >= i) & (j - i < max_answer_len), start[1:, None] + end[None, 1:], -np.inf)
    flat = int(np.argmax(scores))
    bi, bj = divmod(flat, n)
    return float(scores[bi, bj]), bi + 1, bj + 1


@dataclass(frozen=True)
class Span:
    start_token: int
    end_token: int
    char_start: int
    char_end: int
    text: str


@dataclass(frozen=True)
class Prediction:
    """The best span is always kept so the no-answer decision can be re-taken for another tau."""

    question_id: str
    best: Span
    s_best: float
    s_na: float
    answerable: bool

    @property
    def span(self) -> Optional[Span]:
        return self.best if self.answerable else None

    @property
    def is_na(self) -> bool:
        return not self.answerable

    @property
    def text(self) -> str:
        return self.best.text if self.answerable else ""

    def sidecar(self) -> Dict[str, Any]:
        return {"s_best": self.s_best, "s_NA": self.s_na, "start": self.best.start_token, "end": self.best.end_token,
                "char_start": self.best.char_start, "char_end": self.best.char_end, "text": self.best.text}


def decide(s_best: float, s_na: float, tau: float) -> bool:
    """True when the best span beats the no-answer score by more than tau."""
    return s_best > s_na + tau


def decode(start: np.ndarray, end: np.ndarray, s_na: float, p: MrcParams, ctx: FlattenedContext,
           question_id: str = "", tau: Optional[float] = None) -> Prediction:
    tau = p.tau if tau is None else tau
    s_best, i, j = best_span(start, end, p.max_answer_len)
    cs, ce = ctx.tokens[i].char_start, ctx.tokens[j].char_end
    best = Span(i, j, cs, ce, ctx.span_text(i, j))
    return Prediction(question_id, best, s_best, float(s_na), decide(s_best, s_na, tau))
