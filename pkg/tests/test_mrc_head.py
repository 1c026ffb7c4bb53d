from __future__ import annotations

import itertools

import numpy as np
import pytest

from dadgraph.engine.corpus import flatten_dialogue
from dadgraph.engine.errors import ShapeError
from dadgraph.engine.gradcheck import finite_difference_gradient, max_relative_error
from dadgraph.engine.mrc_head import (
    MrcParams,
    attention_fuse,
    best_span,
    decide,
    decode,
    fuse_concat,
    question_fuse,
    score_spans,
)
from dadgraph.engine.numerics import Tape, Tensor, backward
from dadgraph.engine.params import ParamStore

from helpers import make_dialogue, store_of

COMPOSITE_TOLERANCE = 1e-4


def _gradcheck(objective, store: ParamStore) -> None:
    tape = Tape()
    analytic = backward(tape, objective(tape, store), store.as_dict())
    numeric = finite_difference_gradient(lambda s: objective(Tape(), s).item(), store)
    errors = max_relative_error(analytic, numeric)
    assert max(errors.values()) <= COMPOSITE_TOLERANCE, errors


def _oracle(start: np.ndarray, end: np.ndarray, max_len: int):
    best = None
    for i, j in itertools.product(range(1, start.size), repeat=2):
        if i <= j and j - i < max_len:
            s = start[i] + end[j]
            if best is None or s > best[0]:
                best = (s, i, j)
    return best


def _params(hidden: int, tau: float = 0.0, max_answer_len: int = 30) -> MrcParams:
    return MrcParams(Tensor(np.zeros(hidden)), Tensor(np.zeros(hidden)), tau, max_answer_len)


# ---------------------------------------------------------------------------
# attention and fusion
# ---------------------------------------------------------------------------

def test_single_utterance_attention_copies_it(rng: np.random.Generator) -> None:
    H = rng.normal(size=(1, 4))
    F = attention_fuse(Tape(), Tensor(H), Tensor(rng.normal(size=(5, 4))))
    np.testing.assert_allclose(F.values, np.repeat(H, 5, axis=0), rtol=0, atol=1e-12)


def test_orthogonal_words_attend_uniformly(rng: np.random.Generator) -> None:
    H = rng.normal(size=(3, 2))
    F = attention_fuse(Tape(), Tensor(H), Tensor(np.zeros((2, 2))))
    np.testing.assert_allclose(F.values, np.tile(H.mean(axis=0), (2, 1)), rtol=0, atol=1e-12)


def test_attention_matches_brute_force(rng: np.random.Generator) -> None:
    H, W = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    F = attention_fuse(Tape(), Tensor(H), Tensor(W)).values
    for p in range(5):
        logits = H @ W[p]
        alpha = np.exp(logits - logits.max())
        alpha /= alpha.sum()
        np.testing.assert_allclose(F[p], alpha @ H, rtol=0, atol=1e-12)
    with pytest.raises(ShapeError):
        attention_fuse(Tape(), Tensor(H), Tensor(np.ones((5, 3))))


def test_attention_gradient(rng: np.random.Generator) -> None:
    store = store_of(H=rng.normal(size=(3, 4)), W=rng.normal(size=(5, 4)))
    weights = rng.normal(size=(5, 4))
    _gradcheck(lambda t, s: t.sum(t.mul(attention_fuse(t, s["H"], s["W"]), t.constant(weights))), store)


def test_question_fuse(rng: np.random.Generator) -> None:
    F = rng.normal(size=(4, 3))
    ones = question_fuse(Tape(), Tensor(F), Tensor(np.ones((1, 3)))).values
    zeros = question_fuse(Tape(), Tensor(F), Tensor(np.zeros((1, 3)))).values
    np.testing.assert_array_equal(ones, F)
    np.testing.assert_array_equal(zeros, np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        question_fuse(Tape(), Tensor(F), Tensor(np.ones((1, 2))))

    store = store_of(F=F, q=rng.normal(size=(1, 3)))
    weights = rng.normal(size=(4, 3))
    _gradcheck(lambda t, s: t.sum(t.mul(question_fuse(t, s["F"], s["q"]), t.constant(weights))), store)


def test_fuse_concat_keeps_both_halves(rng: np.random.Generator) -> None:
    W, C = rng.normal(size=(4, 2)), rng.normal(size=(4, 3))
    T = fuse_concat(Tape(), Tensor(W), Tensor(C)).values
    assert T.shape == (4, 5)
    np.testing.assert_array_equal(T[:, :2], W)
    np.testing.assert_array_equal(T[:, 2:], C)
    with pytest.raises(ShapeError):
        fuse_concat(Tape(), Tensor(W), Tensor(C[:3]))


# ---------------------------------------------------------------------------
# span scoring
# ---------------------------------------------------------------------------

def test_zero_weights_give_zero_logits(rng: np.random.Generator) -> None:
    scores = score_spans(Tape(), Tensor(rng.normal(size=(5, 4))), _params(4))
    np.testing.assert_array_equal(scores.start.values, np.zeros(5))
    np.testing.assert_array_equal(scores.end.values, np.zeros(5))
    assert scores.s_na == 0.0


def test_three_token_hand_example() -> None:
    T = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    p = MrcParams(Tensor([2.0, 0.0]), Tensor([0.0, 3.0]))
    scores = score_spans(Tape(), Tensor(T), p)
    np.testing.assert_array_equal(scores.start.values, [0.0, 2.0, 0.0, 2.0])
    np.testing.assert_array_equal(scores.end.values, [0.0, 0.0, 3.0, 3.0])
    assert best_span(scores.start.values, scores.end.values, 30) == (5.0, 1, 2)


def test_mean_no_answer_vector() -> None:
    T = np.array([[9.0, 9.0], [1.0, 0.0], [3.0, 2.0]])
    p = MrcParams(Tensor([1.0, 0.0]), Tensor([0.0, 1.0]))
    scores = score_spans(Tape(), Tensor(T), p, na_vector="mean")
    np.testing.assert_array_equal(scores.start.values, [2.0, 1.0, 3.0])
    np.testing.assert_array_equal(scores.end.values, [1.0, 0.0, 2.0])
    assert scores.s_na == 3.0
    with pytest.raises(ShapeError):
        score_spans(Tape(), Tensor(T), p, na_vector="max")


def test_score_spans_gradient(rng: np.random.Generator) -> None:
    store = store_of(T=rng.normal(size=(4, 3)), S=rng.normal(size=3), E=rng.normal(size=3))

    def objective(t: Tape, s: ParamStore) -> Tensor:
        scores = score_spans(t, s["T"], MrcParams(s["S"], s["E"]), na_vector="mean")
        return t.add(t.dot(scores.start, t.constant(np.arange(4.0))), t.dot(scores.end, t.constant(np.ones(4))))

    _gradcheck(objective, store)


def test_one_token_context() -> None:
    assert best_span(np.array([7.0, 1.0]), np.array([7.0, 2.0]), 30) == (3.0, 1, 1)
    with pytest.raises(ShapeError):
        score_spans(Tape(), Tensor(np.ones((1, 2))), _params(2))


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def test_best_span_example() -> None:
    assert best_span(np.array([0.0, 5.0, 0.0]), np.array([0.0, 0.0, 5.0]), 30) == (10.0, 1, 2)


def test_best_span_respects_length_and_order() -> None:
    start = np.array([0.0, 0.0, 0.0, 9.0])
    end = np.array([0.0, 9.0, 0.0, 1.0])
    # (3, 1) would score 18 but ends before it starts
    assert best_span(start, end, 30) == (10.0, 3, 3)
    assert best_span(np.array([0.0, 5.0, 0.0, 0.0]), np.array([0.0, 0.0, 0.0, 5.0]), 2) == (5.0, 1, 1)


def test_best_span_ties_go_to_smallest_start_then_end() -> None:
    assert best_span(np.zeros(4), np.zeros(4), 30) == (0.0, 1, 1)
    assert best_span(np.array([0.0, 1.0, 1.0]), np.array([0.0, 1.0, 1.0]), 30)[1:] == (1, 1)


WORDS = ("we", "need", "wood", "ok", "sure", ",", "deal", "?", "sheep")


def _random_context(rng: np.random.Generator):
    turns = [(str(rng.choice(["ann", "bob"])), " ".join(rng.choice(WORDS, size=int(rng.integers(1, 4)))))
             for _ in range(int(rng.integers(1, 4)))]
    return flatten_dialogue(make_dialogue(turns))


def test_decode_against_exhaustive_oracle(rng: np.random.Generator) -> None:
    for _ in range(500):
        ctx = _random_context(rng)
        n = len(ctx.tokens)
        start = np.round(rng.normal(size=n), 1)
        end = np.round(rng.normal(size=n), 1)
        max_len = int(rng.integers(1, 6))
        s_na = float(np.round(rng.normal(), 1))
        tau = float(np.round(rng.uniform(-1.0, 1.0), 1))

        s, i, j = best_span(start, end, max_len)
        expected = _oracle(start, end, max_len)
        assert (s, i, j) == expected

        pred = decode(start, end, s_na, _params(2, max_answer_len=max_len), ctx, "q", tau)
        cs, ce = ctx.tokens[i].char_start, ctx.tokens[j].char_end
        assert (pred.best.start_token, pred.best.end_token) == (i, j)
        assert (pred.best.char_start, pred.best.char_end) == (cs, ce)
        assert pred.best.text == ctx.text[cs:ce]
        assert pred.answerable == (expected[0] > s_na + tau)
        assert pred.text == (ctx.text[cs:ce] if pred.answerable else "")


def test_decide_threshold() -> None:
    assert decide(1.0, 0.0, 0.5)
    assert not decide(1.0, 0.5, 0.5)
    assert not decide(1.0, 2.0, 0.0)


def test_decode_extracts_span_text_and_keeps_the_best_span_for_na() -> None:
    d = make_dialogue([("A", "hi there"), ("B", "big world")])
    ctx = flatten_dialogue(d)
    # tokens: <na> A : hi there B : big world
    start = np.zeros(len(ctx.tokens))
    end = np.zeros(len(ctx.tokens))
    start[7], end[8] = 4.0, 4.0
    p = _params(2)
    pred = decode(start, end, s_na=1.0, p=p, ctx=ctx, question_id="q")
    assert (pred.best.start_token, pred.best.end_token) == (7, 8)
    assert pred.text == "big world" == ctx.text[pred.best.char_start:pred.best.char_end]
    assert pred.answerable and pred.s_best == 8.0

    na = decode(start, end, s_na=9.0, p=p, ctx=ctx, question_id="q")
    assert na.is_na and na.text == "" and na.span is None
    assert na.sidecar()["text"] == "big world"
    assert na.sidecar()["s_NA"] == 9.0


def test_tau_monotonicity_and_shift_invariance(rng: np.random.Generator) -> None:
    for _ in range(50):
        s_best, s_na = (float(x) for x in rng.normal(size=2))
        taus = np.sort(rng.normal(size=5))
        answered = [decide(s_best, s_na, float(t)) for t in taus]
        # a larger tau never turns an abstention back into an answer
        assert answered == sorted(answered, reverse=True)
        c = float(rng.normal())
        for t in taus:
            if abs(s_best - s_na - t) > 1e-9:
                assert decide(s_best + c, s_na + c, float(t)) == decide(s_best, s_na, float(t))


def test_no_answer_above_the_best_span_abstains_for_non_negative_tau() -> None:
    s_best, _, _ = best_span(np.array([10.0, 1.0, 0.0]), np.array([10.0, 0.0, 1.0]), 30)
    assert s_best == 2.0
    for tau in (0.0, 0.5, 3.0):
        assert not decide(s_best, 20.0, tau)
