from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import List

import numpy as np
import pytest

from dadgraph.engine.checkpoint import Checkpoint
from dadgraph.engine.corpus import Dialogue
from dadgraph.engine.encoder import PrecomputedEmbeddings
from dadgraph.engine.errors import ShapeError, VocabularyError
from dadgraph.engine.gradcheck import finite_difference_gradient, max_relative_error
from dadgraph.engine.logging_io import read_json, read_jsonl
from dadgraph.engine.metrics import golds_of, sweep_tau
from dadgraph.engine.model import UTTERANCE_TABLE, WORD_TABLE, DadGraphModel, train_loss
from dadgraph.engine.mrc_head import SpanScores
from dadgraph.engine.numerics import Tape, Tensor, backward
from dadgraph.engine.synthetic import synthetic_corpus
from dadgraph.engine.trainer import (
    evaluate,
    evaluate_model,
    model_from_checkpoint,
    predict,
    run_ablation,
    train,
    write_predictions,
)
from dadgraph.engine.vocab import Vocabulary

from helpers import make_dialogue, score_arrays, tiny_config

COMPOSITE_TOLERANCE = 1e-4


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def test_uniform_logits_give_twice_log_positions() -> None:
    tape = Tape()
    scores = SpanScores(tape.constant(np.zeros(4)), tape.constant(np.zeros(4)))
    assert train_loss(tape, scores, (1, 2)).item() == pytest.approx(2 * math.log(4), abs=1e-12)
    assert train_loss(tape, scores, (0, 0)).item() == pytest.approx(2 * math.log(4), abs=1e-12)


def test_peaked_logits_give_small_loss() -> None:
    tape = Tape()
    scores = SpanScores(tape.constant(np.array([0.0, 10.0, 0.0])), tape.constant(np.array([0.0, 0.0, 10.0])))
    expected = 2 * math.log(1 + 2 * math.exp(-10))
    assert train_loss(tape, scores, (1, 2)).item() == pytest.approx(expected, rel=1e-9)
    with pytest.raises(ShapeError):
        train_loss(tape, scores, (0, 3))


def test_loss_gradient_on_logits() -> None:
    start = Tensor(np.array([0.5, -1.0, 2.0]), grad_required=True, name="start")
    end = Tensor(np.array([1.0, 0.0, -0.5]), grad_required=True, name="end")
    tape = Tape()
    grads = backward(tape, train_loss(tape, SpanScores(start, end), (2, 0)), {"start": start, "end": end})
    p = np.exp(start.values) / np.exp(start.values).sum()
    np.testing.assert_allclose(grads["start"].values, p - np.eye(3)[2], atol=1e-12)
    assert grads["end"].values.sum() == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

def test_prepare_aligns_gold_spans(three_turns: Dialogue) -> None:
    model = DadGraphModel.initialize(tiny_config(), [three_turns])
    data = model.prepare([three_turns])
    assert [qf.question_id for qf in data] == ["q1", "q2"]
    q1, q2 = data.questions
    tokens = q1.dialogue.context.tokens
    assert [tokens[i].surface for i in q1.gold] == ["two", "sheep"]
    assert q2.gold == (0, 0)
    assert data.oov_tokens == 0


def test_forward_shapes_and_prediction(three_turns: Dialogue) -> None:
    model = DadGraphModel.initialize(tiny_config(), [three_turns])
    qf = model.prepare([three_turns]).questions[0]
    tape = Tape()
    feats = model.features(tape, qf)
    n_tokens = len(qf.dialogue.context.tokens)
    assert feats.w.shape == (n_tokens, 6) and feats.t.shape == (n_tokens, 12)
    scores = model.forward(tape, qf)
    assert scores.start.shape == scores.end.shape == (n_tokens,)
    pred = model.predict(qf)
    assert 1 <= pred.best.start_token <= pred.best.end_token < n_tokens
    start, end = score_arrays(model, qf)
    assert pred.s_na == pytest.approx(start[0] + end[0])


def test_relation_matrices_per_graph_mode(three_turns: Dialogue) -> None:
    counts = {}
    for mode in ("gold", "links", "full"):
        model = DadGraphModel.initialize(tiny_config(graph={"mode": mode}), [three_turns])
        counts[mode] = (model.relation_matrix_count, model.parameter_count())
    assert [counts[m][0] for m in ("gold", "links", "full")] == [16, 2, 1]
    assert counts["gold"][1] > counts["links"][1] > counts["full"][1]


@pytest.mark.parametrize("updates", [
    {"graph": {"mode": "links"}, "encoder": {"activation": "tanh"}, "mrc": {"na_vector": "mean"}},
    {"graph": {"mode": "gold"}},
], ids=["links-tanh-mean", "gold-defaults"])
def test_end_to_end_gradient(three_turns: Dialogue, updates: dict) -> None:
    cfg = tiny_config(**updates)
    model = DadGraphModel.initialize(cfg, [three_turns])
    for qf in model.prepare([three_turns]):
        tape = Tape()
        analytic = backward(tape, model.loss(tape, qf), model.trainable_params())
        numeric = finite_difference_gradient(lambda _s: model.loss(Tape(), qf).item(), model.params)
        errors = max_relative_error(analytic, numeric)
        assert max(errors.values()) <= COMPOSITE_TOLERANCE, errors


def test_vocabulary_must_match_the_word_table(three_turns: Dialogue) -> None:
    model = DadGraphModel.initialize(tiny_config(), [three_turns])
    with pytest.raises(VocabularyError):
        DadGraphModel(model.config, Vocabulary(model.vocab.tokens[:-1]), model.params)


def test_oov_tokens_are_counted(three_turns: Dialogue, caplog: pytest.LogCaptureFixture) -> None:
    model = DadGraphModel.initialize(tiny_config(), [three_turns])
    other = make_dialogue([("zed", "quokka wombat")], questions=[("z1", "what quokka ?", [])], did="z")
    with caplog.at_level(logging.INFO):
        data = model.prepare([other])
    # zed, quokka, wombat in the context and quokka in the question
    assert data.oov_tokens == 4
    assert "out-of-vocabulary" in caplog.text


def _precomputed(d: Dialogue, dim: int) -> PrecomputedEmbeddings:
    emb = PrecomputedEmbeddings(dim)
    rng = np.random.default_rng(3)
    for u in d.utterances:
        emb.utterances[(d.id, u.index)] = rng.normal(size=dim)
    for q in d.questions:
        emb.questions[(d.id, q.id)] = rng.normal(size=dim)
    return emb


def test_precomputed_encoder_model(three_turns: Dialogue) -> None:
    cfg = tiny_config(encoder={"utterance": {"kind": "precomputed", "path": "unused.jsonl"}})
    model = DadGraphModel.initialize(cfg, [three_turns], _precomputed(three_turns, 6))
    assert UTTERANCE_TABLE not in model.params and WORD_TABLE in model.params
    qf = model.prepare([three_turns]).questions[0]
    tape = Tape()
    grads = backward(tape, model.loss(tape, qf), model.trainable_params())
    assert set(grads) == set(model.params)
    with pytest.raises(ShapeError, match="rgcn_hidden"):
        DadGraphModel.initialize(cfg, [three_turns], _precomputed(three_turns, 3))


# ---------------------------------------------------------------------------
# evaluation and prediction files
# ---------------------------------------------------------------------------

def test_infinite_margin_predicts_no_answer_everywhere(sample_dialogues: List[Dialogue]) -> None:
    model = DadGraphModel.initialize(tiny_config(), sample_dialogues)
    report, preds = evaluate_model(model, model.prepare(sample_dialogues), tau=1e9)
    assert all(p.is_na for p in preds)
    assert report.em == pytest.approx(40.0) and report.f1 == pytest.approx(40.0)
    assert report.tau == 1e9


def test_threaded_evaluation_matches_serial(sample_dialogues: List[Dialogue]) -> None:
    model = DadGraphModel.initialize(tiny_config(), sample_dialogues)
    data = model.prepare(sample_dialogues)
    serial, a = evaluate_model(model, data, workers=1)
    threaded, b = evaluate_model(model, data, workers=3)
    assert a == b
    assert serial.summary() == threaded.summary()


def test_sidecar_sweep_equals_reevaluation(sample_dialogues: List[Dialogue], tmp_path: Path) -> None:
    model = DadGraphModel.initialize(tiny_config(), sample_dialogues)
    data = model.prepare(sample_dialogues)
    _, preds = evaluate_model(model, data, tau=0.0)
    path, side = write_predictions(preds, tmp_path / "predictions.json")
    assert side.name == "predictions.scores.json"
    answers = read_json(path)
    assert set(answers) == {p.question_id for p in preds}
    sidecar = read_json(side)
    margins = sorted(p.s_best - p.s_na for p in preds)
    taus = [margins[0] - 1.0, 0.0] + [m + 1e-6 for m in margins]
    swept = sweep_tau(sidecar, golds_of(sample_dialogues), taus)
    for tau in taus:
        direct, _ = evaluate_model(model, data, tau=tau)
        assert (swept[tau].em, swept[tau].f1, swept[tau].predicted_na) == (direct.em, direct.f1, direct.predicted_na)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def test_zero_epochs_keeps_the_initial_parameters(sample_dialogues: List[Dialogue]) -> None:
    result = train(tiny_config(), sample_dialogues, sample_dialogues)
    fresh = DadGraphModel.initialize(tiny_config(), sample_dialogues)
    assert result.best_epoch == 0 and result.stop_reason == "epochs"
    assert [h["phase"] for h in result.history] == ["init", "final"]
    assert result.checkpoint.params.identical(fresh.params)
    assert result.run_dir is None and result.checkpoint_path is None


def test_training_writes_run_artifacts_and_reloads_bit_exact(sample_dialogues: List[Dialogue],
                                                             tmp_path: Path) -> None:
    cfg = tiny_config(epochs=3, learning_rate=0.01, run_dir=str(tmp_path / "runs"))
    result = train(cfg, sample_dialogues, sample_dialogues, label="t")
    run_dir = result.run_dir
    assert run_dir is not None and run_dir.parent == tmp_path / "runs"
    for name in ("history.jsonl", "config.json", "checkpoint_best.bin", "metrics_best.json"):
        assert (run_dir / name).exists(), name
    phases = [rec["phase"] for rec in read_jsonl(run_dir / "history.jsonl")]
    assert phases[0] == "init" and phases[-1] == "final" and phases.count("epoch") == 3
    assert read_json(run_dir / "config.json")["epochs"] == 3

    reloaded = model_from_checkpoint(Checkpoint.load(result.checkpoint_path))
    assert reloaded.params.identical(result.model.params)
    for qf_a, qf_b in zip(result.model.prepare(sample_dialogues), reloaded.prepare(sample_dialogues)):
        for x, y in zip(score_arrays(result.model, qf_a), score_arrays(reloaded, qf_b)):
            assert np.array_equal(x, y)

    report = evaluate(result.checkpoint_path, sample_dialogues, out_dir=tmp_path / "eval")
    assert (report.em, report.f1) == (result.best.em, result.best.f1)
    assert (tmp_path / "eval" / "predictions.scores.json").exists()
    assert read_json(tmp_path / "eval" / "metrics.json")["total"] == 5
    preds = predict(result.checkpoint, sample_dialogues, tau=1e9, workers=2)
    assert [p.question_id for p in preds] == list(golds_of(sample_dialogues)) and all(p.is_na for p in preds)


def test_training_is_deterministic(sample_dialogues: List[Dialogue]) -> None:
    cfg = tiny_config(epochs=2, learning_rate=0.01)
    a = train(cfg, sample_dialogues, sample_dialogues)
    b = train(cfg, sample_dialogues, sample_dialogues)
    assert a.model.params.identical(b.model.params)
    assert [h.get("loss") for h in a.history] == [h.get("loss") for h in b.history]


def test_patience_stops_training(sample_dialogues: List[Dialogue]) -> None:
    cfg = tiny_config(epochs=50, learning_rate=1e-9, patience=2)
    result = train(cfg, sample_dialogues, sample_dialogues)
    assert result.stop_reason == "patience"
    assert sum(h["phase"] == "epoch" for h in result.history) < 50


def test_learning_rate_decays_every_epoch(sample_dialogues: List[Dialogue]) -> None:
    cfg = tiny_config(epochs=3, learning_rate=0.01, lr_decay=0.5)
    result = train(cfg, sample_dialogues, sample_dialogues)
    lrs = [h["lr"] for h in result.history if h["phase"] == "epoch"]
    assert lrs == pytest.approx([0.01, 0.005, 0.0025])


def _overfit_config(**updates):
    return tiny_config(
        epochs=300, learning_rate=0.01, lr_decay=0.995, target_em=95.0,
        encoder={"utterance": {"kind": "bag_of_words", "embed_dim": 16}, "gru_hidden": 16, "rgcn_hidden": 16},
        mrc={"word_dim": 16},
    ).with_updates(**updates)


@pytest.mark.slow
def test_overfits_the_synthetic_corpus() -> None:
    data = synthetic_corpus()
    result = train(_overfit_config(), data, data)
    assert result.best.em >= 95.0
    assert result.stop_reason == "target_em"
    assert result.best_epoch <= 300


@pytest.mark.slow
def test_ablation_reports_every_graph_mode() -> None:
    data = synthetic_corpus()
    rows = run_ablation(_overfit_config(), data, data)
    assert [r.mode for r in rows] == ["gold", "links", "full"]
    assert [r.relation_matrices for r in rows] == [16, 2, 1]
    assert rows[0].parameters > rows[1].parameters > rows[2].parameters
    assert all(r.report.total == 32 for r in rows)
    assert all(r.stop_reason in ("epochs", "target_em") and r.best_epoch <= 300 for r in rows)
    assert rows[0].report.em >= 95.0
    assert set(rows[0].to_dict()) == {"mode", "relation_matrices", "parameters", "best_epoch", "stop_reason",
                                      "em", "f1"}
