# dadgraph/engine/trainer.py
from __future__ import annotations
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from . import logging_io as LIO
from .checkpoint import Checkpoint
from .config import BagOfWordsConfig, TrainConfig, parse_config
from .corpus import Dialogue, parse_corpus
from .encoder import PrecomputedEmbeddings
from .errors import ConfigError
from .metrics import MetricsReport, QuestionRecord, aggregate, compute_em_f1
from .mrc_head import Prediction
from .model import DadGraphModel, PreparedCorpus, train_loss
from .numerics import Tape, backward
from .optim import OptimizerState, optimizer_step
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

__all__ = ["TrainResult", "train", "train_loss", "evaluate", "evaluate_model", "predict",
           "write_predictions", "run_ablation", "model_from_checkpoint", "load_split"]

ABLATION_MODES = ("gold", "links", "full")


def load_split(path: Optional[str], name: str) -> List[Dialogue]:
    if not path:
        raise ConfigError(f"no {name} corpus configured (data.{name})")
    return parse_corpus(path)


def _embeddings_for(cfg: TrainConfig) -> Optional[PrecomputedEmbeddings]:
    utt = cfg.encoder.utterance
    return None if isinstance(utt, BagOfWordsConfig) else PrecomputedEmbeddings.load(utt.path)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _predict_all(model: DadGraphModel, data: PreparedCorpus, tau: Optional[float], workers: int) -> List[Prediction]:
    # one tape per forward pass, parameters are only read
    if workers > 1 and len(data) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda qf: model.predict(qf, tau), data.questions))
    return [model.predict(qf, tau) for qf in data.questions]


def evaluate_model(model: DadGraphModel, data: PreparedCorpus, tau: Optional[float] = None,
                   workers: int = 1) -> Tuple[MetricsReport, List[Prediction]]:
    tau = model.mrc.tau if tau is None else tau
    preds = _predict_all(model, data, tau, workers)
    records = []
    for qf, pred in zip(data.questions, preds):
        golds = [a.text for a in qf.question.answers]
        em, f1 = compute_em_f1(pred.text, golds)
        records.append(QuestionRecord(qf.question_id, pred.text, tuple(golds), em, f1))
    return aggregate(records, tau), preds


def model_from_checkpoint(ckpt: Checkpoint, embeddings: Optional[PrecomputedEmbeddings] = None) -> DadGraphModel:
    cfg = parse_config(ckpt.config)
    if embeddings is None:
        embeddings = _embeddings_for(cfg)
    return DadGraphModel(cfg, Vocabulary(ckpt.vocab), ckpt.params, embeddings)


def evaluate(checkpoint: Checkpoint | str | Path, dialogues: Sequence[Dialogue], tau: Optional[float] = None,
             workers: int = 1, out_dir: Optional[Path] = None) -> MetricsReport:
    """Metrics of a checkpoint on a corpus; with ``out_dir`` also writes predictions and sidecar scores."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint.load(checkpoint)
    model = model_from_checkpoint(ckpt)
    data = model.prepare(dialogues)
    if data.oov_tokens:
        logger.warning("vocabulary mismatch: %d of the corpus tokens are unknown to the checkpoint vocabulary "
                       "(%d entries)", data.oov_tokens, len(model.vocab))
    report, preds = evaluate_model(model, data, tau, workers)
    if out_dir is not None:
        write_predictions(preds, Path(out_dir) / "predictions.json")
        LIO.write_json(Path(out_dir) / "metrics.json", report.to_dict())
    logger.info("EM %.2f F1 %.2f over %d questions (tau %.3f)", report.em, report.f1, report.total, report.tau)
    return report


def predict(checkpoint: Checkpoint | str | Path, dialogues: Sequence[Dialogue], tau: Optional[float] = None,
            workers: int = 1) -> List[Prediction]:
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint.load(checkpoint)
    model = model_from_checkpoint(ckpt)
    return _predict_all(model, model.prepare(dialogues), model.mrc.tau if tau is None else tau, workers)


def sidecar_path(predictions_path: Path) -> Path:
    return predictions_path.with_suffix(".scores.json")


def write_predictions(preds: Sequence[Prediction], path: str | Path) -> Tuple[Path, Path]:
    """question_id -> answer ("" for NA), plus the tau-independent score sidecar next to it."""
    path = Path(path)
    LIO.write_json(path, {p.question_id: p.text for p in preds})
    side = sidecar_path(path)
    LIO.write_json(side, {p.question_id: p.sidecar() for p in preds})
    return path, side


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: DadGraphModel
    checkpoint: Checkpoint
    best_epoch: int
    best: MetricsReport
    history: List[Dict[str, Any]] = field(default_factory=list)
    stop_reason: str = "epochs"
    run_dir: Optional[Path] = None
    checkpoint_path: Optional[Path] = None


def _step(model: DadGraphModel, opt: OptimizerState, qf) -> float:
    tape = Tape()
    loss = train_loss(tape, model.forward(tape, qf), qf.gold)
    grads = backward(tape, loss, model.trainable_params())
    optimizer_step(opt, model.params, grads)
    return loss.item()


def train(cfg: TrainConfig, train_data: Optional[Sequence[Dialogue]] = None,
          dev_data: Optional[Sequence[Dialogue]] = None, label: str = "") -> TrainResult:
    """
    One question per optimizer step, epoch order from a seeded permutation. Dev metrics are
    taken before the first step and every ``eval_every`` epochs; the parameters with the best
    dev (F1, EM) are kept, the earliest on ties.
    """
    train_data = list(train_data) if train_data is not None else load_split(cfg.data.train, "train")
    if dev_data is None:
        dev_data = parse_corpus(cfg.data.dev) if cfg.data.dev else train_data
        if not cfg.data.dev:
            logger.info("no dev split configured, model selection uses the training split")

    model = DadGraphModel.initialize(cfg, train_data, _embeddings_for(cfg))
    train_set = model.prepare(train_data)
    dev_set = model.prepare(dev_data)
    if len(train_set) == 0:
        raise ConfigError("training corpus has no questions")

    opt = OptimizerState(cfg.optimizer, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)

    run_dir = LIO.init_run_dir(Path(cfg.run_dir), label) if cfg.run_dir else None
    hist_path = run_dir / "history.jsonl" if run_dir else None
    history: List[Dict[str, Any]] = []

    def log_event(rec: Dict[str, Any]) -> None:
        history.append(rec)
        if hist_path is not None:
            LIO.write_jsonl(hist_path, rec)

    if run_dir is not None:
        LIO.write_json(run_dir / "config.json", cfg.to_json())

    report, _ = evaluate_model(model, dev_set, workers=cfg.workers)
    best_key = (report.f1, report.em)
    best_epoch, best_report, best_params = 0, report, model.params.snapshot()
    log_event({"phase": "init", "epoch": 0, "parameters": model.parameter_count(),
               "relation_matrices": model.relation_matrix_count, "dev": report.summary()})

    stop_reason = "epochs"
    stale = 0
    bar = tqdm(range(1, cfg.epochs + 1), desc=f"train[{cfg.graph.mode}]", disable=not cfg.progress)
    for epoch in bar:
        opt.lr = cfg.learning_rate * cfg.lr_decay ** (epoch - 1)
        losses = [_step(model, opt, train_set.questions[int(i)]) for i in rng.permutation(len(train_set))]
        mean_loss = math.fsum(losses) / len(losses)
        if not math.isfinite(mean_loss):
            logger.warning("epoch %d: non-finite mean loss", epoch)

        if epoch % cfg.eval_every and epoch != cfg.epochs:
            log_event({"phase": "epoch", "epoch": epoch, "loss": mean_loss, "lr": opt.lr})
            continue

        report, _ = evaluate_model(model, dev_set, workers=cfg.workers)
        log_event({"phase": "epoch", "epoch": epoch, "loss": mean_loss, "lr": opt.lr, "dev": report.summary()})
        bar.set_postfix(loss=f"{mean_loss:.4f}", em=f"{report.em:.1f}", f1=f"{report.f1:.1f}")
        if (report.f1, report.em) > best_key:
            best_key = (report.f1, report.em)
            best_epoch, best_report, best_params = epoch, report, model.params.snapshot()
            stale = 0
            log_event({"phase": "best", "epoch": epoch, "dev": report.summary()})
        else:
            stale += 1

        if cfg.target_em is not None and report.em >= cfg.target_em:
            stop_reason = "target_em"
            break
        if cfg.patience is not None and stale >= cfg.patience:
            stop_reason = "patience"
            break
    bar.close()

    model.params.restore(best_params)
    ckpt = Checkpoint(cfg.to_json(), list(model.vocab.tokens), model.params.copy(),
                      extra={"best_epoch": best_epoch, "dev": best_report.summary()})
    ckpt_path = ckpt.save(run_dir / "checkpoint_best.bin") if run_dir is not None else None
    log_event({"phase": "final", "best_epoch": best_epoch, "stop_reason": stop_reason, "dev": best_report.summary()})
    if run_dir is not None:
        LIO.write_json(run_dir / "metrics_best.json", best_report.to_dict())
    logger.info("best dev EM %.2f F1 %.2f at epoch %d (%s)", best_report.em, best_report.f1, best_epoch, stop_reason)
    return TrainResult(model, ckpt, best_epoch, best_report, history, stop_reason, run_dir, ckpt_path)


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

@dataclass
class AblationRow:
    mode: str
    relation_matrices: int
    parameters: int
    report: MetricsReport
    best_epoch: int
    stop_reason: str = "epochs"

    def to_dict(self) -> Dict[str, Any]:
        return {"mode": self.mode, "relation_matrices": self.relation_matrices, "parameters": self.parameters,
                "best_epoch": self.best_epoch, "stop_reason": self.stop_reason,
                "em": self.report.em, "f1": self.report.f1}


def run_ablation(cfg: TrainConfig, train_data: Optional[Sequence[Dialogue]] = None,
                 dev_data: Optional[Sequence[Dialogue]] = None,
                 test_data: Optional[Sequence[Dialogue]] = None) -> List[AblationRow]:
    """Gold discourse, links-only and fully connected graphs with one seed and one budget."""
    train_data = list(train_data) if train_data is not None else load_split(cfg.data.train, "train")
    if dev_data is None and cfg.data.dev:
        dev_data = parse_corpus(cfg.data.dev)
    if test_data is None and cfg.data.test:
        test_data = parse_corpus(cfg.data.test)

    rows: List[AblationRow] = []
    for mode in ABLATION_MODES:
        graph = {"mode": mode, "window": cfg.graph.window if mode == "full" else None}
        mode_cfg = cfg.with_updates(graph=graph)
        logger.info("ablation: training with %s graphs", mode)
        result = train(mode_cfg, train_data, dev_data, label=f"ablate-{mode}")
        report = result.best
        if test_data is not None:
            data = result.model.prepare(test_data)
            report, _ = evaluate_model(result.model, data, workers=cfg.workers)
        rows.append(AblationRow(mode, result.model.relation_matrix_count, result.model.parameter_count(),
                                report, result.best_epoch, result.stop_reason))
    return rows
