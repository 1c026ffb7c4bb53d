# dadgraph/engine/metrics.py
"""
Exact-match and token-F1 scoring with SQuAD 2.0 answer normalisation.

Scores are fractions per question and percentages in reports. An empty gold list means the
question is unanswerable; a prediction of ``None`` or ``""`` means the model answered NA.
"""
from __future__ import annotations
import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .mrc_head import decide

_PUNCT = frozenset(string.punctuation)
_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize_answer(s: str) -> str:
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def _is_na(pred: Optional[str]) -> bool:
    return pred is None or pred == ""


def _f1(pred: str, gold: str) -> float:
    p = normalize_answer(pred).split()
    g = normalize_answer(gold).split()
    if not p or not g:
        return float(p == g)
    common = sum((Counter(p) & Counter(g)).values())
    if common == 0:
        return 0.0
    precision = common / len(p)
    recall = common / len(g)
    return 2 * precision * recall / (precision + recall)


def compute_em_f1(pred: Optional[str], golds: Sequence[str]) -> Tuple[int, float]:
    if not golds or _is_na(pred):
        both = int(not golds and _is_na(pred))
        return both, float(both)
    em = int(any(normalize_answer(pred) == normalize_answer(g) for g in golds))  # type: ignore[arg-type]
    f1 = max(_f1(pred, g) for g in golds)  # type: ignore[arg-type]
    return em, f1


@dataclass(frozen=True)
class QuestionRecord:
    question_id: str
    prediction: str
    golds: Tuple[str, ...]
    em: int
    f1: float

    @property
    def gold_na(self) -> bool:
        return not self.golds

    @property
    def predicted_na(self) -> bool:
        return self.prediction == ""

    def to_dict(self) -> Dict[str, Any]:
        return {"question_id": self.question_id, "prediction": self.prediction, "golds": list(self.golds),
                "em": self.em, "f1": self.f1}


def _pct(values: List[float]) -> float:
    return 100.0 * math.fsum(values) / len(values) if values else 0.0


@dataclass
class MetricsReport:
    em: float = 0.0
    f1: float = 0.0
    answerable: int = 0
    unanswerable: int = 0
    correct_na: int = 0          # NA predicted for an unanswerable question
    false_na: int = 0            # NA predicted for an answerable question
    has_ans_em: float = 0.0
    has_ans_f1: float = 0.0
    no_ans_em: float = 0.0
    no_ans_f1: float = 0.0
    tau: Optional[float] = None
    records: List[QuestionRecord] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.answerable + self.unanswerable

    @property
    def predicted_na(self) -> int:
        return sum(r.predicted_na for r in self.records)

    def summary(self) -> Dict[str, Any]:
        out = {k: v for k, v in self.__dict__.items() if k != "records"}
        out["total"] = self.total
        return out

    def to_dict(self) -> Dict[str, Any]:
        out = self.summary()
        out["records"] = [r.to_dict() for r in self.records]
        return out


def aggregate(records: Sequence[QuestionRecord], tau: Optional[float] = None) -> MetricsReport:
    """Order-independent aggregation (fsum) over per-question records."""
    has = [r for r in records if not r.gold_na]
    no = [r for r in records if r.gold_na]
    return MetricsReport(
        em=_pct([r.em for r in records]),
        f1=_pct([r.f1 for r in records]),
        answerable=len(has),
        unanswerable=len(no),
        correct_na=sum(r.predicted_na for r in no),
        false_na=sum(r.predicted_na for r in has),
        has_ans_em=_pct([r.em for r in has]),
        has_ans_f1=_pct([r.f1 for r in has]),
        no_ans_em=_pct([r.em for r in no]),
        no_ans_f1=_pct([r.f1 for r in no]),
        tau=tau,
        records=list(records),
    )


def score_predictions(predictions: Mapping[str, str], golds: Mapping[str, Sequence[str]],
                      tau: Optional[float] = None) -> MetricsReport:
    """Score a question_id -> answer map ("" for NA) in the order of ``golds``."""
    records = []
    for qid, answers in golds.items():
        pred = predictions.get(qid, "")
        em, f1 = compute_em_f1(pred, answers)
        records.append(QuestionRecord(qid, pred, tuple(answers), em, f1))
    return aggregate(records, tau)


def sweep_tau(sidecar: Mapping[str, Mapping[str, Any]], golds: Mapping[str, Sequence[str]],
              taus: Iterable[float]) -> Dict[float, MetricsReport]:
    """Re-take the no-answer decision for every tau from stored scores alone."""
    out: Dict[float, MetricsReport] = {}
    for tau in taus:
        preds = {qid: (rec["text"] if decide(rec["s_best"], rec["s_NA"], tau) else "")
                 for qid, rec in sidecar.items()}
        out[float(tau)] = score_predictions(preds, golds, float(tau))
    return out


def best_tau(sidecar: Mapping[str, Mapping[str, Any]], golds: Mapping[str, Sequence[str]],
             taus: Iterable[float]) -> Tuple[float, MetricsReport]:
    """The tau with the highest F1; ties go to the smallest tau."""
    reports = sweep_tau(sidecar, golds, taus)
    if not reports:
        raise ValueError("no tau candidates given")
    tau = min(reports, key=lambda t: (-reports[t].f1, t))
    return tau, reports[tau]


def golds_of(dialogues: Iterable[Any]) -> Dict[str, List[str]]:
    """question_id -> gold answer texts, corpus order."""
    return {q.id: [a.text for a in q.answers] for d in dialogues for q in d.questions}
