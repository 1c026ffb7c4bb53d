from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence, Tuple

import numpy as np

from dadgraph.engine.config import TrainConfig, load_config
from dadgraph.engine.corpus import Answer, Dialogue, DiscourseLink, Question, RelationType, Utterance, flatten_dialogue
from dadgraph.engine.model import DadGraphModel, QuestionFeatures
from dadgraph.engine.numerics import Tape
from dadgraph.engine.params import ParamStore
from dadgraph.engine.vocab import Vocabulary

SAMPLE_CORPUS = Path(__file__).resolve().parents[1] / "dadgraph" / "data" / "sample_corpus.json"


def make_dialogue(
    turns: Sequence[Tuple[str, str]],
    links: Iterable[Tuple[int, int, str]] = (),
    questions: Iterable[Tuple[str, str, Sequence[Tuple[str, int]]]] = (),
    did: str = "d",
) -> Dialogue:
    return Dialogue(
        did,
        tuple(Utterance(i, s, t) for i, (s, t) in enumerate(turns)),
        tuple(DiscourseLink(h, d, RelationType.parse(r)) for h, d, r in links),
        tuple(Question(qid, text, tuple(Answer(a, c) for a, c in answers)) for qid, text, answers in questions),
    )


def answer_at(d: Dialogue, text: str) -> int:
    """char_start of the first occurrence of ``text`` in the flattened context."""
    pos = flatten_dialogue(d).text.find(text)
    assert pos >= 0, text
    return pos


def tiny_config(**updates) -> TrainConfig:
    """Small dimensions, no run directory, no progress bars."""
    base = {
        "epochs": 0,
        "progress": False,
        "run_dir": None,
        "encoder": {"utterance": {"kind": "bag_of_words", "embed_dim": 6}, "gru_hidden": 4, "rgcn_hidden": 6},
        "mrc": {"word_dim": 6},
    }
    return load_config(overrides=base).with_updates(**updates)


def store_of(**arrays: np.ndarray) -> ParamStore:
    store = ParamStore(0)
    for name, values in arrays.items():
        store.add(name, values)
    return store


def vocabulary_size(dialogues: Sequence[Dialogue]) -> int:
    return len(Vocabulary.build(dialogues))


def score_arrays(model: DadGraphModel, qf: QuestionFeatures) -> Tuple[np.ndarray, np.ndarray]:
    """Start and end logits of one forward pass, detached from its tape."""
    scores = model.forward(Tape(), qf)
    return scores.start.values.copy(), scores.end.values.copy()
