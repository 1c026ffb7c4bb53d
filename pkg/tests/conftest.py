from __future__ import annotations

from typing import List

import numpy as np
import pytest

from dadgraph.engine.corpus import Dialogue, parse_corpus

from helpers import SAMPLE_CORPUS, answer_at, make_dialogue


@pytest.fixture
def sample_dialogues() -> List[Dialogue]:
    return parse_corpus(SAMPLE_CORPUS)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def three_turns() -> Dialogue:
    """Three speakers, two links, one span question and one NA question."""
    turns = [("ann", "who has sheep ?"), ("bob", "i have two sheep"), ("cat", "i want one")]
    links = [(0, 1, "QAP"), (1, 2, "Comment")]
    start = answer_at(make_dialogue(turns), "two sheep")
    return make_dialogue(
        turns, links,
        questions=[("q1", "what does bob have ?", [("two sheep", start)]), ("q2", "when does cat leave ?", [])],
    )
