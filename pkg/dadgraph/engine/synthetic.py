# dadgraph/engine/synthetic.py
"""
Small trading-chat corpus for overfit runs. The first speaker says what they need, the second
what they can offer; questions ask for one of the two items or (unanswerable) when someone
leaves. Each answerable question shares its verb with exactly one utterance.
"""
from __future__ import annotations
from typing import List, Tuple

import numpy as np

from .corpus import Answer, Dialogue, DiscourseLink, Question, RelationType, Utterance, flatten_dialogue

NAMES = ("alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi")
ITEMS = ("wood", "sheep", "ore", "wheat", "clay", "brick", "stone", "rope", "iron", "wool", "grain", "salt")
PURPOSES = ("road", "city", "bridge", "farm", "harbor", "wall", "tower", "market")
REPLIES = ("ok", "no thanks", "sure , deal", "maybe later", "sounds good")
FILLERS = ("anyone around ?", "my turn now", "good game so far", "i will roll", "who has the dice ?")


def _need(item: str, purpose: str) -> str:
    return f"i need {item} for the {purpose}"


def _offer(item: str, purpose: str) -> str:
    return f"i can offer {item} for a {purpose}"


def _char_start(d: Dialogue, utterance: int, word: str) -> int:
    for tok in flatten_dialogue(d).tokens:
        if tok.utterance_index == utterance and tok.surface == word:
            return tok.char_start
    raise ValueError(f"{word!r} not in utterance {utterance} of {d.id}")


def _dialogue(i: int, rng: np.random.Generator, unanswerable: bool) -> Dialogue:
    a, b, c = (str(x) for x in rng.choice(NAMES, size=3, replace=False))
    (item_a, item_b) = (str(x) for x in rng.choice(ITEMS, size=2, replace=False))
    (purpose_a, purpose_b) = (str(x) for x in rng.choice(PURPOSES, size=2, replace=False))
    n = int(rng.integers(3, 7))

    turns: List[Tuple[str, str]] = [
        (a, _need(item_a, purpose_a)),
        (b, str(rng.choice(REPLIES))),
        (b, _offer(item_b, purpose_b)),
    ]
    for k in range(3, n):
        turns.append((c if k % 2 else a, str(rng.choice(FILLERS))))
    utterances = tuple(Utterance(k, s, t) for k, (s, t) in enumerate(turns))

    links = [DiscourseLink(0, 1, RelationType.ACKNOWLEDGEMENT), DiscourseLink(1, 2, RelationType.CONTINUATION)]
    for k in range(3, n):
        links.append(DiscourseLink(k - 1, k, RelationType.COMMENT))
    if n > 4:
        links.append(DiscourseLink(0, 4, RelationType.ELABORATION))

    did = f"syn-{i:02d}"
    base = Dialogue(did, utterances, tuple(links))
    questions = [Question(f"{did}-q1", f"what does {a} need ?",
                          (Answer(item_a, _char_start(base, 0, item_a)),))]
    if unanswerable:
        questions.append(Question(f"{did}-q2", f"when does {b} leave ?"))
    else:
        questions.append(Question(f"{did}-q2", f"what can {b} offer ?",
                                  (Answer(item_b, _char_start(base, 2, item_b)),)))
    return Dialogue(did, utterances, tuple(links), tuple(questions))


def synthetic_corpus(n_dialogues: int = 16, seed: int = 0, unanswerable_every: int = 2) -> List[Dialogue]:
    """Deterministic in ``seed``; every ``unanswerable_every``-th dialogue gets an NA question."""
    rng = np.random.default_rng(seed)
    return [_dialogue(i, rng, unanswerable_every > 0 and i % unanswerable_every == 0) for i in range(n_dialogues)]
