# dadgraph/engine/vocab.py
from __future__ import annotations
from typing import Dict, Iterable, List, Sequence, Tuple

from .corpus import SENTINEL, Dialogue, flatten_dialogue, tokenize
from .errors import VocabularyError

UNK = "<unk>"
RESERVED = (SENTINEL, UNK)
SENTINEL_ID = 0
UNK_ID = 1


def normalize_surface(surface: str) -> str:
    return surface.lower()


def speaker_token(speaker: str) -> str:
    # one token per speaker, even when the name contains spaces
    return normalize_surface(speaker.strip())


class Vocabulary:
    """Lower-cased word index built from the training split. Ids 0/1 are the sentinel and UNK."""

    def __init__(self, tokens: Sequence[str]) -> None:
        if tuple(tokens[:2]) != RESERVED:
            raise VocabularyError(f"vocabulary must start with {RESERVED}, got {tuple(tokens[:2])}")
        self.tokens: List[str] = list(tokens)
        self.index: Dict[str, int] = {}
        for i, t in enumerate(self.tokens):
            if t in self.index:
                raise VocabularyError(f"duplicate vocabulary entry {t!r}")
            self.index[t] = i

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, surface: str) -> bool:
        return normalize_surface(surface) in self.index

    def lookup(self, surface: str) -> int:
        return self.index.get(normalize_surface(surface), UNK_ID)

    def lookup_all(self, surfaces: Iterable[str]) -> Tuple[List[int], int]:
        """Ids plus the number of out-of-vocabulary surfaces."""
        ids, oov = [], 0
        for s in surfaces:
            i = self.lookup(s)
            oov += i == UNK_ID and normalize_surface(s) != UNK
            ids.append(i)
        return ids, oov

    @classmethod
    def build(cls, dialogues: Iterable[Dialogue]) -> "Vocabulary":
        seen: Dict[str, None] = {}
        for d in dialogues:
            for u in d.utterances:
                seen.setdefault(speaker_token(u.speaker))
            for tok in flatten_dialogue(d).tokens[1:]:
                seen.setdefault(normalize_surface(tok.surface))
            for q in d.questions:
                for tok in tokenize(q.text):
                    seen.setdefault(normalize_surface(tok.surface))
        words = sorted(w for w in seen if w not in RESERVED)
        return cls(list(RESERVED) + words)
