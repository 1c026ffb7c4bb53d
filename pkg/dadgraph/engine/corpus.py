# dadgraph/engine/corpus.py
"""
Multiparty dialogues with gold discourse links and span / NA questions.

Coordinate system: every ``char_start`` indexes the flattened context, in which each
utterance is rendered as ``"{speaker}: {text}"`` and utterances are joined by a single
newline. Speaker prefixes are part of the coordinates.
"""
from __future__ import annotations
import json
import logging
import re
import string
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from . import contracts
from .errors import AlignmentError, CorpusSyntaxError, CorpusValidationError

logger = logging.getLogger(__name__)

SENTINEL = "<na>"
UTTERANCE_BOUNDS = (8, 15)
SPEAKER_BOUNDS = (2, 9)
LONG_UTTERANCE_WORDS = 20
# reference corpus split sizes (dialogues)
REFERENCE_SPLITS = {"train": 9000, "dev": 900, "test": 100}

_PUNCT = frozenset(string.punctuation)
_CHUNK_RE = re.compile(r"\S+")


class RelationType(str, Enum):
    COMMENT = "Comment"
    CLARIFICATION_QUESTION = "Clarification_question"
    ELABORATION = "Elaboration"
    ACKNOWLEDGEMENT = "Acknowledgement"
    CONTINUATION = "Continuation"
    EXPLANATION = "Explanation"
    CONDITIONAL = "Conditional"
    QAP = "QAP"
    ALTERNATION = "Alternation"
    Q_ELAB = "Q-Elab"
    RESULT = "Result"
    BACKGROUND = "Background"
    NARRATION = "Narration"
    CORRECTION = "Correction"
    PARALLEL = "Parallel"
    CONTRAST = "Contrast"

    @classmethod
    def parse(cls, name: str) -> "RelationType":
        rel = _RELATIONS_BY_LOWER.get(name.strip().lower())
        if rel is None:
            raise ValueError(f"unknown relation {name!r}")
        return rel

    @property
    def id(self) -> int:
        return RELATION_NAMES.index(self.value)


RELATION_NAMES: Tuple[str, ...] = tuple(r.value for r in RelationType)
_RELATIONS_BY_LOWER = {r.value.lower(): r for r in RelationType}


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: str
    text: str


@dataclass(frozen=True)
class DiscourseLink:
    head: int
    dependent: int
    relation: RelationType


@dataclass(frozen=True)
class Answer:
    text: str
    char_start: int

    @property
    def char_end(self) -> int:
        return self.char_start + len(self.text)


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    answers: Tuple[Answer, ...] = ()

    @property
    def is_answerable(self) -> bool:
        return bool(self.answers)


@dataclass(frozen=True)
class Dialogue:
    id: str
    utterances: Tuple[Utterance, ...]
    links: Tuple[DiscourseLink, ...] = ()
    questions: Tuple[Question, ...] = ()


@dataclass(frozen=True)
class Token:
    surface: str
    char_start: int
    char_end: int
    utterance_index: int = -1


@dataclass(frozen=True)
class FlattenedContext:
    text: str
    tokens: Tuple[Token, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def span_text(self, start_token: int, end_token: int) -> str:
        return self.text[self.tokens[start_token].char_start:self.tokens[end_token].char_end]


# ---------------------------------------------------------------------------
# tokenisation, flattening, alignment
# ---------------------------------------------------------------------------

def tokenize(text: str) -> List[Token]:
    """Whitespace chunks, with leading / trailing ASCII punctuation split off one char at a time."""
    out: List[Token] = []
    for m in _CHUNK_RE.finditer(text):
        s, e = m.start(), m.end()
        lead: List[Token] = []
        while s < e and text[s] in _PUNCT:
            lead.append(Token(text[s], s, s + 1))
            s += 1
        trail: List[Token] = []
        while e > s and text[e - 1] in _PUNCT:
            trail.append(Token(text[e - 1], e - 1, e))
            e -= 1
        out.extend(lead)
        if s < e:
            out.append(Token(text[s:e], s, e))
        out.extend(reversed(trail))
    return out


def render_utterance(u: Utterance) -> str:
    return f"{u.speaker}: {u.text}"


def flatten_dialogue(d: Dialogue) -> FlattenedContext:
    tokens: List[Token] = [Token(SENTINEL, 0, 0, -1)]
    lines: List[str] = []
    offset = 0
    for u in d.utterances:
        line = render_utterance(u)
        for tok in tokenize(line):
            tokens.append(Token(tok.surface, tok.char_start + offset, tok.char_end + offset, u.index))
        lines.append(line)
        offset += len(line) + 1
    return FlattenedContext("\n".join(lines), tuple(tokens))


def align_answer_span(ctx: FlattenedContext, char_start: int, text: str) -> Tuple[int, int]:
    """Smallest inclusive token interval covering the character span; never the sentinel."""
    char_end = char_start + len(text)
    if ctx.text[char_start:char_end] != text:
        raise AlignmentError(f"context[{char_start}:{char_end}] is {ctx.text[char_start:char_end]!r}, not {text!r}")
    covered = [i for i in range(1, len(ctx.tokens))
               if ctx.tokens[i].char_start < char_end and ctx.tokens[i].char_end > char_start]
    if not covered:
        raise AlignmentError(f"answer {text!r} at {char_start} covers no token")
    return covered[0], covered[-1]


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_dialogue(d: Dialogue) -> Tuple[List[str], List[str]]:
    """Return (errors, warnings) for one dialogue. Size bounds are warnings only."""
    errors: List[str] = []
    warnings: List[str] = []
    n = len(d.utterances)
    if n == 0:
        errors.append("dialogue has no utterances")
    for i, u in enumerate(d.utterances):
        if u.index != i:
            errors.append(f"utterance indices must be contiguous from 0, got {u.index} at position {i}")
        if not u.speaker:
            errors.append(f"utterance {i} has an empty speaker")

    seen_links = set()
    for link in d.links:
        if link.head == link.dependent:
            errors.append(f"self-loop link {link.head}->{link.dependent}")
        for end in (link.head, link.dependent):
            if not 0 <= end < n:
                errors.append(f"link {link.head}->{link.dependent} references utterance {end}, dialogue has {n}")
        key = (link.head, link.dependent, link.relation)
        if key in seen_links:
            errors.append(f"duplicate link {link.head}->{link.dependent} ({link.relation.value})")
        seen_links.add(key)

    if n and d.questions:
        ctx = flatten_dialogue(d)
        for q in d.questions:
            for a in q.answers:
                if ctx.text[a.char_start:a.char_end] != a.text:
                    errors.append(f"span mismatch for question {q.id}: context[{a.char_start}:{a.char_end}] "
                                  f"is {ctx.text[a.char_start:a.char_end]!r}, answer is {a.text!r}")
                    continue
                try:
                    align_answer_span(ctx, a.char_start, a.text)
                except AlignmentError as e:
                    errors.append(f"question {q.id}: {e}")

    lo, hi = UTTERANCE_BOUNDS
    if not lo <= n <= hi:
        warnings.append(f"{n} utterances outside [{lo}, {hi}]")
    lo, hi = SPEAKER_BOUNDS
    speakers = len({u.speaker for u in d.utterances})
    if not lo <= speakers <= hi:
        warnings.append(f"{speakers} speakers outside [{lo}, {hi}]")
    return errors, warnings


def _dialogue_from_json(raw: Dict[str, Any], issues: List[Tuple[str, str]]) -> Dialogue:
    did = raw["id"]
    utterances = tuple(Utterance(i, u["speaker"], u["text"]) for i, u in enumerate(raw["utterances"]))
    links: List[DiscourseLink] = []
    for link in raw["links"]:
        try:
            rel = RelationType.parse(link["relation"])
        except ValueError as e:
            issues.append((did, str(e)))
            continue
        links.append(DiscourseLink(int(link["head"]), int(link["dependent"]), rel))
    questions = tuple(
        Question(q["id"], q["text"], tuple(Answer(a["text"], int(a["char_start"])) for a in q["answers"]))
        for q in raw["questions"]
    )
    return Dialogue(did, utterances, tuple(links), questions)


def corpus_from_json(raw: Any, source: str = "<memory>") -> List[Dialogue]:
    contracts.validate(raw, "corpus.schema.json")
    issues: List[Tuple[str, str]] = []
    dialogues: List[Dialogue] = []
    seen_dialogues: set[str] = set()
    seen_questions: Dict[str, str] = {}
    for raw_d in raw["dialogues"]:
        d = _dialogue_from_json(raw_d, issues)
        if d.id in seen_dialogues:
            issues.append((d.id, "duplicate dialogue id"))
        seen_dialogues.add(d.id)
        for q in d.questions:
            if q.id in seen_questions:
                issues.append((d.id, f"question id {q.id} already used in dialogue {seen_questions[q.id]}"))
            seen_questions.setdefault(q.id, d.id)
        errors, warnings = validate_dialogue(d)
        issues.extend((d.id, e) for e in errors)
        for w in warnings:
            logger.warning("%s: dialogue %s: %s", source, d.id, w)
        dialogues.append(d)
    if issues:
        raise CorpusValidationError(issues)
    return dialogues


def parse_corpus(path: str | Path) -> List[Dialogue]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorpusSyntaxError(str(path), e.lineno, e.colno, e.msg) from e
    dialogues = corpus_from_json(raw, source=str(path))
    logger.info("parsed %d dialogues from %s", len(dialogues), path)
    return dialogues


def serialize_corpus(dialogues: Iterable[Dialogue]) -> Dict[str, Any]:
    return {"dialogues": [
        {
            "id": d.id,
            "utterances": [{"speaker": u.speaker, "text": u.text} for u in d.utterances],
            "links": [{"head": l.head, "dependent": l.dependent, "relation": l.relation.value} for l in d.links],
            "questions": [
                {"id": q.id, "text": q.text, "answers": [{"text": a.text, "char_start": a.char_start} for a in q.answers]}
                for q in d.questions
            ],
        }
        for d in dialogues
    ]}


def write_corpus(dialogues: Iterable[Dialogue], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(serialize_corpus(dialogues), ensure_ascii=False, indent=2), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass
class CorpusStats:
    dialogues: int = 0
    utterances: int = 0
    questions: int = 0
    answerable: int = 0
    unanswerable: int = 0
    answerable_fraction: float = 0.0
    links: int = 0
    links_per_utterance: float = 0.0
    speakers_per_dialogue: float = 0.0
    long_utterances: int = 0
    out_of_bounds_dialogues: int = 0
    relation_histogram: Dict[str, int] = field(default_factory=lambda: {name: 0 for name in RELATION_NAMES})
    split: Optional[str] = None
    reference_dialogues: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def corpus_stats(dialogues: Sequence[Dialogue], split: Optional[str] = None) -> CorpusStats:
    stats = CorpusStats(split=split, reference_dialogues=REFERENCE_SPLITS.get(split or ""))
    speakers = 0
    for d in dialogues:
        stats.dialogues += 1
        stats.utterances += len(d.utterances)
        stats.links += len(d.links)
        n_speakers = len({u.speaker for u in d.utterances})
        speakers += n_speakers
        for link in d.links:
            stats.relation_histogram[link.relation.value] += 1
        for q in d.questions:
            stats.questions += 1
            if q.is_answerable:
                stats.answerable += 1
            else:
                stats.unanswerable += 1
        stats.long_utterances += sum(1 for u in d.utterances if len(u.text.split()) > LONG_UTTERANCE_WORDS)
        if not (UTTERANCE_BOUNDS[0] <= len(d.utterances) <= UTTERANCE_BOUNDS[1]
                and SPEAKER_BOUNDS[0] <= n_speakers <= SPEAKER_BOUNDS[1]):
            stats.out_of_bounds_dialogues += 1
    if stats.questions:
        stats.answerable_fraction = stats.answerable / stats.questions
    if stats.utterances:
        stats.links_per_utterance = stats.links / stats.utterances
    if stats.dialogues:
        stats.speakers_per_dialogue = speakers / stats.dialogues
    if stats.reference_dialogues is not None and stats.reference_dialogues != stats.dialogues:
        logger.warning("%s split has %d dialogues, reference corpus has %d",
                       split, stats.dialogues, stats.reference_dialogues)
    return stats
