# dadgraph/engine/encoder.py
"""
Utterance features u_i, BiGRU context states g_i and the two-layer relational graph
convolution producing h_i.

Row convention: a sequence of N vectors is an N x d matrix, and weights are applied on the
right (``X @ W``), so W has shape (d_in, d_out).
"""
from __future__ import annotations
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import contracts
from .corpus import Dialogue, Question, tokenize
from .discourse_graph import DialogueGraph, NeighborIndex, neighbor_index
from .errors import EmbeddingError, GraphError, SchemaViolation, ShapeError
from .numerics import Tape, Tensor
from .params import ParamStore
from .vocab import Vocabulary, speaker_token

logger = logging.getLogger(__name__)

GATES = ("z", "r", "h")
DIRECTIONS = ("forward", "backward")


# ---------------------------------------------------------------------------
# utterance encoders
# ---------------------------------------------------------------------------

class PrecomputedEmbeddings:
    """Frozen vectors read from a JSON-lines file, keyed by dialogue id and utterance index / question id."""

    def __init__(self, dim: int) -> None:
        self.dim = dim
        self.utterances: Dict[Tuple[str, int], np.ndarray] = {}
        self.questions: Dict[Tuple[str, str], np.ndarray] = {}

    @classmethod
    def load(cls, path: str | Path) -> "PrecomputedEmbeddings":
        path = Path(path)
        store: Optional[PrecomputedEmbeddings] = None
        with path.open(encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    contracts.validate(rec, "embedding_record.schema.json")
                except (json.JSONDecodeError, SchemaViolation) as e:
                    raise EmbeddingError(f"{path}:{lineno}: bad embedding record: {e}") from e
                vec = np.asarray(rec["vector"], dtype=np.float64)
                if store is None:
                    store = cls(int(vec.size))
                if vec.size != store.dim:
                    raise EmbeddingError(f"{path}:{lineno}: vector has dimension {vec.size}, "
                                         f"first line declared {store.dim}")
                if "utterance_index" in rec:
                    store.utterances[(rec["dialogue_id"], int(rec["utterance_index"]))] = vec
                else:
                    store.questions[(rec["dialogue_id"], rec["question_id"])] = vec
        if store is None:
            raise EmbeddingError(f"{path}: no embedding records")
        logger.info("loaded %d utterance and %d question vectors (dim %d) from %s",
                    len(store.utterances), len(store.questions), store.dim, path)
        return store

    def utterance(self, dialogue_id: str, index: int) -> np.ndarray:
        try:
            return self.utterances[(dialogue_id, index)]
        except KeyError:
            raise EmbeddingError(f"no embedding for dialogue {dialogue_id} utterance {index}") from None

    def question(self, dialogue_id: str, question_id: str) -> np.ndarray:
        try:
            return self.questions[(dialogue_id, question_id)]
        except KeyError:
            raise EmbeddingError(f"no embedding for dialogue {dialogue_id} question {question_id}") from None


def _mean_rows(tape: Tape, table: Tensor, groups: Sequence[Sequence[int]]) -> Tensor:
    """Row i = mean of table rows ``groups[i]``; one gather plus one constant averaging matmul."""
    flat = [i for g in groups for i in g]
    avg = np.zeros((len(groups), len(flat)))
    k = 0
    for row, g in enumerate(groups):
        if not g:
            raise ShapeError(f"group {row} has no tokens to average")
        avg[row, k:k + len(g)] = 1.0 / len(g)
        k += len(g)
    return tape.matmul(tape.constant(avg), tape.take(table, flat))


class BagOfWordsEncoder:
    """u_i = mean of trainable embeddings of the speaker token and the utterance tokens."""

    trainable = True

    def __init__(self, table: Tensor, vocab: Vocabulary) -> None:
        self.table = table
        self.vocab = vocab

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def utterance_ids(self, d: Dialogue) -> List[List[int]]:
        return [[self.vocab.lookup(speaker_token(u.speaker))] + [self.vocab.lookup(t.surface) for t in tokenize(u.text)]
                for u in d.utterances]

    def question_ids(self, q: Question) -> List[int]:
        ids = [self.vocab.lookup(t.surface) for t in tokenize(q.text)]
        return ids or [self.vocab.lookup("<unk>")]

    def encode_utterances(self, tape: Tape, d: Dialogue, ids: Optional[List[List[int]]] = None) -> Tensor:
        return _mean_rows(tape, self.table, ids if ids is not None else self.utterance_ids(d))

    def encode_question(self, tape: Tape, d: Dialogue, q: Question, ids: Optional[List[int]] = None) -> Tensor:
        return _mean_rows(tape, self.table, [ids if ids is not None else self.question_ids(q)])


class PrecomputedEncoder:
    """Injected vectors (e.g. a frozen transformer's CLS features); they never receive gradients."""

    trainable = False

    def __init__(self, embeddings: PrecomputedEmbeddings) -> None:
        self.embeddings = embeddings

    @property
    def dim(self) -> int:
        return self.embeddings.dim

    def utterance_ids(self, d: Dialogue) -> None:
        return None

    def question_ids(self, q: Question) -> None:
        return None

    def encode_utterances(self, tape: Tape, d: Dialogue, ids=None) -> Tensor:
        return tape.constant(np.stack([self.embeddings.utterance(d.id, u.index) for u in d.utterances]))

    def encode_question(self, tape: Tape, d: Dialogue, q: Question, ids=None) -> Tensor:
        return tape.constant(self.embeddings.question(d.id, q.id).reshape(1, -1))


UtteranceEncoder = Union[BagOfWordsEncoder, PrecomputedEncoder]


def encode_utterances(tape: Tape, d: Dialogue, encoder: UtteranceEncoder) -> Tensor:
    return encoder.encode_utterances(tape, d)


# ---------------------------------------------------------------------------
# BiGRU
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GruCellParams:
    W: Dict[str, Tensor]   # input -> gate, (d_in, H)
    U: Dict[str, Tensor]   # state -> gate, (H, H)
    b: Dict[str, Tensor]   # (H,)

    @property
    def hidden(self) -> int:
        return self.U["z"].shape[0]

    @property
    def input_dim(self) -> int:
        return self.W["z"].shape[0]


@dataclass(frozen=True)
class GruParams:
    forward: GruCellParams
    backward: GruCellParams

    @classmethod
    def create(cls, store: ParamStore, input_dim: int, hidden: int) -> "GruParams":
        for direction in DIRECTIONS:
            for g in GATES:
                store.matrix(f"gru.{direction}.W_{g}", (input_dim, hidden))
                store.matrix(f"gru.{direction}.U_{g}", (hidden, hidden))
                store.bias(f"gru.{direction}.b_{g}", hidden)
        return cls.from_store(store)

    @classmethod
    def from_store(cls, store: ParamStore) -> "GruParams":
        cells = [
            GruCellParams(
                W={g: store[f"gru.{d}.W_{g}"] for g in GATES},
                U={g: store[f"gru.{d}.U_{g}"] for g in GATES},
                b={g: store[f"gru.{d}.b_{g}"] for g in GATES},
            )
            for d in DIRECTIONS
        ]
        return cls(*cells)


def _gru_scan(tape: Tape, U: Tensor, cell: GruCellParams, reverse: bool) -> Tensor:
    n, hidden = U.shape[0], cell.hidden
    x = {g: tape.matmul(U, cell.W[g]) for g in GATES}
    b = {g: tape.reshape(cell.b[g], (1, hidden)) for g in GATES}
    ones = tape.constant(np.ones((1, hidden)))
    h = tape.constant(np.zeros((1, hidden)))
    states: List[Optional[Tensor]] = [None] * n
    for i in (range(n - 1, -1, -1) if reverse else range(n)):
        z = tape.elementwise("sigmoid", tape.add(tape.add(tape.take(x["z"], [i]), tape.matmul(h, cell.U["z"])), b["z"]))
        r = tape.elementwise("sigmoid", tape.add(tape.add(tape.take(x["r"], [i]), tape.matmul(h, cell.U["r"])), b["r"]))
        cand = tape.elementwise("tanh", tape.add(
            tape.add(tape.take(x["h"], [i]), tape.matmul(tape.mul(r, h), cell.U["h"])), b["h"]))
        h = tape.add(tape.mul(tape.sub(ones, z), cand), tape.mul(z, h))
        states[i] = h
    return tape.reshape(tape.stack(states), (n, hidden))  # type: ignore[arg-type]


def bigru_forward(tape: Tape, U: Tensor, p: GruParams) -> Tensor:
    """g_i = [forward state at i ; backward state at i], zero initial states."""
    if U.values.ndim != 2 or U.shape[0] < 1:
        raise ShapeError(f"BiGRU expects an N x d matrix with N >= 1, got {U.shape}")
    if U.shape[1] != p.forward.input_dim:
        raise ShapeError(f"BiGRU input dimension {U.shape[1]} does not match parameters ({p.forward.input_dim})")
    fwd = _gru_scan(tape, U, p.forward, reverse=False)
    bwd = _gru_scan(tape, U, p.backward, reverse=True)
    return tape.concat(fwd, bwd, axis=1)


# ---------------------------------------------------------------------------
# relational graph convolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RgcnParams:
    relation_vocab: Tuple[str, ...]
    layer1_rel: Tuple[Tensor, ...]
    layer1_self: Tensor
    layer2_self: Tensor
    layer2_shared: Optional[Tensor] = None
    layer2_rel: Optional[Tuple[Tensor, ...]] = None

    @property
    def relation_matrix_count(self) -> int:
        return len(self.layer1_rel)

    @classmethod
    def create(cls, store: ParamStore, relation_vocab: Sequence[str], input_dim: int, hidden: int,
               per_relation_layer2: bool = False) -> "RgcnParams":
        for name in relation_vocab:
            store.matrix(f"rgcn.layer1.W_rel.{name}", (input_dim, hidden))
        store.matrix("rgcn.layer1.W_self", (input_dim, hidden))
        if per_relation_layer2:
            for name in relation_vocab:
                store.matrix(f"rgcn.layer2.W_rel.{name}", (hidden, hidden))
        else:
            store.matrix("rgcn.layer2.W", (hidden, hidden))
        store.matrix("rgcn.layer2.W_self", (hidden, hidden))
        return cls.from_store(store, relation_vocab)

    @classmethod
    def from_store(cls, store: ParamStore, relation_vocab: Sequence[str]) -> "RgcnParams":
        vocab = tuple(relation_vocab)
        per_rel = "rgcn.layer2.W" not in store
        return cls(
            relation_vocab=vocab,
            layer1_rel=tuple(store[f"rgcn.layer1.W_rel.{n}"] for n in vocab),
            layer1_self=store["rgcn.layer1.W_self"],
            layer2_self=store["rgcn.layer2.W_self"],
            layer2_shared=None if per_rel else store["rgcn.layer2.W"],
            layer2_rel=tuple(store[f"rgcn.layer2.W_rel.{n}"] for n in vocab) if per_rel else None,
        )


@dataclass(frozen=True)
class GraphOperators:
    """Constant aggregation matrices of one graph, built once per dialogue."""

    relation: Dict[int, np.ndarray]     # A_r[i, j] = 1/|N_i^r|, active relations only
    union: Optional[np.ndarray]         # A[i, j] = 1 for j in the union of N_i^r; None if edgeless


def graph_operators(g: DialogueGraph, index: Optional[NeighborIndex] = None) -> GraphOperators:
    index = index or neighbor_index(g)
    active = index.active_relations()
    return GraphOperators(
        relation={r: index.relation_adjacency(r) for r in active},
        union=index.union_adjacency() if active else None,
    )


def _aggregate(tape: Tape, X: Tensor, self_w: Tensor, terms: List[Tuple[np.ndarray, Tensor]]) -> Tensor:
    out = tape.matmul(X, self_w)
    for adj, w in terms:
        out = tape.add(out, tape.matmul(tape.matmul(tape.constant(adj), X), w))
    return out


def rgcn_forward(tape: Tape, G: Tensor, graph: DialogueGraph, p: RgcnParams, activation: str = "relu",
                 ops: Optional[GraphOperators] = None) -> Tensor:
    """
    Layer 1: h1_i = act(W1_self g_i + sum_r sum_{j in N_i^r} W1_r g_j / |N_i^r|).
    Layer 2: h2_i = act(W2_self h1_i + sum_{j in N_i} W2 h1_j), N_i the union over relations;
    with per-relation layer 2 the sum is relation-wise and normalised like layer 1.
    """
    if graph.num_nodes != G.shape[0]:
        raise GraphError(f"graph has {graph.num_nodes} nodes, features have {G.shape[0]} rows")
    for e in graph.edges:
        if e.relation_id >= p.relation_matrix_count:
            raise GraphError(f"relation id {e.relation_id} outside parameter vocabulary of {p.relation_matrix_count}")
    ops = ops or graph_operators(graph)
    rels = sorted(ops.relation)

    h1 = tape.activation(activation, _aggregate(tape, G, p.layer1_self, [(ops.relation[r], p.layer1_rel[r]) for r in rels]))
    if p.layer2_rel is not None:
        terms = [(ops.relation[r], p.layer2_rel[r]) for r in rels]
    else:
        terms = [(ops.union, p.layer2_shared)] if ops.union is not None else []  # type: ignore[list-item]
    return tape.activation(activation, _aggregate(tape, h1, p.layer2_self, terms))
