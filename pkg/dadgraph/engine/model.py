# dadgraph/engine/model.py
"""
The DADgraph model: utterance encoder -> BiGRU -> relational GCN -> word attention ->
question fusion -> span scoring.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .config import BagOfWordsConfig, TrainConfig
from .corpus import Dialogue, FlattenedContext, Question, align_answer_span, flatten_dialogue
from .discourse_graph import DialogueGraph, build_graph
from .encoder import (
    BagOfWordsEncoder,
    GraphOperators,
    GruParams,
    PrecomputedEmbeddings,
    PrecomputedEncoder,
    RgcnParams,
    UtteranceEncoder,
    bigru_forward,
    graph_operators,
    rgcn_forward,
)
from .errors import ShapeError, VocabularyError
from .mrc_head import MrcParams, Prediction, SpanScores, WordFeatures, attention_fuse, decode, fuse_concat, question_fuse, score_spans
from .numerics import Tape, Tensor
from .params import ParamStore
from .vocab import UNK_ID, Vocabulary

logger = logging.getLogger(__name__)

WORD_TABLE = "embedding.word"
UTTERANCE_TABLE = "embedding.utterance"


@dataclass
class DialogueFeatures:
    """Everything about one dialogue that does not depend on parameters."""

    dialogue: Dialogue
    context: FlattenedContext
    graph: DialogueGraph
    operators: GraphOperators
    word_ids: List[int]
    utterance_ids: Optional[List[List[int]]]
    oov: int = 0


@dataclass
class QuestionFeatures:
    dialogue: DialogueFeatures
    question: Question
    question_ids: Optional[List[int]]
    gold: Tuple[int, int]           # (0, 0) for unanswerable questions
    oov: int = 0

    @property
    def question_id(self) -> str:
        return self.question.id


@dataclass
class PreparedCorpus:
    questions: List[QuestionFeatures] = field(default_factory=list)
    oov_tokens: int = 0
    total_tokens: int = 0

    def __len__(self) -> int:
        return len(self.questions)

    def __iter__(self):
        return iter(self.questions)


def train_loss(tape: Tape, scores: SpanScores, gold: Tuple[int, int]) -> Tensor:
    """-log softmax(start)[gold_start] - log softmax(end)[gold_end]; the no-answer target is (0, 0)."""
    n = scores.start.shape[0]
    gs, ge = gold
    if not (0 <= gs < n and 0 <= ge < n):
        raise ShapeError(f"gold span {gold} outside {n} positions")
    ls = tape.take(tape.log_softmax(scores.start), [gs])
    le = tape.take(tape.log_softmax(scores.end), [ge])
    return tape.reshape(tape.elementwise("neg", tape.add(ls, le)), ())


class DadGraphModel:
    def __init__(self, config: TrainConfig, vocab: Vocabulary, params: ParamStore,
                 embeddings: Optional[PrecomputedEmbeddings] = None) -> None:
        self.config = config
        self.vocab = vocab
        self.params = params
        self.graph_mode = config.graph.to_mode()

        if WORD_TABLE not in params:
            raise VocabularyError(f"parameter store has no {WORD_TABLE!r} table")
        if params[WORD_TABLE].shape[0] != len(vocab):
            raise VocabularyError(f"word table has {params[WORD_TABLE].shape[0]} rows, "
                                  f"vocabulary has {len(vocab)} entries")
        self.word_table = params[WORD_TABLE]

        self.encoder: UtteranceEncoder
        if isinstance(config.encoder.utterance, BagOfWordsConfig):
            self.encoder = BagOfWordsEncoder(params[UTTERANCE_TABLE], vocab)
        else:
            if embeddings is None:
                embeddings = PrecomputedEmbeddings.load(config.encoder.utterance.path)
            if embeddings.dim != config.encoder.rgcn_hidden:
                raise ShapeError(f"precomputed vectors have dimension {embeddings.dim}, "
                                 f"questions must match encoder.rgcn_hidden ({config.encoder.rgcn_hidden})")
            self.encoder = PrecomputedEncoder(embeddings)

        self.gru = GruParams.from_store(params)
        self.rgcn = RgcnParams.from_store(params, self.graph_mode.relation_vocab)
        self.mrc = MrcParams.from_store(params, config.mrc.tau, config.mrc.max_answer_len)

    # --- construction ---
    @classmethod
    def initialize(cls, config: TrainConfig, train_dialogues: Sequence[Dialogue],
                   embeddings: Optional[PrecomputedEmbeddings] = None) -> "DadGraphModel":
        """Fresh parameters for ``config`` over the vocabulary of the training split."""
        vocab = Vocabulary.build(train_dialogues)
        enc = config.encoder
        store = ParamStore(config.seed)
        store.matrix(WORD_TABLE, (len(vocab), config.mrc.word_dim))
        if isinstance(enc.utterance, BagOfWordsConfig):
            store.matrix(UTTERANCE_TABLE, (len(vocab), enc.utterance.embed_dim))
            input_dim = enc.utterance.embed_dim
        else:
            if embeddings is None:
                embeddings = PrecomputedEmbeddings.load(enc.utterance.path)
            input_dim = embeddings.dim
        GruParams.create(store, input_dim, enc.gru_hidden)
        RgcnParams.create(store, config.graph.to_mode().relation_vocab, 2 * enc.gru_hidden, enc.rgcn_hidden,
                          per_relation_layer2=enc.layer2_per_relation)
        MrcParams.create(store, config.mrc.word_dim + enc.rgcn_hidden)
        logger.info("initialised %d parameters in %d tensors (vocabulary %d, %d relation matrices)",
                    store.count(), len(store), len(vocab), len(config.graph.to_mode().relation_vocab))
        return cls(config, vocab, store, embeddings)

    @property
    def relation_matrix_count(self) -> int:
        return self.rgcn.relation_matrix_count

    def parameter_count(self) -> int:
        return self.params.count()

    # --- features ---
    def prepare_dialogue(self, d: Dialogue) -> DialogueFeatures:
        ctx = flatten_dialogue(d)
        graph = build_graph(d, self.graph_mode)
        word_ids, oov = self.vocab.lookup_all(t.surface for t in ctx.tokens)
        return DialogueFeatures(d, ctx, graph, graph_operators(graph), word_ids,
                                self.encoder.utterance_ids(d), oov)

    def prepare(self, dialogues: Sequence[Dialogue]) -> PreparedCorpus:
        out = PreparedCorpus()
        for d in dialogues:
            df = self.prepare_dialogue(d)
            out.oov_tokens += df.oov
            out.total_tokens += len(df.word_ids) - 1
            for q in d.questions:
                gold = (0, 0)
                if q.is_answerable:
                    a = q.answers[0]
                    gold = align_answer_span(df.context, a.char_start, a.text)
                q_ids = self.encoder.question_ids(q)
                q_oov = 0
                if q_ids is not None:
                    q_oov = sum(i == UNK_ID for i in q_ids)
                out.questions.append(QuestionFeatures(df, q, q_ids, gold, q_oov))
                out.oov_tokens += q_oov
        if out.oov_tokens:
            logger.info("%d out-of-vocabulary tokens (context has %d tokens in total)", out.oov_tokens, out.total_tokens)
        return out

    # --- forward ---
    def features(self, tape: Tape, qf: QuestionFeatures) -> WordFeatures:
        df = qf.dialogue
        U = self.encoder.encode_utterances(tape, df.dialogue, df.utterance_ids)
        G = bigru_forward(tape, U, self.gru)
        H = rgcn_forward(tape, G, df.graph, self.rgcn, self.config.encoder.activation, df.operators)
        W = tape.take(self.word_table, df.word_ids)
        F = attention_fuse(tape, H, W)
        q = self.encoder.encode_question(tape, df.dialogue, qf.question, qf.question_ids)
        C = question_fuse(tape, F, q)
        return WordFeatures(W, F, C, fuse_concat(tape, W, C))

    def forward(self, tape: Tape, qf: QuestionFeatures) -> SpanScores:
        return score_spans(tape, self.features(tape, qf).t, self.mrc, self.config.mrc.na_vector)

    def loss(self, tape: Tape, qf: QuestionFeatures) -> Tensor:
        return train_loss(tape, self.forward(tape, qf), qf.gold)

    def predict(self, qf: QuestionFeatures, tau: Optional[float] = None) -> Prediction:
        scores = self.forward(Tape(), qf)
        return decode(scores.start.values, scores.end.values, scores.s_na, self.mrc,
                      qf.dialogue.context, qf.question_id, tau)

    def trainable_params(self) -> Dict[str, Tensor]:
        return self.params.as_dict()
