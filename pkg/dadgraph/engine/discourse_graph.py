# dadgraph/engine/discourse_graph.py
"""
Directed, relation-typed dialogue graphs.

Edges run head -> dependent (the depended-on utterance feeds the one that depends on it).
Edge lists are always stored in canonical order, sorted by (dst, src, relation_id), so equal
inputs give identical graphs and identical aggregation order downstream.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .corpus import RELATION_NAMES, Dialogue
from .errors import GraphError

logger = logging.getLogger(__name__)

SPEAKER_RELATIONS = ("same-speaker", "different-speaker")
SPEAKER_TEMPORAL_RELATIONS = (
    "same-speaker/forward", "same-speaker/backward",
    "different-speaker/forward", "different-speaker/backward",
)
CONNECTED_RELATIONS = ("connected",)
RADIAL_DEGREE = 3


class GraphKind(str, Enum):
    GOLD = "gold"
    LINKS = "links"
    FULL = "full"


@dataclass(frozen=True)
class GraphMode:
    kind: GraphKind = GraphKind.GOLD
    window: Optional[int] = None
    # links-only ablation: "speaker" or "speaker_temporal"
    links_relations: str = "speaker"

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", GraphKind(self.kind))
        if self.window is not None and self.window < 1:
            raise GraphError(f"window must be >= 1, got {self.window}")
        if self.window is not None and self.kind is not GraphKind.FULL:
            raise GraphError("window only applies to the fully connected mode")
        if self.links_relations not in ("speaker", "speaker_temporal"):
            raise GraphError(f"unknown links-only relation classes {self.links_relations!r}")

    @classmethod
    def gold(cls) -> "GraphMode":
        return cls(GraphKind.GOLD)

    @classmethod
    def links_only(cls, relations: str = "speaker") -> "GraphMode":
        return cls(GraphKind.LINKS, links_relations=relations)

    @classmethod
    def fully_connected(cls, window: Optional[int] = None) -> "GraphMode":
        return cls(GraphKind.FULL, window=window)

    @property
    def relation_vocab(self) -> Tuple[str, ...]:
        if self.kind is GraphKind.GOLD:
            return RELATION_NAMES
        if self.kind is GraphKind.LINKS:
            return SPEAKER_RELATIONS if self.links_relations == "speaker" else SPEAKER_TEMPORAL_RELATIONS
        return CONNECTED_RELATIONS


class Edge(NamedTuple):
    src: int
    dst: int
    relation_id: int


def _canonical(edges) -> Tuple[Edge, ...]:
    return tuple(sorted(set(edges), key=lambda e: (e.dst, e.src, e.relation_id)))


@dataclass(frozen=True)
class DialogueGraph:
    num_nodes: int
    edges: Tuple[Edge, ...]
    relation_vocab: Tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", _canonical(Edge(*e) for e in self.edges))
        for e in self.edges:
            if not (0 <= e.src < self.num_nodes and 0 <= e.dst < self.num_nodes):
                raise GraphError(f"edge {e.src}->{e.dst} outside {self.num_nodes} nodes")
            if e.src == e.dst:
                raise GraphError(f"self-edge on node {e.src}")
            if not 0 <= e.relation_id < len(self.relation_vocab):
                raise GraphError(f"relation id {e.relation_id} outside vocabulary of {len(self.relation_vocab)}")


def _speaker_class(d: Dialogue, head: int, dependent: int, temporal: bool) -> int:
    same = d.utterances[head].speaker == d.utterances[dependent].speaker
    if not temporal:
        return 0 if same else 1
    return (0 if same else 2) + (0 if head < dependent else 1)


def build_graph(d: Dialogue, mode: GraphMode = GraphMode()) -> DialogueGraph:
    n = len(d.utterances)
    for link in d.links:
        for end in (link.head, link.dependent):
            if not 0 <= end < n:
                raise GraphError(f"dialogue {d.id}: link {link.head}->{link.dependent} references "
                                 f"utterance {end}, dialogue has {n}")

    if mode.kind is GraphKind.GOLD:
        edges = [Edge(l.head, l.dependent, l.relation.id) for l in d.links]
    elif mode.kind is GraphKind.LINKS:
        temporal = mode.links_relations == "speaker_temporal"
        edges = [Edge(l.head, l.dependent, _speaker_class(d, l.head, l.dependent, temporal)) for l in d.links]
    else:
        w = mode.window
        edges = [Edge(i, j, 0) for i in range(n) for j in range(n)
                 if i != j and (w is None or abs(i - j) <= w)]
    return DialogueGraph(n, tuple(edges), mode.relation_vocab)


@dataclass(frozen=True)
class NeighborIndex:
    """In-neighbour sets N_i^r, each sorted ascending."""

    num_nodes: int
    relation_vocab: Tuple[str, ...]
    sets: Tuple[Tuple[Tuple[int, ...], ...], ...]

    def neighbors(self, node: int, relation_id: int) -> Tuple[int, ...]:
        return self.sets[node][relation_id]

    def normalizer(self, node: int, relation_id: int) -> int:
        return len(self.sets[node][relation_id])

    def union(self, node: int) -> Tuple[int, ...]:
        return tuple(sorted({j for per_rel in self.sets[node] for j in per_rel}))

    def active_relations(self) -> List[int]:
        return [r for r in range(len(self.relation_vocab)) if any(self.sets[i][r] for i in range(self.num_nodes))]

    def relation_adjacency(self, relation_id: int) -> np.ndarray:
        """A[i, j] = 1 / |N_i^r| for j in N_i^r."""
        a = np.zeros((self.num_nodes, self.num_nodes))
        for i in range(self.num_nodes):
            srcs = self.sets[i][relation_id]
            for j in srcs:
                a[i, j] = 1.0 / len(srcs)
        return a

    def union_adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        for i in range(self.num_nodes):
            for j in self.union(i):
                a[i, j] = 1.0
        return a


def neighbor_index(g: DialogueGraph) -> NeighborIndex:
    sets: List[List[List[int]]] = [[[] for _ in g.relation_vocab] for _ in range(g.num_nodes)]
    for e in g.edges:
        sets[e.dst][e.relation_id].append(e.src)
    return NeighborIndex(
        g.num_nodes,
        g.relation_vocab,
        tuple(tuple(tuple(sorted(s)) for s in per_node) for per_node in sets),
    )


@dataclass
class GraphStats:
    num_nodes: int
    edges: int
    mean_in_degree: float
    mean_out_degree: float
    max_in_degree: int
    max_out_degree: int
    components: int
    relation_histogram: Dict[str, int]
    radial_nodes: List[int] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def _weak_components(n: int, edges) -> int:
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in edges:
        a, b = find(e.src), find(e.dst)
        if a != b:
            parent[max(a, b)] = min(a, b)
    return len({find(i) for i in range(n)})


def graph_stats(g: DialogueGraph) -> GraphStats:
    n = g.num_nodes
    indeg = [0] * n
    outdeg = [0] * n
    hist = {name: 0 for name in g.relation_vocab}
    for e in g.edges:
        indeg[e.dst] += 1
        outdeg[e.src] += 1
        hist[g.relation_vocab[e.relation_id]] += 1
    components = _weak_components(n, g.edges)
    stats = GraphStats(
        num_nodes=n,
        edges=len(g.edges),
        mean_in_degree=len(g.edges) / n if n else 0.0,
        mean_out_degree=len(g.edges) / n if n else 0.0,
        max_in_degree=max(indeg, default=0),
        max_out_degree=max(outdeg, default=0),
        components=components,
        relation_histogram=hist,
        radial_nodes=[i for i in range(n) if indeg[i] >= RADIAL_DEGREE or outdeg[i] >= RADIAL_DEGREE],
    )
    if components > 1:
        msg = f"graph has {components} weakly connected components"
        stats.warnings.append(msg)
        logger.warning(msg)
    return stats


def edge_list_lines(g: DialogueGraph) -> List[str]:
    return [f"{e.src} {e.dst} {g.relation_vocab[e.relation_id]}" for e in g.edges]


def write_edge_list(g: DialogueGraph, path: str | Path) -> Path:
    path = Path(path)
    path.write_text("".join(line + "\n" for line in edge_list_lines(g)), encoding="utf-8")
    return path
