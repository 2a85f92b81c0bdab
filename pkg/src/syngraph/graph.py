"""Syntactic graphs: word-order chain, dependency and constituency structure
combined into one directed graph over typed nodes."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus_io import ROOT, ConstituentNode, Example


class GraphError(ValueError):
    pass


class NodeKind(str, enum.Enum):
    WORD = "word"
    EDGE_LABEL = "edge_label"
    CONSTITUENT = "constituent"


@dataclass(frozen=True)
class FeatureFlags:
    word_order: bool = True
    dependency: bool = True
    constituency: bool = True

    def __post_init__(self):
        if not (self.word_order or self.dependency or self.constituency):
            raise GraphError("at least one feature type must be enabled")

    @property
    def name(self) -> str:
        parts = [n for n, on in (("word_order", self.word_order), ("dependency", self.dependency),
                                 ("constituency", self.constituency)) if on]
        return "+".join(parts)

    @classmethod
    def parse(cls, text: str) -> "FeatureFlags":
        """Build flags from ``word_order+dependency``-style names; ``all`` enables everything."""
        if text.strip() == "all":
            return cls()
        names = {s.strip() for s in text.replace(",", "+").split("+") if s.strip()}
        unknown = names - {"word_order", "dependency", "constituency"}
        if unknown:
            raise GraphError(f"unknown feature(s): {sorted(unknown)}")
        return cls("word_order" in names, "dependency" in names, "constituency" in names)

    def to_dict(self) -> dict:
        return {"word_order": self.word_order, "dependency": self.dependency,
                "constituency": self.constituency}


ALL_FEATURES = FeatureFlags()
WORD_ORDER_ONLY = FeatureFlags(True, False, False)


@dataclass(frozen=True)
class GraphNode:
    id: int
    text: str
    kind: NodeKind
    word_index: int | None = None


@dataclass(frozen=True)
class SyntacticGraph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[tuple[int, int], ...]
    flags: FeatureFlags = ALL_FEATURES

    def __post_init__(self):
        n = len(self.nodes)
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise GraphError(f"node ids must be dense, found {node.id} at position {i}")
            if (node.kind is NodeKind.WORD) != (node.word_index is not None):
                raise GraphError(f"node {i}: only word nodes carry a word index")
        for u, v in self.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u}, {v}) has an invalid endpoint")
            if u == v:
                raise GraphError(f"self-loop on node {u}")
        if len(set(self.edges)) != len(self.edges):
            raise GraphError("duplicate edges")

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def adjacency(self) -> tuple[list[list[int]], list[list[int]]]:
        """Sorted forward and backward neighbour lists for every node."""
        fw: list[list[int]] = [[] for _ in self.nodes]
        bw: list[list[int]] = [[] for _ in self.nodes]
        for u, v in self.edges:
            fw[u].append(v)
            bw[v].append(u)
        return [sorted(x) for x in fw], [sorted(x) for x in bw]


@dataclass(frozen=True)
class LabeledEdge:
    src: int
    dst: int
    label: str | None = None


def rewrite_labeled_edges(nodes: Sequence[GraphNode], edges: Iterable[LabeledEdge],
                          flags: FeatureFlags = ALL_FEATURES) -> SyntacticGraph:
    """Replace every labeled edge u->v by u->x->v where x is a fresh label node.

    Label nodes are created per edge, in edge order, after the existing nodes.
    """
    out_nodes = list(nodes)
    out_edges: list[tuple[int, int]] = []
    seen = set()

    def emit(u, v):
        if (u, v) not in seen:
            seen.add((u, v))
            out_edges.append((u, v))

    for e in edges:
        if e.label is None:
            emit(e.src, e.dst)
            continue
        x = len(out_nodes)
        out_nodes.append(GraphNode(x, e.label, NodeKind.EDGE_LABEL))
        emit(e.src, x)
        emit(x, e.dst)
    return SyntacticGraph(tuple(out_nodes), tuple(out_edges), flags)


def build_syntactic_graph(ex: Example, flags: FeatureFlags = ALL_FEATURES) -> SyntacticGraph:
    """Build the graph for one question.

    Node order: word nodes, then constituent nodes in pre-order, then one
    label node per non-root dependency arc.
    """
    n = len(ex.tokens)
    if n == 0:
        raise GraphError("cannot build a graph for an empty sentence")
    if flags.dependency and ex.dep is None:
        raise GraphError("dependency features requested but the example has no dependency parse")
    if flags.constituency and ex.cons is None:
        raise GraphError("constituency features requested but the example has no constituent tree")

    nodes = [GraphNode(i, t.surface, NodeKind.WORD, i) for i, t in enumerate(ex.tokens)]
    edges: list[LabeledEdge] = []

    if flags.word_order:
        for i in range(n - 1):
            edges.append(LabeledEdge(i, i + 1))
            edges.append(LabeledEdge(i + 1, i))

    if flags.constituency:
        ids: dict[int, int] = {}
        for nt in ex.cons.nonterminals():
            ids[id(nt)] = len(nodes)
            nodes.append(GraphNode(len(nodes), nt.label, NodeKind.CONSTITUENT))
        for nt in ex.cons.nonterminals():
            for child in nt.children:
                dst = ids[id(child)] if isinstance(child, ConstituentNode) else child
                edges.append(LabeledEdge(ids[id(nt)], dst))

    if flags.dependency:
        for head, dep, label in ex.dep.arcs:
            if head != ROOT:
                edges.append(LabeledEdge(head, dep, label))

    return rewrite_labeled_edges(nodes, edges, flags)


def neighbors_forward(g: SyntacticGraph, v: int) -> set[int]:
    if not 0 <= v < g.num_nodes:
        raise GraphError(f"invalid node id {v}")
    return {b for a, b in g.edges if a == v}


def neighbors_backward(g: SyntacticGraph, v: int) -> set[int]:
    if not 0 <= v < g.num_nodes:
        raise GraphError(f"invalid node id {v}")
    return {a for a, b in g.edges if b == v}


def graph_to_dict(g: SyntacticGraph) -> dict:
    return {
        "nodes": [{"id": n.id, "text": n.text, "kind": n.kind.value, "word_index": n.word_index}
                  for n in g.nodes],
        "edges": [list(e) for e in g.edges],
        "flags": g.flags.to_dict(),
    }


def graph_from_dict(obj: dict) -> SyntacticGraph:
    try:
        nodes = tuple(GraphNode(int(n["id"]), str(n["text"]), NodeKind(n["kind"]),
                                None if n["word_index"] is None else int(n["word_index"]))
                      for n in obj["nodes"])
        edges = tuple((int(u), int(v)) for u, v in obj["edges"])
        flags = FeatureFlags(**{k: bool(obj["flags"][k])
                                for k in ("word_order", "dependency", "constituency")})
    except (KeyError, TypeError, ValueError) as err:
        raise GraphError(f"malformed graph record: {err}") from None
    return SyntacticGraph(nodes, edges, flags)


def serialize_graph(g: SyntacticGraph) -> str:
    return json.dumps(graph_to_dict(g), sort_keys=True)


def deserialize_graph(text: str) -> SyntacticGraph:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as err:
        raise GraphError(f"malformed graph record: {err}") from None
    if not isinstance(obj, dict):
        raise GraphError("graph record must be a JSON object")
    return graph_from_dict(obj)
