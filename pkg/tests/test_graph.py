import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_example
from syngraph.corpus_io import Example, parse_bracketed_tree, parse_conllu
from syngraph.graph import (ALL_FEATURES, WORD_ORDER_ONLY, FeatureFlags, GraphError, GraphNode,
                            LabeledEdge, NodeKind, SyntacticGraph, build_syntactic_graph,
                            deserialize_graph, neighbors_backward, neighbors_forward,
                            rewrite_labeled_edges, serialize_graph)

EXAMPLE_SENTENCE = ("what are the jobs for programmer that has salary 50000 "
                   "that uses c++ and not related with AI")


@st.composite
def graphs(draw, max_nodes=50):
    n = draw(st.integers(1, max_nodes))
    kinds = draw(st.lists(st.sampled_from(list(NodeKind)), min_size=n, max_size=n))
    texts = draw(st.lists(st.text(min_size=1, max_size=6), min_size=n, max_size=n))
    nodes = tuple(GraphNode(i, texts[i], k, i if k is NodeKind.WORD else None)
                  for i, k in enumerate(kinds))
    pairs = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda e: e[0] != e[1])
    edges = draw(st.lists(pairs, max_size=3 * n, unique=True)) if n > 1 else []
    flags = draw(st.sampled_from([ALL_FEATURES, WORD_ORDER_ONLY, FeatureFlags(False, True, True)]))
    return SyntacticGraph(nodes, tuple(edges), flags)


def test_two_words_word_order():
    g = build_syntactic_graph(Example.from_strings("list jobs", "job"), WORD_ORDER_ONLY)
    assert g.num_nodes == 2
    assert set(g.edges) == {(0, 1), (1, 0)}


def test_example_sentence_word_order_counts():
    ex = Example.from_strings(EXAMPLE_SENTENCE, "x")
    assert len(ex.tokens) == 18
    g = build_syntactic_graph(ex, WORD_ORDER_ONLY)
    assert sum(n.kind is NodeKind.WORD for n in g.nodes) == 18
    assert len(g.edges) == 34


def test_dependency_rewrite_hand_example():
    ex = Example.from_strings("the jobs", "job", dep=parse_conllu("1 the 2 det\n2 jobs 0 root"))
    g = build_syntactic_graph(ex, FeatureFlags(True, True, False))
    assert [n.text for n in g.nodes] == ["the", "jobs", "det"]
    assert g.nodes[2].kind is NodeKind.EDGE_LABEL and g.nodes[2].word_index is None
    assert set(g.edges) == {(0, 1), (1, 0), (1, 2), (2, 0)}


def test_constituency_edges():
    ex = Example.from_strings("the jobs", "job", cons=parse_bracketed_tree("(NP (DT the) (NNS jobs))"))
    g = build_syntactic_graph(ex, FeatureFlags(False, False, True))
    assert [n.text for n in g.nodes] == ["the", "jobs", "NP", "DT", "NNS"]
    assert set(g.edges) == {(2, 3), (2, 4), (3, 0), (4, 1)}


def test_missing_parse_is_error():
    ex = Example.from_strings("the jobs", "job")
    with pytest.raises(GraphError):
        build_syntactic_graph(ex, FeatureFlags(True, True, False))
    with pytest.raises(GraphError):
        build_syntactic_graph(ex, FeatureFlags(True, False, True))


def test_flags_need_one_feature():
    with pytest.raises(ValueError):
        FeatureFlags(False, False, False)


def test_flags_parse_and_name():
    assert FeatureFlags.parse("all") == ALL_FEATURES
    f = FeatureFlags.parse("word_order+dependency")
    assert f == FeatureFlags(True, True, False)
    assert FeatureFlags.parse(f.name) == f


# --- closed-form counts on random sentences --------------------------------------------

def closed_form(ex, flags):
    n = len(ex.tokens)
    arcs = len(ex.dep.non_root_arcs()) if flags.dependency else 0
    nts = len(ex.cons.nonterminals()) if flags.constituency else 0
    tree_edges = ex.cons.edge_count() if flags.constituency else 0
    return n + arcs + nts, (2 * (n - 1) if flags.word_order else 0) + 2 * arcs + tree_edges


def count_tree_edges(node):
    """Independent recursive count of parent-child links."""
    if isinstance(node, int):
        return 0
    return len(node.children) + sum(count_tree_edges(c) for c in node.children)


@pytest.mark.parametrize("flags", [ALL_FEATURES, WORD_ORDER_ONLY, FeatureFlags(True, True, False),
                                   FeatureFlags(True, False, True), FeatureFlags(False, True, True)])
def test_counts_match_closed_form(flags):
    rng = np.random.default_rng(11)
    for _ in range(200):
        ex = random_example(rng)
        assert ex.cons.edge_count() == count_tree_edges(ex.cons.root)
        g = build_syntactic_graph(ex, flags)
        assert (g.num_nodes, len(g.edges)) == closed_form(ex, flags)


def test_ablation_soundness():
    rng = np.random.default_rng(3)
    for _ in range(50):
        ex = random_example(rng)
        g = build_syntactic_graph(ex, FeatureFlags(False, False, True))
        assert not any(n.kind is NodeKind.EDGE_LABEL for n in g.nodes)
        words = {n.id for n in g.nodes if n.kind is NodeKind.WORD}
        assert not any(u in words and v in words for u, v in g.edges)


def test_constituent_part_is_acyclic_and_connected():
    rng = np.random.default_rng(5)
    for _ in range(50):
        ex = random_example(rng)
        g = build_syntactic_graph(ex, ALL_FEATURES)
        # cycle check on constituent edges via Kahn's algorithm
        cons = [(u, v) for u, v in g.edges if g.nodes[u].kind is NodeKind.CONSTITUENT]
        indeg = {i: 0 for i in range(g.num_nodes)}
        for _, v in cons:
            indeg[v] += 1
        queue = [i for i, d in indeg.items() if d == 0]
        seen = 0
        while queue:
            u = queue.pop()
            seen += 1
            for a, b in cons:
                if a == u:
                    indeg[b] -= 1
                    if indeg[b] == 0:
                        queue.append(b)
        assert seen == g.num_nodes
        # undirected reachability from word 0
        und = {i: set() for i in range(g.num_nodes)}
        for u, v in g.edges:
            und[u].add(v)
            und[v].add(u)
        stack, reach = [0], {0}
        while stack:
            for w in und[stack.pop()] - reach:
                reach.add(w)
                stack.append(w)
        assert len(reach) == g.num_nodes


# --- rewriting ---------------------------------------------------------------------------

def word_nodes(n):
    return [GraphNode(i, f"w{i}", NodeKind.WORD, i) for i in range(n)]


def test_rewrite_identity_without_labels():
    edges = [LabeledEdge(0, 1), LabeledEdge(1, 2)]
    g = rewrite_labeled_edges(word_nodes(3), edges)
    assert g.num_nodes == 3 and g.edges == ((0, 1), (1, 2))


def test_rewrite_one_label():
    g = rewrite_labeled_edges(word_nodes(3), [LabeledEdge(0, 1), LabeledEdge(1, 2, "det")])
    assert g.num_nodes == 4 and len(g.edges) == 3
    assert g.nodes[3].text == "det" and g.nodes[3].kind is NodeKind.EDGE_LABEL


def test_rewrite_same_label_gives_distinct_nodes():
    g = rewrite_labeled_edges(word_nodes(3), [LabeledEdge(0, 1, "det"), LabeledEdge(2, 1, "det")])
    labels = [n for n in g.nodes if n.kind is NodeKind.EDGE_LABEL]
    assert len(labels) == 2 and labels[0].id != labels[1].id
    assert set(g.edges) == {(0, 3), (3, 1), (2, 4), (4, 1)}


# --- neighbours and serialization --------------------------------------------------------

def test_neighbors_chain():
    g = build_syntactic_graph(Example.from_strings("list jobs", "job"), WORD_ORDER_ONLY)
    assert neighbors_forward(g, 0) == {1} and neighbors_backward(g, 0) == {1}


def test_neighbors_isolated_and_invalid():
    g = SyntacticGraph(tuple(word_nodes(2)), ())
    assert neighbors_forward(g, 1) == set() and neighbors_backward(g, 1) == set()
    with pytest.raises(GraphError):
        neighbors_forward(g, 2)


@settings(max_examples=100, deadline=None)
@given(graphs())
def test_neighbor_duality(g):
    for a in range(g.num_nodes):
        for b in neighbors_forward(g, a):
            assert a in neighbors_backward(g, b)
        for b in neighbors_backward(g, a):
            assert a in neighbors_forward(g, b)
    fw, bw = g.adjacency()
    assert [set(x) for x in fw] == [neighbors_forward(g, v) for v in range(g.num_nodes)]
    assert [set(x) for x in bw] == [neighbors_backward(g, v) for v in range(g.num_nodes)]


def test_serialize_empty_edge_graph():
    g = SyntacticGraph(tuple(word_nodes(3)), (), WORD_ORDER_ONLY)
    assert deserialize_graph(serialize_graph(g)) == g


@settings(max_examples=100, deadline=None)
@given(graphs())
def test_serialize_round_trip(g):
    text = serialize_graph(g)
    assert deserialize_graph(text) == g
    assert serialize_graph(deserialize_graph(text)) == text


def test_serialize_field_order_is_stable():
    g = build_syntactic_graph(Example.from_strings("list jobs", "job"), WORD_ORDER_ONLY)
    obj = json.loads(serialize_graph(g))
    assert list(obj) == sorted(obj)
    assert list(obj["nodes"][0]) == ["id", "kind", "text", "word_index"]


def test_deserialize_truncated():
    text = serialize_graph(build_syntactic_graph(Example.from_strings("list jobs", "job"),
                                                 WORD_ORDER_ONLY))
    with pytest.raises(GraphError):
        deserialize_graph(text[: len(text) // 2])
    with pytest.raises(GraphError):
        deserialize_graph('{"nodes": []}')


def test_invalid_graphs_rejected():
    with pytest.raises(GraphError):
        SyntacticGraph(tuple(word_nodes(2)), ((0, 0),))
    with pytest.raises(GraphError):
        SyntacticGraph(tuple(word_nodes(2)), ((0, 1), (0, 1)))
    with pytest.raises(GraphError):
        SyntacticGraph(tuple(word_nodes(2)), ((0, 5),))
    with pytest.raises(GraphError):
        SyntacticGraph((GraphNode(0, "NP", NodeKind.CONSTITUENT, 0),), ())
    with pytest.raises(GraphError):
        build_syntactic_graph(Example([], ["x"]), WORD_ORDER_ONLY)
