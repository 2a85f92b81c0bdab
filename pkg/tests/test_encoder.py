import numpy as np
import pytest

from helpers import random_example
from syngraph import tensor as T
from syngraph.corpus_io import RESERVED, UNK_ID, Example, Vocab
from syngraph.encoder import (EncoderConfig, GraphBatch, aggregate_neighbors, encode, encode_graphs,
                              graph_embedding, init_encoder_params, init_node_features,
                              update_node_state)
from syngraph.graph import (ALL_FEATURES, WORD_ORDER_ONLY, GraphNode, NodeKind, SyntacticGraph,
                            build_syntactic_graph)
from syngraph.tensor import Tensor

TEXTS = ["what", "are", "the", "jobs", "for", "c++", "salary", "list",
         "det", "nsubj", "obj", "amod", "nmod", "case", "advmod",
         "NP", "VP", "PP", "S", "ADJP", "SBAR", "DT", "NN", "NNS", "VB", "IN", "JJ", "X"]
VOCAB = Vocab(list(RESERVED) + TEXTS)


def make_params(cfg, seed=0, vocab=VOCAB):
    rng = np.random.default_rng(seed)
    params = init_encoder_params(cfg, rng.normal(size=(len(vocab), cfg.dim)), rng)
    # non-zero biases so that no ReLU sits exactly on its kink by construction
    for k, p in params.items():
        if k.endswith("_b"):
            p.data = rng.normal(scale=0.1, size=p.shape)
    return params


def permuted(g, perm):
    """Relabel node i as perm[i]."""
    inv = np.argsort(perm)
    nodes = tuple(GraphNode(new, g.nodes[old].text, g.nodes[old].kind, g.nodes[old].word_index)
                  for new, old in enumerate(inv))
    edges = tuple((int(perm[u]), int(perm[v])) for u, v in g.edges)
    return SyntacticGraph(nodes, edges, g.flags)


def random_graph(rng):
    if rng.random() < 0.5:
        return build_syntactic_graph(random_example(rng), ALL_FEATURES)
    n = int(rng.integers(1, 12))
    nodes = tuple(GraphNode(i, TEXTS[rng.integers(len(TEXTS))], NodeKind.CONSTITUENT)
                  for i in range(n))
    pairs = {(int(a), int(b)) for a, b in rng.integers(n, size=(2 * n, 2)) if a != b}
    return SyntacticGraph(nodes, tuple(sorted(pairs)))


# --- building blocks ---------------------------------------------------------------------

def test_init_node_features_lookup():
    g = SyntacticGraph((GraphNode(0, "jobs", NodeKind.WORD, 0), GraphNode(1, "zzz", NodeKind.WORD, 1),
                        GraphNode(2, "jobs", NodeKind.WORD, 2)), ())
    cfg = EncoderConfig(hops=1, dim=4)
    params = make_params(cfg)
    a = init_node_features(GraphBatch.build([g], VOCAB), params).data
    emb = params["enc.embed"].data
    assert np.array_equal(a[0], emb[VOCAB.id("jobs")])
    assert np.array_equal(a[1], emb[UNK_ID])
    assert np.array_equal(a[0], a[2])


def test_aggregate_singleton():
    rng = np.random.default_rng(0)
    h, w, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 3)), rng.normal(size=3)
    out = aggregate_neighbors(Tensor(h), np.array([[1]]), np.array([[True]]), Tensor(w), Tensor(b))
    assert np.allclose(out.data[0], np.maximum(h[1] @ w + b, 0), rtol=0, atol=1e-15)


def test_aggregate_hand_example():
    h = Tensor(np.array([[1.0, -2.0], [0.0, 3.0]]))
    out = aggregate_neighbors(h, np.array([[0, 1]]), np.array([[True, True]]),
                              Tensor(np.eye(2)), Tensor(np.zeros(2)))
    assert out.data[0].tolist() == [1.0, 3.0]


def test_aggregate_duplicate_and_empty():
    rng = np.random.default_rng(1)
    h, w, b = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(3, 3))), Tensor(rng.normal(size=3))
    one = aggregate_neighbors(h, np.array([[1, 0]]), np.array([[True, False]]), w, b)
    two = aggregate_neighbors(h, np.array([[1, 1]]), np.array([[True, True]]), w, b)
    assert np.array_equal(one.data, two.data)
    empty = aggregate_neighbors(h, np.array([[0]]), np.array([[False]]), w, b)
    assert np.array_equal(empty.data, np.zeros((1, 3)))


def test_update_projections():
    x = Tensor(np.array([[0.5, -1.0]]))
    hn = Tensor(np.array([[-3.0, 2.0]]))
    zero = Tensor(np.zeros(2))
    left = Tensor(np.vstack([np.eye(2), np.zeros((2, 2))]))
    right = Tensor(np.vstack([np.zeros((2, 2)), np.eye(2)]))
    assert update_node_state(x, hn, left, zero).data.tolist() == [[0.5, 0.0]]
    assert update_node_state(x, hn, right, zero).data.tolist() == [[0.0, 2.0]]


def test_update_hand_computed():
    x = Tensor(np.array([[1.0, 2.0]]))
    hn = Tensor(np.array([[0.5, -1.0]]))
    w = Tensor(np.array([[0.1, -0.2], [0.3, 0.4], [-0.5, 0.6], [0.7, -0.8]]))
    b = Tensor(np.array([0.05, -0.05]))
    # [1, 2, 0.5, -1] @ w = [0.1+0.6-0.25-0.7, -0.2+0.8+0.3+0.8] = [-0.25, 1.7]
    out = update_node_state(x, hn, w, b).data
    assert np.allclose(out, [[0.0, 1.65]], rtol=0, atol=1e-12)


def test_update_shape_mismatch():
    with pytest.raises(ValueError):
        update_node_state(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 2))),
                          Tensor(np.ones((3, 2))), Tensor(np.zeros(2)))


def test_graph_embedding_single_node_and_duplicates():
    cfg = EncoderConfig(hops=1, dim=3)
    params = make_params(cfg)
    h = np.random.default_rng(2).normal(size=(1, 6))
    one = GraphBatch.build([SyntacticGraph((GraphNode(0, "x", NodeKind.WORD, 0),), ())], VOCAB)
    g1 = graph_embedding(Tensor(h), one, params).data[0]
    expect = np.maximum(h[0] @ params["enc.graph_w"].data + params["enc.graph_b"].data, 0)
    assert np.allclose(g1, expect, rtol=0, atol=1e-14)
    two = GraphBatch.build([SyntacticGraph((GraphNode(0, "x", NodeKind.WORD, 0),
                                            GraphNode(1, "x", NodeKind.WORD, 1)), ())], VOCAB)
    assert np.array_equal(graph_embedding(Tensor(np.vstack([h, h])), two, params).data[0], g1)


def test_mean_pooling_switch():
    cfg = EncoderConfig(hops=2, dim=3, pooling="mean")
    params = make_params(cfg)
    g = build_syntactic_graph(Example.from_strings("list the jobs", "x"), WORD_ORDER_ONLY)
    enc = encode_graphs([g], VOCAB, params, cfg)
    proj = np.maximum(enc.nodes_of(0) @ params["enc.graph_w"].data + params["enc.graph_b"].data, 0)
    assert np.allclose(enc.graph_embedding.data[0], proj.mean(axis=0), rtol=0, atol=1e-14)


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(hops=0)
    with pytest.raises(ValueError):
        EncoderConfig(dim=0)
    with pytest.raises(ValueError):
        EncoderConfig(pooling="sum")


def test_parameters_distinct_per_hop_and_direction():
    cfg = EncoderConfig(hops=3, dim=4)
    params = make_params(cfg)
    for part in ("pool_w", "pool_b", "upd_w", "upd_b"):
        names = [f"enc.{d}.{k}.{part}" for d in ("fw", "bw") for k in (1, 2, 3)]
        assert all(n in params for n in names)
        assert len({id(params[n]) for n in names}) == 6


# --- whole-encoder behaviour ----------------------------------------------------------------

def test_isolated_node_uses_zero_neighbour_path():
    cfg = EncoderConfig(hops=2, dim=3)
    params = make_params(cfg)
    g = SyntacticGraph((GraphNode(0, "jobs", NodeKind.WORD, 0),), ())
    before = encode_graphs([g], VOCAB, params, cfg).node_embeddings.data.copy()
    for k, p in params.items():
        if ".pool_" in k:
            p.data = p.data + 1.0
    assert np.array_equal(encode_graphs([g], VOCAB, params, cfg).node_embeddings.data, before)


def test_single_hop_hand_trace():
    cfg = EncoderConfig(hops=1, dim=2)
    params = make_params(cfg, seed=4)
    g = SyntacticGraph((GraphNode(0, "list", NodeKind.WORD, 0), GraphNode(1, "jobs", NodeKind.WORD, 1)),
                       ((0, 1),))
    enc = encode_graphs([g], VOCAB, params, cfg)
    P = {k: v.data for k, v in params.items()}
    a0, a1 = P["enc.embed"][VOCAB.id("list")], P["enc.embed"][VOCAB.id("jobs")]
    relu = lambda x: np.maximum(x, 0)  # noqa: E731

    def step(direction, own, neigh):
        pooled = np.zeros(2) if neigh is None else relu(neigh @ P[f"enc.{direction}.1.pool_w"]
                                                         + P[f"enc.{direction}.1.pool_b"])
        return relu(np.concatenate([own, pooled]) @ P[f"enc.{direction}.1.upd_w"]
                    + P[f"enc.{direction}.1.upd_b"])

    expect = np.array([np.concatenate([step("fw", a0, a1), step("bw", a0, None)]),
                       np.concatenate([step("fw", a1, None), step("bw", a1, a0)])])
    assert np.allclose(enc.node_embeddings.data, expect, rtol=0, atol=1e-14)
    assert np.array_equal(enc.forward_states[0].data, np.vstack([a0, a1]))
    assert np.array_equal(enc.backward_states[0].data, np.vstack([a0, a1]))


def directed_chain(words):
    nodes = tuple(GraphNode(i, w, NodeKind.WORD, i) for i, w in enumerate(words))
    return SyntacticGraph(nodes, tuple((i, i + 1) for i in range(len(words) - 1)))


def test_locality_on_chains():
    K = 2
    cfg = EncoderConfig(hops=K, dim=3)
    params = make_params(cfg, seed=5)
    words = ["what", "are", "the", "jobs", "for", "c++", "salary", "list"]
    base = encode_graphs([directed_chain(words)], VOCAB, params, cfg)
    for j in range(len(words)):
        changed = list(words)
        changed[j] = "NP"
        enc = encode_graphs([directed_chain(changed)], VOCAB, params, cfg)
        for v in range(len(words)):
            fw_same = np.array_equal(enc.forward_states[-1].data[v], base.forward_states[-1].data[v])
            bw_same = np.array_equal(enc.backward_states[-1].data[v], base.backward_states[-1].data[v])
            # forward states look downstream, backward states upstream
            if not v <= j <= v + K:
                assert fw_same, (j, v)
            if not v - K <= j <= v:
                assert bw_same, (j, v)
        # a bidirectional chain: anything farther than K hops away is invisible
        wo_base = encode_graphs([build_syntactic_graph(Example.from_strings(" ".join(words), "x"),
                                                       WORD_ORDER_ONLY)], VOCAB, params, cfg)
        wo = encode_graphs([build_syntactic_graph(Example.from_strings(" ".join(changed), "x"),
                                                  WORD_ORDER_ONLY)], VOCAB, params, cfg)
        for v in range(len(words)):
            if abs(v - j) > K:
                assert np.array_equal(wo.node_embeddings.data[v], wo_base.node_embeddings.data[v])


def test_direction_independence():
    cfg = EncoderConfig(hops=3, dim=4)
    params = make_params(cfg, seed=6)
    rng = np.random.default_rng(6)
    graphs = [random_graph(rng) for _ in range(5)]
    before = encode_graphs(graphs, VOCAB, params, cfg)
    for k, p in params.items():
        if k.startswith("enc.bw."):
            p.data = np.zeros_like(p.data)
    after = encode_graphs(graphs, VOCAB, params, cfg)
    for a, b in zip(before.forward_states, after.forward_states):
        assert np.array_equal(a.data, b.data)


def test_neighbor_order_and_node_permutation_invariance():
    cfg = EncoderConfig(hops=3, dim=5)
    params = make_params(cfg, seed=7)
    rng = np.random.default_rng(7)
    for _ in range(100):
        g = random_graph(rng)
        base = encode_graphs([g], VOCAB, params, cfg)
        # shuffle the padded neighbour tables directly
        batch = GraphBatch.build([g], VOCAB)
        for idx, mask in ((batch.fw_idx, batch.fw_mask), (batch.bw_idx, batch.bw_mask)):
            for row in range(idx.shape[0]):
                order = rng.permutation(idx.shape[1])
                idx[row], mask[row] = idx[row, order], mask[row, order]
        shuffled = encode(batch, params, cfg)
        assert np.array_equal(shuffled.node_embeddings.data, base.node_embeddings.data)
        assert np.array_equal(shuffled.graph_embedding.data, base.graph_embedding.data)
        # relabel node ids
        perm = rng.permutation(g.num_nodes)
        enc = encode_graphs([permuted(g, perm)], VOCAB, params, cfg)
        assert np.array_equal(enc.node_embeddings.data[perm], base.node_embeddings.data)
        assert np.array_equal(enc.graph_embedding.data, base.graph_embedding.data)


def test_batching_matches_single_graphs():
    cfg = EncoderConfig(hops=2, dim=4)
    params = make_params(cfg, seed=8)
    rng = np.random.default_rng(8)
    graphs = [random_graph(rng) for _ in range(6)]
    batched = encode_graphs(graphs, VOCAB, params, cfg)
    for i, g in enumerate(graphs):
        single = encode_graphs([g], VOCAB, params, cfg)
        assert np.array_equal(batched.nodes_of(i), single.nodes_of(0))
        assert np.array_equal(batched.graph_embedding.data[i], single.graph_embedding.data[0])


def test_empty_graph_rejected():
    with pytest.raises(ValueError):
        GraphBatch.build([SyntacticGraph((), ())], VOCAB)
    with pytest.raises(ValueError):
        GraphBatch.build([], VOCAB)


def test_encoder_gradient_check():
    cfg = EncoderConfig(hops=2, dim=3, agg_dim=4, graph_dim=5)
    params = make_params(cfg, seed=9)
    ex = Example.from_strings("list the jobs", "x")
    graphs = [build_syntactic_graph(ex, WORD_ORDER_ONLY),
              SyntacticGraph(tuple(GraphNode(i, t, NodeKind.CONSTITUENT) for i, t in enumerate(["NP", "VP"])),
                             ((0, 1),))]
    weights = Tensor(np.random.default_rng(9).normal(size=(2, 5)))

    def loss():
        enc = encode_graphs(graphs, VOCAB, params, cfg)
        return T.tensor_sum(T.mul(enc.graph_embedding, weights))

    assert T.finite_difference_check(loss, list(params.values())) < 1e-4
