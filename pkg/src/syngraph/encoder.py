"""Bidirectional K-hop graph encoder with max-pooling neighbour aggregators.

Each node starts from the embedding of its text. At every hop, and separately
for the forward (out-edge) and backward (in-edge) direction, the node's
neighbours are passed through a fully-connected layer and max-pooled; the
pooled vector is concatenated with the node's own state and projected to give
the next state. Every hop and direction has its own weights. Final node
embeddings are [forward; backward]; the graph embedding max-pools a
fully-connected projection of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus_io import Vocab
from .graph import SyntacticGraph
from .tensor import Tensor

DIRECTIONS = ("fw", "bw")


@dataclass(frozen=True)
class EncoderConfig:
    hops: int = 10
    dim: int = 300
    agg_dim: int | None = None
    graph_dim: int | None = None
    pooling: str = "max"

    def __post_init__(self):
        if self.hops < 1:
            raise ValueError("hop count must be at least 1")
        if self.dim <= 0 or (self.agg_dim is not None and self.agg_dim <= 0):
            raise ValueError("dimensions must be positive")
        if self.pooling not in ("max", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @property
    def aggregator_width(self) -> int:
        return self.agg_dim or self.dim

    @property
    def node_dim(self) -> int:
        return 2 * self.dim

    @property
    def pooled_dim(self) -> int:
        return self.graph_dim or self.node_dim


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_encoder_params(cfg: EncoderConfig, embeddings: np.ndarray,
                        rng: np.random.Generator) -> dict[str, Tensor]:
    d, a = cfg.dim, cfg.aggregator_width
    if embeddings.shape[1] != d:
        raise ValueError(f"embedding width {embeddings.shape[1]} != encoder dim {d}")
    params = {"enc.embed": embeddings.copy()}
    for direction in DIRECTIONS:
        for k in range(1, cfg.hops + 1):
            p = f"enc.{direction}.{k}"
            params[f"{p}.pool_w"] = glorot(rng, d, a)
            params[f"{p}.pool_b"] = np.zeros(a)
            params[f"{p}.upd_w"] = glorot(rng, d + a, d)
            params[f"{p}.upd_b"] = np.zeros(d)
    params["enc.graph_w"] = glorot(rng, cfg.node_dim, cfg.pooled_dim)
    params["enc.graph_b"] = np.zeros(cfg.pooled_dim)
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def _padded(lists: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(1, max((len(x) for x in lists), default=0))
    idx = np.zeros((len(lists), width), dtype=np.intp)
    mask = np.zeros((len(lists), width), dtype=bool)
    for i, xs in enumerate(lists):
        idx[i, :len(xs)] = xs
        mask[i, :len(xs)] = True
    return idx, mask


@dataclass
class GraphBatch:
    """Several graphs packed as one disjoint union with padded index tables."""

    node_ids: np.ndarray          # [N] vocab id of every node's text
    fw_idx: np.ndarray            # [N, Df] forward neighbours (global ids)
    fw_mask: np.ndarray
    bw_idx: np.ndarray            # [N, Db] backward neighbours
    bw_mask: np.ndarray
    members: np.ndarray           # [B, Nmax] global node ids per graph
    member_mask: np.ndarray
    sizes: list[int] = field(default_factory=list)

    @property
    def num_graphs(self) -> int:
        return self.members.shape[0]

    @classmethod
    def build(cls, graphs: Sequence[SyntacticGraph], vocab: Vocab) -> "GraphBatch":
        if not graphs:
            raise ValueError("empty graph batch")
        node_ids, fw_all, bw_all, members = [], [], [], []
        offset = 0
        for g in graphs:
            if g.num_nodes == 0:
                raise ValueError("cannot encode an empty graph")
            fw, bw = g.adjacency()
            node_ids.extend(vocab.id(n.text) for n in g.nodes)
            fw_all.extend([offset + u for u in xs] for xs in fw)
            bw_all.extend([offset + u for u in xs] for xs in bw)
            members.append(list(range(offset, offset + g.num_nodes)))
            offset += g.num_nodes
        fw_idx, fw_mask = _padded(fw_all)
        bw_idx, bw_mask = _padded(bw_all)
        mem_idx, mem_mask = _padded(members)
        return cls(np.asarray(node_ids, dtype=np.intp), fw_idx, fw_mask, bw_idx, bw_mask,
                   mem_idx, mem_mask, [g.num_nodes for g in graphs])


@dataclass
class EncodedGraph:
    node_embeddings: Tensor       # [N, 2d] over the whole batch
    graph_embedding: Tensor       # [B, pooled_dim]
    batch: GraphBatch
    forward_states: list[Tensor] = field(default_factory=list)
    backward_states: list[Tensor] = field(default_factory=list)

    def nodes_of(self, i: int) -> np.ndarray:
        """Node embeddings of graph ``i`` as a plain array."""
        b = self.batch
        return self.node_embeddings.data[b.members[i, :b.sizes[i]]]


def init_node_features(batch: GraphBatch, params: dict[str, Tensor]) -> Tensor:
    return T.take_rows(params["enc.embed"], batch.node_ids)


def aggregate_neighbors(states: Tensor, idx: np.ndarray, mask: np.ndarray,
                        weight: Tensor, bias: Tensor) -> Tensor:
    """Max-pool σ(W h_u + b) over each node's neighbours; no neighbours gives zeros."""
    transformed = T.relu(T.add(T.matmul(states, weight), bias))
    return T.masked_max(T.take_rows(transformed, idx), mask)


def update_node_state(prev: Tensor, pooled: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return T.relu(T.add(T.matmul(T.concat([prev, pooled], axis=-1), weight), bias))


def graph_embedding(node_embeddings: Tensor, batch: GraphBatch, params: dict[str, Tensor],
                    pooling: str = "max") -> Tensor:
    projected = T.relu(T.add(T.matmul(node_embeddings, params["enc.graph_w"]), params["enc.graph_b"]))
    grouped = T.take_rows(projected, batch.members)
    if pooling == "mean":
        return T.masked_mean(grouped, batch.member_mask)
    return T.masked_max(grouped, batch.member_mask)


def encode(batch: GraphBatch, params: dict[str, Tensor], cfg: EncoderConfig) -> EncodedGraph:
    features = init_node_features(batch, params)
    tables = {"fw": (batch.fw_idx, batch.fw_mask), "bw": (batch.bw_idx, batch.bw_mask)}
    finals, history = {}, {}
    for direction in DIRECTIONS:
        idx, mask = tables[direction]
        h = features
        states = [h]
        for k in range(1, cfg.hops + 1):
            p = f"enc.{direction}.{k}"
            pooled = aggregate_neighbors(h, idx, mask, params[f"{p}.pool_w"], params[f"{p}.pool_b"])
            h = update_node_state(h, pooled, params[f"{p}.upd_w"], params[f"{p}.upd_b"])
            states.append(h)
        finals[direction] = h
        history[direction] = states
    nodes = T.concat([finals["fw"], finals["bw"]], axis=-1)
    pooled = graph_embedding(nodes, batch, params, cfg.pooling)
    return EncodedGraph(nodes, pooled, batch, history["fw"], history["bw"])


def encode_graphs(graphs: Sequence[SyntacticGraph], vocab: Vocab, params: dict[str, Tensor],
                  cfg: EncoderConfig) -> EncodedGraph:
    return encode(GraphBatch.build(graphs, vocab), params, cfg)
