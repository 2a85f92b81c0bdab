"""LSTM decoder with additive attention over node embeddings.

At step i the context c_i is computed from the previous hidden state, the
cell consumes [embed(y_{i-1}); c_i], and the output layer reads
[s_i; c_i]. The initial hidden state is an affine map of the graph
embedding; the initial cell state is zero. PAD and SOS are never emitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus_io import EOS_ID, PAD_ID, SOS_ID
from .encoder import EncodedGraph, glorot
from .tensor import Tensor


@dataclass(frozen=True)
class DecoderConfig:
    hidden: int = 300
    layers: int = 1
    embed_dim: int = 300
    attn_dim: int | None = None
    beam: int = 3
    max_len: int = 100
    dropout: float = 0.5

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam size must be at least 1")
        if self.max_len < 1:
            raise ValueError("max output length must be at least 1")
        if self.layers < 1 or self.hidden <= 0 or self.embed_dim <= 0:
            raise ValueError("decoder sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")

    @property
    def attention_width(self) -> int:
        return self.attn_dim or self.hidden


def init_decoder_params(cfg: DecoderConfig, vocab_size: int, node_dim: int, graph_dim: int,
                        rng: np.random.Generator) -> dict[str, np.ndarray]:
    h, a = cfg.hidden, cfg.attention_width
    p = {"dec.embed": rng.uniform(-0.08, 0.08, size=(vocab_size, cfg.embed_dim))}
    for layer in range(cfg.layers):
        in_dim = cfg.embed_dim + node_dim if layer == 0 else h
        p[f"dec.init{layer}.w"] = glorot(rng, graph_dim, h)
        p[f"dec.init{layer}.b"] = np.zeros(h)
        p[f"dec.lstm{layer}.wx"] = glorot(rng, in_dim, 4 * h)
        p[f"dec.lstm{layer}.wh"] = glorot(rng, h, 4 * h)
        bias = np.zeros(4 * h)
        bias[h:2 * h] = 1.0  # forget gate
        p[f"dec.lstm{layer}.b"] = bias
    p["dec.att_s"] = glorot(rng, h, a)
    p["dec.att_h"] = glorot(rng, node_dim, a)
    p["dec.att_v"] = rng.uniform(-0.08, 0.08, size=a)
    p["dec.out_w"] = glorot(rng, h + node_dim, vocab_size)
    p["dec.out_b"] = np.zeros(vocab_size)
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def output_mask(vocab_size: int) -> np.ndarray:
    mask = np.ones(vocab_size, dtype=bool)
    mask[[PAD_ID, SOS_ID]] = False
    return mask


@dataclass
class Memory:
    """Padded per-graph node embeddings and their attention projections."""

    nodes: Tensor       # [B, Nmax, node_dim]
    keys: Tensor        # [B, Nmax, attn]
    mask: np.ndarray    # [B, Nmax]
    init: Tensor        # [B, graph_dim]

    @classmethod
    def from_encoded(cls, enc: EncodedGraph, params: dict[str, Tensor]) -> "Memory":
        b = enc.batch
        keys = T.matmul(enc.node_embeddings, params["dec.att_h"])
        return cls(T.take_rows(enc.node_embeddings, b.members), T.take_rows(keys, b.members),
                   b.member_mask, enc.graph_embedding)

    def select(self, rows: Sequence[int]) -> "Memory":
        rows = np.asarray(rows, dtype=np.intp)
        return Memory(T.take_rows(self.nodes, rows), T.take_rows(self.keys, rows),
                      self.mask[rows], T.take_rows(self.init, rows))


@dataclass
class DecoderState:
    h: list[Tensor]
    c: list[Tensor]
    context: Tensor | None = None
    attention: Tensor | None = None

    def select(self, rows: Sequence[int]) -> "DecoderState":
        rows = np.asarray(rows, dtype=np.intp)
        return DecoderState([T.take_rows(x, rows) for x in self.h],
                            [T.take_rows(x, rows) for x in self.c])


def init_state(memory: Memory, params: dict[str, Tensor], cfg: DecoderConfig) -> DecoderState:
    batch = memory.init.shape[0]
    h = [T.add(T.matmul(memory.init, params[f"dec.init{l}.w"]), params[f"dec.init{l}.b"])
         for l in range(cfg.layers)]
    c = [Tensor(np.zeros((batch, cfg.hidden))) for _ in range(cfg.layers)]
    return DecoderState(h, c)


def attention(s: Tensor, memory: Memory, params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Additive attention: e_v = v^T tanh(W_s s + W_h h_v), alpha = softmax(e), c = sum alpha_v h_v."""
    if memory.nodes.shape[1] == 0 or not memory.mask.any(axis=1).all():
        raise ValueError("attention over an empty node set")
    query = T.matmul(s, params["dec.att_s"])
    b, a = query.shape
    hidden = T.tanh(T.add(memory.keys, T.reshape(query, (b, 1, a))))
    scores = T.tensor_sum(T.mul(hidden, params["dec.att_v"]), axis=-1)
    alpha = T.softmax(scores, mask=memory.mask)
    n = alpha.shape[1]
    context = T.tensor_sum(T.mul(T.reshape(alpha, (b, n, 1)), memory.nodes), axis=1)
    return context, alpha


def _lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor,
               bias: Tensor) -> tuple[Tensor, Tensor]:
    gates = T.add(T.add(T.matmul(x, wx), T.matmul(h, wh)), bias)
    z = gates.shape[1] // 4
    i_g = T.sigmoid(T.columns(gates, 0, z))
    f_g = T.sigmoid(T.columns(gates, z, 2 * z))
    g_g = T.tanh(T.columns(gates, 2 * z, 3 * z))
    o_g = T.sigmoid(T.columns(gates, 3 * z, 4 * z))
    c_new = T.add(T.mul(f_g, c), T.mul(i_g, g_g))
    h_new = T.mul(o_g, T.tanh(c_new))
    return h_new, c_new


def decode_step(prev: Sequence[int], state: DecoderState, memory: Memory,
                params: dict[str, Tensor], cfg: DecoderConfig, train: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, DecoderState]:
    """One decoder step for a batch; returns the next-token distribution and new state."""
    vocab_size = params["dec.embed"].shape[0]
    prev = np.asarray(prev, dtype=np.intp)
    if np.any(prev < 0) or np.any(prev >= vocab_size):
        raise IndexError("previous token id out of vocabulary range")
    context, alpha = attention(state.h[-1], memory, params)
    x = T.concat([T.take_rows(params["dec.embed"], prev), context], axis=-1)
    hs, cs = [], []
    for layer in range(cfg.layers):
        h, c = _lstm_cell(x, state.h[layer], state.c[layer], params[f"dec.lstm{layer}.wx"],
                          params[f"dec.lstm{layer}.wh"], params[f"dec.lstm{layer}.b"])
        hs.append(h)
        cs.append(c)
        x = h
    readout = T.dropout(T.concat([hs[-1], context], axis=-1), cfg.dropout, train, rng)
    logits = T.add(T.matmul(readout, params["dec.out_w"]), params["dec.out_b"])
    probs = T.softmax(logits, mask=output_mask(vocab_size))
    return probs, DecoderState(hs, cs, context, alpha)


def _pad_targets(targets: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = [len(t) + 1 for t in targets]
    width = max(lengths)
    gold = np.full((len(targets), width), EOS_ID, dtype=np.intp)
    mask = np.zeros((len(targets), width))
    for i, t in enumerate(targets):
        gold[i, :len(t)] = t
        mask[i, :lengths[i]] = 1.0
    return gold, mask


def step_losses(enc: EncodedGraph, targets: Sequence[Sequence[int]], params: dict[str, Tensor],
                cfg: DecoderConfig, train: bool = False,
                rng: np.random.Generator | None = None) -> tuple[list[Tensor], np.ndarray]:
    """Teacher-forced per-step cross-entropy vectors (EOS appended) and the validity mask."""
    if not targets or any(len(t) == 0 for t in targets):
        raise ValueError("targets must be non-empty")
    if len(targets) != enc.batch.num_graphs:
        raise ValueError("one target per encoded graph is required")
    gold, mask = _pad_targets(targets)
    memory = Memory.from_encoded(enc, params)
    state = init_state(memory, params, cfg)
    prev = np.full(len(targets), SOS_ID, dtype=np.intp)
    losses = []
    for t in range(gold.shape[1]):
        probs, state = decode_step(prev, state, memory, params, cfg, train, rng)
        losses.append(T.cross_entropy(probs, gold[:, t]))
        prev = gold[:, t]
    return losses, mask


def teacher_forced_loss(enc: EncodedGraph, targets: Sequence[Sequence[int]],
                        params: dict[str, Tensor], cfg: DecoderConfig, train: bool = False,
                        rng: np.random.Generator | None = None) -> Tensor:
    """Per-token mean cross-entropy of each target, averaged over the batch."""
    losses, mask = step_losses(enc, targets, params, cfg, train, rng)
    weights = mask / mask.sum(axis=1, keepdims=True) / mask.shape[0]
    total = None
    for t, loss in enumerate(losses):
        term = T.tensor_sum(T.mul(loss, weights[:, t]))
        total = term if total is None else T.add(total, term)
    return total


@dataclass(order=True)
class Hypothesis:
    score: float
    tokens: tuple[int, ...] = field(compare=False)
    terminated: bool = field(default=False, compare=False)

    @property
    def output(self) -> list[int]:
        return list(self.tokens[:-1] if self.terminated else self.tokens)


def _log_probs(probs: Tensor) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(probs.data)


def _graph_rows(enc: EncodedGraph, indices: Sequence[int] | None) -> list[int]:
    return list(range(enc.batch.num_graphs)) if indices is None else list(indices)


def greedy_decode_batch(enc: EncodedGraph, params: dict[str, Tensor], cfg: DecoderConfig,
                        indices: Sequence[int] | None = None) -> list[list[int]]:
    """Argmax decoding until EOS or ``cfg.max_len`` for several graphs at once."""
    rows = _graph_rows(enc, indices)
    with T.no_grad():
        memory = Memory.from_encoded(enc, params).select(rows)
        state = init_state(memory, params, cfg)
        outputs: list[list[int]] = [[] for _ in rows]
        active = list(range(len(rows)))
        prev = [SOS_ID] * len(rows)
        for _ in range(cfg.max_len):
            probs, state = decode_step(prev, state, memory, params, cfg)
            best = np.argmax(_log_probs(probs), axis=1)
            keep = []
            for j, tok in enumerate(best):
                if tok != EOS_ID:
                    outputs[active[j]].append(int(tok))
                    keep.append(j)
            if not keep:
                break
            active = [active[j] for j in keep]
            prev = [int(best[j]) for j in keep]
            state = state.select(keep)
            memory = memory.select(keep)
        return outputs


def greedy_decode(enc: EncodedGraph, params: dict[str, Tensor], cfg: DecoderConfig,
                  index: int = 0) -> list[int]:
    return greedy_decode_batch(enc, params, cfg, [index])[0]


def _top_candidates(scores: np.ndarray, beam: int) -> list[tuple[float, int, int]]:
    """Top ``beam`` (score, hypothesis, token) triples; ties prefer lower (hypothesis, token)."""
    flat = scores.reshape(-1)
    valid = np.flatnonzero(np.isfinite(flat))
    order = valid[np.argsort(-flat[valid], kind="stable")][:beam]
    width = scores.shape[1]
    return [(float(flat[k]), int(k // width), int(k % width)) for k in order]


def beam_search_batch(enc: EncodedGraph, params: dict[str, Tensor], cfg: DecoderConfig,
                      beam: int | None = None, indices: Sequence[int] | None = None,
                      trace: list | None = None) -> list[list[int]]:
    """Beam search for several graphs, with all live hypotheses decoded in one batch.

    Per graph: every live hypothesis is expanded over the vocabulary, the top
    ``beam`` expansions by cumulative log-probability are kept, expansions
    ending in EOS retire to a finished pool, and the search stops when no
    hypothesis is live or ``cfg.max_len`` tokens were emitted. The best
    finished (or length-capped) hypothesis wins; no length normalisation.
    ``trace``, if given, receives the kept (score, tokens) pairs of graph 0
    at every step.
    """
    beam = beam or cfg.beam
    rows = _graph_rows(enc, indices)
    with T.no_grad():
        base = Memory.from_encoded(enc, params).select(rows)
        state = init_state(base, params, cfg)
        live: list[list[Hypothesis]] = [[Hypothesis(0.0, ())] for _ in rows]
        owner = list(range(len(rows)))  # graph of each batch row
        finished: list[list[Hypothesis]] = [[] for _ in rows]
        memory = base
        for _ in range(cfg.max_len):
            prev = [h.tokens[-1] if h.tokens else SOS_ID for hyps in live for h in hyps]
            probs, state = decode_step(prev, state, memory, params, cfg)
            logp = _log_probs(probs)
            next_rows, next_owner, next_live = [], [], []
            offset = 0
            for g, hyps in enumerate(live):
                if not hyps:
                    next_live.append([])
                    continue
                block = logp[offset:offset + len(hyps)]
                scores = np.array([h.score for h in hyps])[:, None] + block
                kept = _top_candidates(scores, beam)
                if trace is not None and g == 0:
                    trace.append([(s, hyps[i].tokens + (tok,)) for s, i, tok in kept])
                survivors = []
                for score, i, tok in kept:
                    hyp = Hypothesis(score, hyps[i].tokens + (tok,), tok == EOS_ID)
                    if hyp.terminated:
                        finished[g].append(hyp)
                    else:
                        survivors.append(hyp)
                        next_rows.append(offset + i)
                        next_owner.append(g)
                next_live.append(survivors)
                offset += len(hyps)
            live = next_live
            if not next_rows:
                break
            state = state.select(next_rows)
            owner = next_owner
            memory = base.select(owner)
        results = []
        for g in range(len(rows)):
            pool = finished[g] + live[g]
            results.append(max(pool, key=lambda h: h.score).output)
        return results


def beam_search(enc: EncodedGraph, params: dict[str, Tensor], cfg: DecoderConfig,
                index: int = 0, beam: int | None = None, trace: list | None = None) -> list[int]:
    return beam_search_batch(enc, params, cfg, beam, [index], trace)[0]
