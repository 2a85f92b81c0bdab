"""Finite-difference gradient suite over every tape op and the full model loss."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .corpus_io import RESERVED, Example, Vocab, parse_bracketed_tree, parse_conllu
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .graph import ALL_FEATURES
from .model import Graph2Seq
from .tensor import Tensor

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _param(rng, *shape, low=None):
    """Random parameter; with ``low`` set, magnitudes stay above it (away from kinks)."""
    x = rng.normal(size=shape)
    if low is not None:
        x = np.sign(x) * (np.abs(x) + low)
    return Tensor(x, requires_grad=True)


def _spread(rng, *shape):
    """Entries with pairwise gaps far larger than the finite-difference step."""
    x = rng.permutation(np.prod(shape)).reshape(shape) * 0.1 + rng.normal(scale=0.01, size=shape)
    return Tensor(x, requires_grad=True)


def _weighted(out: Tensor, rng) -> Tensor:
    """Reduce a tensor to a scalar with fixed random weights so every output matters."""
    w = np.random.default_rng(int(rng.integers(1 << 31))).normal(size=out.shape)
    return T.tensor_sum(T.mul(out, w))


def five_node_example() -> Example:
    """'the jobs' with a det arc and (NP (DT the) jobs): 2 words, 1 label, 2 constituents."""
    return Example.from_strings("the jobs", "a b", dep=parse_conllu("1 the 2 det\n2 jobs 0 root"),
                                cons=parse_bracketed_tree("(NP (DT the) jobs)"))


def small_model(seed: int = 0) -> Graph2Seq:
    rng = np.random.default_rng(seed)
    src = Vocab(list(RESERVED) + ["the", "jobs", "det", "NP", "DT"])
    tgt = Vocab(list(RESERVED) + ["a", "b"])
    enc = EncoderConfig(hops=2, dim=3, agg_dim=4, graph_dim=5)
    dec = DecoderConfig(hidden=3, embed_dim=3, attn_dim=2, max_len=5, dropout=0.5)
    model = Graph2Seq.create(src, tgt, enc, dec, ALL_FEATURES, rng,
                             embeddings=rng.normal(size=(len(src), enc.dim)))
    for name, p in model.params.items():
        if name.endswith("_b") or name.endswith(".b") or name.startswith("dec."):
            p.data = rng.normal(scale=0.5, size=p.shape)
    return model


def op_checks(rng: np.random.Generator) -> dict[str, Callable[[], tuple[Callable[[], Tensor], list[Tensor]]]]:
    """Each entry builds (loss function, parameters) for one op."""

    def case(fn, *params):
        return lambda: (fn, list(params))

    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    row = _param(rng, 4)
    m1, m2 = _param(rng, 3, 4), _param(rng, 4, 2)
    pos = Tensor(np.abs(rng.normal(size=(3, 4))) + 0.5, requires_grad=True)
    kinked = _param(rng, 3, 4, low=0.1)
    rows = _spread(rng, 5, 3)
    grouped = _spread(rng, 3, 4, 2)
    group_mask = np.array([[True, True, False, True], [True, False, False, False],
                           [False, True, True, True]])
    logits = _param(rng, 3, 6)
    logit_mask = np.array([True, False, True, True, True, False])
    probs_1d = _param(rng, 5)
    seed = int(rng.integers(1 << 31))

    def dropout_loss():
        return _weighted(T.dropout(a, 0.5, True, np.random.default_rng(seed)), np.random.default_rng(1))

    checks = {
        "add": case(lambda: _weighted(T.add(a, row), np.random.default_rng(1)), a, row),
        "sub": case(lambda: _weighted(T.sub(a, b), np.random.default_rng(2)), a, b),
        "mul": case(lambda: _weighted(T.mul(a, row), np.random.default_rng(3)), a, row),
        "matmul": case(lambda: _weighted(T.matmul(m1, m2), np.random.default_rng(4)), m1, m2),
        "relu": case(lambda: _weighted(T.relu(kinked), np.random.default_rng(5)), kinked),
        "sigmoid": case(lambda: _weighted(T.sigmoid(a), np.random.default_rng(6)), a),
        "tanh": case(lambda: _weighted(T.tanh(a), np.random.default_rng(7)), a),
        "exp": case(lambda: _weighted(T.exp(a), np.random.default_rng(8)), a),
        "log": case(lambda: _weighted(T.log(pos), np.random.default_rng(9)), pos),
        "concat": case(lambda: _weighted(T.concat([a, b], axis=0), np.random.default_rng(10)), a, b),
        "reshape": case(lambda: _weighted(T.reshape(a, (2, 6)), np.random.default_rng(11)), a),
        "columns": case(lambda: _weighted(T.columns(a, 1, 3), np.random.default_rng(12)), a),
        "take_rows": case(lambda: _weighted(T.take_rows(a, np.array([[2, 0], [2, 2]])),
                                            np.random.default_rng(13)), a),
        "sum": case(lambda: _weighted(T.tensor_sum(a, axis=0), np.random.default_rng(14)), a),
        "mean": case(lambda: T.mean(T.mul(a, b)), a, b),
        "max_rows": case(lambda: _weighted(T.elementwise_max_rows(rows), np.random.default_rng(15)), rows),
        "masked_max": case(lambda: _weighted(T.masked_max(grouped, group_mask),
                                             np.random.default_rng(16)), grouped),
        "masked_mean": case(lambda: _weighted(T.masked_mean(grouped, group_mask),
                                              np.random.default_rng(17)), grouped),
        "softmax": case(lambda: _weighted(T.softmax(logits, mask=logit_mask),
                                          np.random.default_rng(18)), logits),
        "cross_entropy": case(lambda: T.tensor_sum(T.cross_entropy(T.softmax(logits), [0, 3, 5])), logits),
        "cross_entropy_1d": case(lambda: T.cross_entropy(T.softmax(probs_1d), 2), probs_1d),
        "dropout": case(dropout_loss, a),
    }
    return checks


def model_check(seed: int = 0) -> tuple[Callable[[], Tensor], list[Tensor]]:
    """Full encoder and decoder loss on the five-node graph plus a second small graph."""
    model = small_model(seed)
    examples = [five_node_example(),
                Example.from_strings("jobs", "b", dep=parse_conllu("1 jobs 0 root"),
                                     cons=parse_bracketed_tree("(NP jobs)"))]
    graphs = model.graphs(examples)
    return (lambda: model.loss(examples, train=False, graphs=graphs)), model.param_list()


def run_suite(seed: int = 0, eps: float = 1e-5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, build in op_checks(rng).items():
        fn, params = build()
        results.append(CheckResult(name, T.finite_difference_check(fn, params, eps=eps)))
    fn, params = model_check(seed)
    results.append(CheckResult("encoder_decoder_loss", T.finite_difference_check(fn, params, eps=eps)))
    return results


def main(seed: int = 0, out=print) -> bool:
    start = time.perf_counter()
    results = run_suite(seed)
    for r in results:
        out(f"{'PASS' if r.passed else 'FAIL'} {r.name:<22} max_rel_error={r.max_rel_error:.3e}")
    worst = max(r.max_rel_error for r in results)
    ok = all(r.passed for r in results)
    out(f"{'PASS' if ok else 'FAIL'} gradcheck: {len(results)} checks, worst {worst:.3e}, "
        f"{time.perf_counter() - start:.1f}s")
    return ok
