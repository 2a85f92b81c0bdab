"""Graph-to-sequence parser: syntactic graph in, logical-form tokens out."""

from __future__ import annotations

from dataclasses import asdict
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus_io import Example, Vocab, random_embeddings
from .decoder import (DecoderConfig, beam_search_batch, greedy_decode_batch, init_decoder_params,
                      teacher_forced_loss)
from .encoder import EncodedGraph, EncoderConfig, GraphBatch, encode, init_encoder_params
from .graph import FeatureFlags, SyntacticGraph, build_syntactic_graph
from .tensor import Tensor


class Graph2Seq:
    def __init__(self, src_vocab: Vocab, tgt_vocab: Vocab, enc_cfg: EncoderConfig,
                 dec_cfg: DecoderConfig, flags: FeatureFlags, params: dict[str, Tensor]):
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.flags = flags
        self.params = params

    @classmethod
    def create(cls, src_vocab: Vocab, tgt_vocab: Vocab, enc_cfg: EncoderConfig,
               dec_cfg: DecoderConfig, flags: FeatureFlags, rng: np.random.Generator,
               embeddings: np.ndarray | None = None) -> "Graph2Seq":
        if embeddings is None:
            embeddings = random_embeddings(len(src_vocab), enc_cfg.dim, rng)
        params = init_encoder_params(enc_cfg, embeddings, rng)
        params.update(init_decoder_params(dec_cfg, len(tgt_vocab), enc_cfg.node_dim,
                                          enc_cfg.pooled_dim, rng))
        return cls(src_vocab, tgt_vocab, enc_cfg, dec_cfg, flags, params)

    @property
    def param_names(self) -> list[str]:
        return sorted(self.params)

    def param_list(self) -> list[Tensor]:
        return [self.params[k] for k in self.param_names]

    def graphs(self, examples: Sequence[Example]) -> list[SyntacticGraph]:
        return [build_syntactic_graph(ex, self.flags) for ex in examples]

    def encode(self, graphs: Sequence[SyntacticGraph]) -> EncodedGraph:
        return encode(GraphBatch.build(graphs, self.src_vocab), self.params, self.enc_cfg)

    def loss(self, examples: Sequence[Example], train: bool = False,
             rng: np.random.Generator | None = None,
             graphs: Sequence[SyntacticGraph] | None = None) -> Tensor:
        graphs = graphs if graphs is not None else self.graphs(examples)
        enc = self.encode(graphs)
        targets = [self.tgt_vocab.ids(ex.logic) for ex in examples]
        return teacher_forced_loss(enc, targets, self.params, self.dec_cfg, train, rng)

    def predict(self, examples: Sequence[Example], beam: int | None = None,
                graphs: Sequence[SyntacticGraph] | None = None,
                chunk: int = 64) -> list[list[str]]:
        """Decode every example; ``beam=1`` uses greedy decoding."""
        beam = beam or self.dec_cfg.beam
        graphs = graphs if graphs is not None else self.graphs(examples)
        out = []
        with T.no_grad():
            for start in range(0, len(graphs), chunk):
                enc = self.encode(graphs[start:start + chunk])
                if beam == 1:
                    ids = greedy_decode_batch(enc, self.params, self.dec_cfg)
                else:
                    ids = beam_search_batch(enc, self.params, self.dec_cfg, beam)
                out.extend(self.tgt_vocab.tokens(x) for x in ids)
        return out

    # --- persistence --------------------------------------------------------------

    def meta(self) -> dict:
        return {
            "src_vocab": self.src_vocab.itos,
            "tgt_vocab": self.tgt_vocab.itos,
            "encoder": asdict(self.enc_cfg),
            "decoder": asdict(self.dec_cfg),
            "flags": self.flags.to_dict(),
        }

    def save(self, path):
        T.save_params(path, self.params, self.meta())

    def to_json(self) -> str:
        return T.params_to_json(self.params, self.meta())

    @classmethod
    def load(cls, path) -> "Graph2Seq":
        params, meta = T.load_params(path)
        return cls(Vocab(meta["src_vocab"]), Vocab(meta["tgt_vocab"]),
                   EncoderConfig(**meta["encoder"]), DecoderConfig(**meta["decoder"]),
                   FeatureFlags(**meta["flags"]), params)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for k, v in snap.items():
            self.params[k].data = v.copy()
