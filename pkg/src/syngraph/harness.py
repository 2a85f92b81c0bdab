"""Training loop, exact-match evaluation, ablations and the SWAP robustness sweep."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .adversarial import SwapConfig, perturb_dataset
from .corpus_io import Example, build_vocab, load_dataset, load_pretrained_embeddings
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .graph import FeatureFlags
from .model import Graph2Seq

log = logging.getLogger(__name__)

PATH_FIELDS = ("train_corpus", "train_dep", "train_cons", "dev_corpus", "dev_dep", "dev_cons",
               "test_corpus", "test_dep", "test_cons", "embeddings", "checkpoint")


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch: int = 30
    dropout: float = 0.5
    hops: int = 10
    dim: int = 300
    hidden: int = 300
    beam: int = 3
    layers: int = 1
    max_len: int = 100
    pooling: str = "max"
    epochs: int = 100
    patience: int = 15
    min_freq: int = 1
    seed: int = 0
    folds: int = 5
    word_order: bool = True
    dependency: bool = True
    constituency: bool = True
    train_corpus: str | None = None
    train_dep: str | None = None
    train_cons: str | None = None
    dev_corpus: str | None = None
    dev_dep: str | None = None
    dev_cons: str | None = None
    test_corpus: str | None = None
    test_dep: str | None = None
    test_cons: str | None = None
    embeddings: str | None = None
    checkpoint: str | None = None

    @property
    def flags(self) -> FeatureFlags:
        return FeatureFlags(self.word_order, self.dependency, self.constituency)

    def with_flags(self, flags: FeatureFlags) -> "TrainConfig":
        d = self.to_dict()
        d.update(flags.to_dict())
        return TrainConfig(**d)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(hops=self.hops, dim=self.dim, pooling=self.pooling)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(hidden=self.hidden, layers=self.layers, embed_dim=self.dim,
                             beam=self.beam, max_len=self.max_len, dropout=self.dropout)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def resolve(self, workdir) -> "TrainConfig":
        """Make relative data paths relative to ``workdir``."""
        d = self.to_dict()
        for key in PATH_FIELDS:
            if d[key] and not Path(d[key]).is_absolute():
                d[key] = str(Path(workdir) / d[key])
        return TrainConfig(**d)


@dataclass
class RunReport:
    train_loss: list[float] = field(default_factory=list)
    dev_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_accuracy: float = 0.0
    test_accuracy: float | None = None
    wall_time: float | None = None
    config: dict = field(default_factory=dict)

    def to_json(self, include_time: bool = False) -> str:
        d = asdict(self)
        if not include_time:
            d.pop("wall_time")
        return json.dumps(d, sort_keys=True, indent=2)


@dataclass
class SweepReport:
    features: str
    rows: list[tuple[int, float]] = field(default_factory=list)

    def accuracy(self, m: int) -> float:
        return dict(self.rows)[m]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["features", "m", "accuracy"])
        for m, acc in self.rows:
            w.writerow([self.features, m, repr(acc)])
        return buf.getvalue()


class DatasetError(ValueError):
    pass


# --- evaluation ---------------------------------------------------------------------

def normalize(tokens) -> tuple[str, ...]:
    if isinstance(tokens, str):
        return tuple(tokens.split())
    return tuple(" ".join(tokens).split())


def exact_match_count(predictions: Sequence, golds: Sequence) -> int:
    if len(predictions) != len(golds):
        raise ValueError("predictions and gold forms must align")
    return sum(normalize(p) == normalize(g) for p, g in zip(predictions, golds))


def exact_match(predictions: Sequence, golds: Sequence) -> float:
    if not golds:
        raise ValueError("cannot score an empty dataset")
    return exact_match_count(predictions, golds) / len(golds)


def evaluate_exact_match(model: Graph2Seq, dataset: Sequence[Example], beam: int | None = None) -> float:
    if not dataset:
        raise ValueError("cannot score an empty dataset")
    preds = model.predict(dataset, beam)
    return exact_match(preds, [ex.logic for ex in dataset])


# --- training -----------------------------------------------------------------------

def check_features(cfg: TrainConfig, examples: Sequence[Example], name: str):
    if cfg.dependency and any(ex.dep is None for ex in examples):
        raise DatasetError(f"{name}: dependency features requested but parses are missing")
    if cfg.constituency and any(ex.cons is None for ex in examples):
        raise DatasetError(f"{name}: constituency features requested but trees are missing")


def build_model(cfg: TrainConfig, train_set: Sequence[Example], rng: np.random.Generator) -> Graph2Seq:
    src, tgt = build_vocab(train_set, cfg.min_freq)
    embeddings = None
    if cfg.embeddings:
        matrix = load_pretrained_embeddings(cfg.embeddings, src, cfg.dim, rng)
        log.info("pretrained vectors cover %d of %d source symbols", matrix.coverage, len(src))
        embeddings = matrix.weights
    return Graph2Seq.create(src, tgt, cfg.encoder_config(), cfg.decoder_config(), cfg.flags, rng,
                            embeddings)


def train(cfg: TrainConfig, train_set: Sequence[Example],
          dev_set: Sequence[Example] | None = None) -> tuple[Graph2Seq, RunReport]:
    """Mini-batch Adam training that keeps the parameters with the best dev accuracy.

    All randomness (initialisation, shuffling, dropout) flows from ``cfg.seed``.
    Without a dev set the final parameters are kept.
    """
    if not train_set:
        raise DatasetError("empty training set")
    check_features(cfg, train_set, "train")
    if dev_set:
        check_features(cfg, dev_set, "dev")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg, train_set, rng)
    params = model.param_list()
    opt = T.Adam(params, lr=cfg.lr)
    graphs = model.graphs(train_set)
    dev_graphs = model.graphs(dev_set) if dev_set else None
    report = RunReport(config=cfg.to_dict())
    best = model.snapshot()
    best_acc, stale = -1.0, 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        total, count = 0.0, 0
        for start_i in range(0, len(order), cfg.batch):
            idx = order[start_i:start_i + cfg.batch]
            batch = [train_set[i] for i in idx]
            loss = model.loss(batch, train=True, rng=rng, graphs=[graphs[i] for i in idx])
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(f"loss diverged at epoch {epoch}")
            grads = T.backward(loss, params)
            for p in params:
                p.grad = None
            opt.step(grads)
            total += value * len(idx)
            count += len(idx)
        report.train_loss.append(total / count)

        if dev_set:
            acc = exact_match(model.predict(dev_set, graphs=dev_graphs),
                              [ex.logic for ex in dev_set])
            report.dev_accuracy.append(acc)
            log.info("epoch %d loss %.4f dev %.3f", epoch, report.train_loss[-1], acc)
            if acc > best_acc:
                best_acc, stale = acc, 0
                best = model.snapshot()
                report.best_epoch = epoch
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        else:
            log.info("epoch %d loss %.4f", epoch, report.train_loss[-1])
            best = model.snapshot()
            report.best_epoch = epoch

    model.restore(best)
    report.best_dev_accuracy = max(best_acc, 0.0)
    report.wall_time = time.perf_counter() - start
    return model, report


def kfold_splits(n: int, folds: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    if folds < 2 or folds > n:
        raise ValueError(f"need 2 <= folds <= {n}")
    order = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(order, folds)
    return [(np.concatenate(parts[:i] + parts[i + 1:]), parts[i]) for i in range(folds)]


def cross_validate(cfg: TrainConfig, examples: Sequence[Example]) -> list[float]:
    """Held-out exact match per fold; the held-out fold also drives model selection."""
    scores = []
    for tr, te in kfold_splits(len(examples), cfg.folds, cfg.seed):
        held = [examples[i] for i in te]
        model, _ = train(cfg, [examples[i] for i in tr], held)
        scores.append(evaluate_exact_match(model, held))
    return scores


# --- ablation and robustness -----------------------------------------------------------

ABLATION_ROWS = {
    "Graph2Seq": FeatureFlags(True, True, True),
    "w/o word order features": FeatureFlags(False, True, True),
    "w/o dependency features": FeatureFlags(True, False, True),
    "w/o constituency features": FeatureFlags(True, True, False),
    "w/ word order features": FeatureFlags(True, False, False),
}


@dataclass
class AblationRow:
    name: str
    flags: FeatureFlags
    accuracy: float
    report: RunReport
    model: Graph2Seq | None = field(default=None, repr=False)


def run_ablation(cfg: TrainConfig, train_set: Sequence[Example], eval_set: Sequence[Example],
                 feature_sets: Sequence[FeatureFlags] | dict[str, FeatureFlags],
                 dev_set: Sequence[Example] | None = None) -> list[AblationRow]:
    """Train and score one model per feature set, all from the same seed."""
    if not isinstance(feature_sets, dict):
        feature_sets = {f.name: f for f in feature_sets}
    rows = []
    for name, flags in feature_sets.items():
        sub_cfg = cfg.with_flags(flags)
        check_features(sub_cfg, train_set, "train")
        check_features(sub_cfg, eval_set, "eval")
        model, report = train(sub_cfg, train_set, dev_set if dev_set is not None else eval_set)
        rows.append(AblationRow(name, flags, evaluate_exact_match(model, eval_set), report, model))
    return rows


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "word_order", "dependency", "constituency", "accuracy"])
    for r in rows:
        w.writerow([r.name, int(r.flags.word_order), int(r.flags.dependency),
                    int(r.flags.constituency), repr(r.accuracy)])
    return buf.getvalue()


def robustness_sweep(model: Graph2Seq, dev_set: Sequence[Example],
                     m_values: Sequence[int] = (0, 1, 2, 3, 4, 5), trials: int = 3,
                     seed: int = 0) -> SweepReport:
    """Mean exact match over ``trials`` SWAP-perturbed copies of the dev set for each m.

    The m = 0 row is the clean accuracy, computed once.
    """
    golds = [ex.logic for ex in dev_set]
    report = SweepReport(model.flags.name)
    for m in m_values:
        if m == 0:
            report.rows.append((0, exact_match(model.predict(dev_set), golds)))
            continue
        accs = []
        for trial in range(trials):
            noisy, _ = perturb_dataset(dev_set, SwapConfig(m, seed, allow_any_m=True), m, trial)
            accs.append(exact_match(model.predict(noisy), golds))
        report.rows.append((m, float(np.mean(accs))))
    return report


def load_split(cfg: TrainConfig, split: str, flags: FeatureFlags | None = None) -> list[Example] | None:
    """Load ``split`` (train/dev/test) with only the parse files the flags need."""
    flags = flags or cfg.flags
    corpus = getattr(cfg, f"{split}_corpus")
    if not corpus:
        return None
    dep = getattr(cfg, f"{split}_dep")
    cons = getattr(cfg, f"{split}_cons")
    if flags.dependency and not dep:
        raise DatasetError(f"dependency features requested but {split}_dep is not set")
    if flags.constituency and not cons:
        raise DatasetError(f"constituency features requested but {split}_cons is not set")
    return load_dataset(corpus, dep if flags.dependency else None,
                        cons if flags.constituency else None)
