"""SWAP noise (adjacent letter transpositions) and paraphrase-set ingestion."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus_io import CorpusError, Example, attach_parses, load_dependency_file, load_tree_file, make_tokens

STANDARD_M_VALUES = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class SwapConfig:
    m: int
    seed: int = 0
    allow_any_m: bool = False

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be non-negative")
        if not self.allow_any_m and self.m not in STANDARD_M_VALUES:
            raise ValueError(f"m must be in {STANDARD_M_VALUES} unless allow_any_m is set")


@dataclass
class SwapRecord:
    """What one perturbation did: word index -> swapped position, plus any shortfall."""

    swaps: dict[int, int] = field(default_factory=dict)
    shortfall: int = 0

    def to_dict(self) -> dict:
        return {"indices": sorted(self.swaps),
                "positions": [self.swaps[i] for i in sorted(self.swaps)],
                "shortfall": self.shortfall}


def swap_positions(word: str) -> list[int]:
    """Positions i where exchanging word[i] and word[i+1] changes the word."""
    return [i for i in range(len(word) - 1) if word[i] != word[i + 1]]


def swap_at(word: str, i: int) -> str:
    return word[:i] + word[i + 1] + word[i] + word[i + 2:]


def eligible_words(tokens: Sequence[str], logic: Sequence[str]) -> set[int]:
    """Indices of words that may be perturbed.

    A word is protected if its lowercased form is a substring of any
    lowercased logical-form token; it must also have a visible adjacent swap
    (so at least two letters, not all identical).
    """
    logic_lower = [t.lower() for t in logic]
    out = set()
    for i, tok in enumerate(tokens):
        low = tok.lower()
        if len(tok) < 2 or not swap_positions(tok):
            continue
        if any(low in lt for lt in logic_lower):
            continue
        out.add(i)
    return out


def swap_noise(tokens: Sequence[str], cfg: SwapConfig, protected: set[int] | frozenset = frozenset(),
               rng: np.random.Generator | None = None,
               eligible: set[int] | None = None) -> tuple[list[str], SwapRecord]:
    """Transpose one adjacent letter pair in each of ``cfg.m`` randomly chosen words.

    Candidates are ``eligible`` minus ``protected`` (all words with a visible
    swap when ``eligible`` is None). If fewer than m candidates exist, all of
    them are perturbed and the shortfall is recorded.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    base = eligible if eligible is not None else {i for i, t in enumerate(tokens) if swap_positions(t)}
    candidates = sorted(i for i in base if i not in protected and swap_positions(tokens[i]))
    k = min(cfg.m, len(candidates))
    record = SwapRecord(shortfall=cfg.m - k)
    out = list(tokens)
    if k == 0:
        return out, record
    chosen = rng.choice(candidates, size=k, replace=False)
    for idx in sorted(int(i) for i in chosen):
        options = swap_positions(out[idx])
        pos = options[int(rng.integers(len(options)))]
        out[idx] = swap_at(out[idx], pos)
        record.swaps[idx] = pos
    return out, record


def perturb_example(ex: Example, cfg: SwapConfig, rng: np.random.Generator) -> tuple[Example, SwapRecord]:
    """Perturb an example's question; parses are kept as-is since token count is unchanged."""
    words, record = swap_noise(ex.words, cfg, rng=rng, eligible=eligible_words(ex.words, ex.logic))
    return Example(make_tokens(words), list(ex.logic), ex.dep, ex.cons), record


def example_rng(seed: int, index: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, *extra])


def perturb_dataset(examples: Sequence[Example], cfg: SwapConfig,
                    *extra: int) -> tuple[list[Example], list[SwapRecord]]:
    """Perturb every example with its own generator derived from (seed, index, *extra)."""
    out, records = [], []
    for i, ex in enumerate(examples):
        new, rec = perturb_example(ex, cfg, example_rng(cfg.seed, i, *extra))
        out.append(new)
        records.append(rec)
    return out, records


def load_paraphrase_set(path, originals: Sequence[Example], dep=None, cons=None) -> list[Example]:
    """Pair paraphrased questions (one per line, aligned) with the original logical forms.

    A line may also be ``question<TAB>anything``; only the question is used.
    Parses for the paraphrases come from optional side files.
    """
    lines = [l.rstrip("\r\n") for l in Path(path).read_text(encoding="utf-8").splitlines()]
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) != len(originals):
        raise CorpusError(f"paraphrase file has {len(lines)} lines but the original set has "
                          f"{len(originals)}")
    examples = [Example(make_tokens(line.split("\t")[0].split()), list(orig.logic))
                for line, orig in zip(lines, originals)]
    deps = load_dependency_file(dep) if dep else None
    trees = load_tree_file(cons) if cons else None
    return attach_parses(examples, deps, trees)
