"""Toy flight-query grammar with gold dependency and constituency parses.

Questions are generated from phrase templates; each template carries its
phrase structure and head choices, so the constituent tree and a projective
dependency tree fall out of the same derivation. Logical forms list the
constraints in a fixed canonical order regardless of their order in the
question.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus_io import (ROOT, ConstituentNode, ConstituentTree, DependencyParse, Example,
                        make_tokens, write_dependency_file, write_parallel_corpus, write_tree_file)

CITIES = ("boston", "denver", "dallas", "atlanta", "seattle", "miami", "chicago", "phoenix")
DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday")
AIRLINES = ("delta", "united", "american")


@dataclass
class Word:
    pos: str
    text: str


@dataclass
class Phrase:
    label: str
    children: list
    head: int = 0
    rels: list = field(default_factory=list)


def _np_phrase(rng, constraints, kind):
    """Noun phrase headed by 'flights' with its PP modifiers in random order."""
    pre, pre_rels = [], []
    if kind in ("list", "cheapest") and rng.random() < 0.5:
        pre.append(Word("DT", "the" if kind == "cheapest" or rng.random() < 0.5 else "all"))
        pre_rels.append("det")
    if kind == "cheapest":
        pre.append(Word("JJS", "cheapest"))
        pre_rels.append("amod")
    pps = []
    airline = constraints.get("airline")
    if airline is not None and rng.random() < 0.5:
        pre.append(Word("NNP", airline))
        pre_rels.append("compound")
    elif airline is not None:
        pps.append(("on", airline))
    for key, prep in (("from", "from"), ("to", "to"), ("day", "on")):
        if key in constraints:
            pps.append((prep, constraints[key]))
    rng.shuffle(pps)
    noun = Word("NNS", "flights")
    children = pre + [noun] + [Phrase("PP", [Word("IN", p), Word("NNP", v)], 1, ["case", None])
                               for p, v in pps]
    rels = pre_rels + [None] + ["nmod"] * len(pps)
    return Phrase("NP", children, len(pre), rels)


def _sentence(rng, constraints, kind):
    if kind == "count":
        np_ = _np_phrase(rng, constraints, kind)
        wh = Phrase("WHADJP", [Word("WRB", "how"), Word("JJ", "many")], 1, ["advmod", None])
        np_.children.insert(0, wh)
        np_.rels.insert(0, "amod")
        np_.head += 1
        return Phrase("SBARQ", [np_], 0, [None])
    if kind == "airline_of":
        pps = [(p, constraints[k]) for k, p in (("from", "from"), ("to", "to"), ("day", "on"))
               if k in constraints]
        rng.shuffle(pps)
        subj = Phrase("WHNP", [Word("WDT", "which"), Word("NNS", "airlines")], 1, ["det", None])
        vp = Phrase("VP", [Word("VBP", "fly")] + [
            Phrase("PP", [Word("IN", p), Word("NNP", v)], 1, ["case", None]) for p, v in pps],
            0, [None] + ["obl"] * len(pps))
        return Phrase("SBARQ", [subj, vp], 1, ["nsubj", None])
    np_ = _np_phrase(rng, constraints, kind)
    style = rng.integers(6)
    if style == 0:
        return Phrase("VP", [Word("VB", "show"), Word("PRP", "me"), np_], 0, [None, "iobj", "obj"])
    if style == 1:
        return Phrase("VP", [Word("VB", "list"), np_], 0, [None, "obj"])
    if style == 2:
        return Phrase("VP", [Word("VB", "give"), Word("PRP", "me"), np_], 0, [None, "iobj", "obj"])
    if style == 3:
        return Phrase("VP", [Word("VB", "find"), np_], 0, [None, "obj"])
    if style == 4:
        return Phrase("S", [Phrase("NP", [Word("PRP", "i")]),
                            Phrase("VP", [Word("VBP", "want"), np_], 0, [None, "obj"])],
                      1, ["nsubj", None])
    return Phrase("SBARQ", [Word("WP", "what"), Phrase("SQ", [Word("VBP", "are"), np_], 1,
                                                      ["cop", None])], 1, ["nsubj", None])


def _maybe_please(rng, tree):
    if tree.label == "VP" and rng.random() < 0.25:
        return Phrase("S", [Word("UH", "please"), tree], 1, ["discourse", None])
    return tree


def _logic(constraints, kind):
    body = ["(", "and", "flight"]
    for key in ("from", "to", "day", "airline"):
        if key in constraints:
            body += ["(", key, constraints[key], ")"]
    body.append(")")
    if kind == "cheapest":
        return ["(", "argmin"] + body + ["fare", ")"]
    if kind == "count":
        return ["(", "count"] + body + [")"]
    if kind == "airline_of":
        return ["(", "airline_of"] + body + [")"]
    return body


def _realize(tree: Phrase):
    words: list[str] = []
    arcs: list[tuple[int, int, str]] = []

    def walk(node):
        if isinstance(node, Word):
            i = len(words)
            words.append(node.text)
            return ConstituentNode(node.pos, (i,)), i
        built, heads = [], []
        for child in node.children:
            c, h = walk(child)
            built.append(c)
            heads.append(h)
        head = heads[node.head]
        for j, h in enumerate(heads):
            if j != node.head:
                rel = node.rels[j] if j < len(node.rels) and node.rels[j] else "dep"
                arcs.append((head, h, rel))
        return ConstituentNode(node.label, tuple(built)), head

    root, head = walk(tree)
    arcs.append((ROOT, head, "root"))
    arcs.sort(key=lambda a: a[1])
    return words, DependencyParse(tuple(arcs)), ConstituentTree(root, tuple(words))


def sample_example(rng: np.random.Generator) -> Example:
    kind = ("list", "cheapest", "count", "airline_of")[rng.choice(4, p=[0.4, 0.2, 0.2, 0.2])]
    constraints = {}
    src, dst = rng.choice(len(CITIES), size=2, replace=False)
    r = rng.random()
    if r < 0.7:
        constraints["from"], constraints["to"] = CITIES[src], CITIES[dst]
    elif r < 0.85:
        constraints["from"] = CITIES[src]
    else:
        constraints["to"] = CITIES[dst]
    if rng.random() < 0.4:
        constraints["day"] = DAYS[rng.integers(len(DAYS))]
    if kind != "airline_of" and rng.random() < 0.3:
        constraints["airline"] = AIRLINES[rng.integers(len(AIRLINES))]
    tree = _maybe_please(rng, _sentence(rng, constraints, kind))
    words, dep, cons = _realize(tree)
    return Example(make_tokens(words), _logic(constraints, kind), dep, cons)


def generate(n: int, seed: int = 0, exclude: set[str] | None = None) -> list[Example]:
    """``n`` examples with distinct questions, none of which are in ``exclude``."""
    rng = np.random.default_rng(seed)
    seen = set(exclude or ())
    out = []
    while len(out) < n:
        ex = sample_example(rng)
        key = " ".join(ex.words)
        if key in seen:
            continue
        seen.add(key)
        out.append(ex)
    return out


def generate_splits(n_train: int = 500, n_dev: int = 100, seed: int = 0):
    """Disjoint train/dev sets (no question appears in both)."""
    examples = generate(n_train + n_dev, seed)
    return examples[:n_train], examples[n_train:]


def write_split(examples, directory, name: str) -> dict[str, str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"corpus": directory / f"{name}.tsv", "dep": directory / f"{name}.dep",
             "cons": directory / f"{name}.cons"}
    write_parallel_corpus(examples, paths["corpus"])
    write_dependency_file(examples, paths["dep"])
    write_tree_file(examples, paths["cons"])
    return {k: str(v) for k, v in paths.items()}
