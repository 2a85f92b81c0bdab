"""Readers and writers for parallel corpora, dependency parses, bracketed trees
and pretrained word vectors, plus vocabulary construction."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

ROOT = -1

PAD, UNK, SOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
RESERVED = (PAD, UNK, SOS, EOS)
PAD_ID, UNK_ID, SOS_ID, EOS_ID = range(4)

UNKNOWN_INIT_SCALE = 0.08


class CorpusError(ValueError):
    """Malformed corpus, parse or embedding input."""


@dataclass(frozen=True)
class Token:
    surface: str
    index: int

    def __post_init__(self):
        if not self.surface:
            raise CorpusError("token surface must be non-empty")


@dataclass(frozen=True)
class DependencyParse:
    """Arcs are (head, dependent, label) with 0-based indices; head may be ROOT."""

    arcs: tuple[tuple[int, int, str], ...]

    def non_root_arcs(self) -> list[tuple[int, int, str]]:
        return [a for a in self.arcs if a[0] != ROOT]

    def validate(self, n_tokens: int):
        seen = set()
        for head, dep, label in self.arcs:
            if not label:
                raise CorpusError("dependency label must be non-empty")
            if not 0 <= dep < n_tokens or not (head == ROOT or 0 <= head < n_tokens):
                raise CorpusError(f"arc ({head}, {dep}) out of range for {n_tokens} tokens")
            if dep in seen:
                raise CorpusError(f"token {dep} has more than one head")
            seen.add(dep)


Child = Union["ConstituentNode", int]


@dataclass(frozen=True)
class ConstituentNode:
    label: str
    children: tuple[Child, ...]


@dataclass(frozen=True)
class ConstituentTree:
    root: ConstituentNode
    words: tuple[str, ...] = ()

    def leaves(self) -> list[int]:
        out = []
        stack: list[Child] = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, int):
                out.append(node)
            else:
                stack.extend(reversed(node.children))
        return out

    def nonterminals(self) -> list[ConstituentNode]:
        """Non-terminal nodes in pre-order."""
        out = []
        stack: list[Child] = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, ConstituentNode):
                out.append(node)
                stack.extend(c for c in reversed(node.children) if isinstance(c, ConstituentNode))
        return out

    def edge_count(self) -> int:
        return sum(len(n.children) for n in self.nonterminals())

    def validate(self, n_tokens: int):
        if self.leaves() != list(range(n_tokens)):
            raise CorpusError(f"tree leaves do not cover tokens 0..{n_tokens - 1} in order")

    def to_bracketed(self) -> str:
        def fmt(node: Child) -> str:
            if isinstance(node, int):
                return self.words[node] if self.words else str(node)
            return "(" + " ".join([node.label] + [fmt(c) for c in node.children]) + ")"

        return fmt(self.root)


@dataclass
class Example:
    tokens: list[Token]
    logic: list[str]
    dep: DependencyParse | None = None
    cons: ConstituentTree | None = None

    def __post_init__(self):
        if not self.logic:
            raise CorpusError("logical form must be non-empty")
        if self.dep is not None:
            self.dep.validate(len(self.tokens))
        if self.cons is not None:
            self.cons.validate(len(self.tokens))

    @property
    def words(self) -> list[str]:
        return [t.surface for t in self.tokens]

    @classmethod
    def from_strings(cls, question: str, logic: str, **kw) -> "Example":
        return cls(make_tokens(question.split()), logic.split(), **kw)


def make_tokens(words: Iterable[str]) -> list[Token]:
    return [Token(w, i) for i, w in enumerate(words)]


# --- parallel corpora ----------------------------------------------------------

def parse_parallel_line(line: str, lineno: int = 1) -> Example:
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) < 2:
        raise CorpusError(f"line {lineno}: expected question<TAB>logical form")
    logic = fields[1].split()
    if not logic:
        raise CorpusError(f"line {lineno}: empty logical form")
    return Example(make_tokens(fields[0].split()), logic)


def load_parallel_corpus(path) -> list[Example]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    examples = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            examples.append(parse_parallel_line(line, lineno))
    return examples


def format_parallel_line(ex: Example) -> str:
    return " ".join(ex.words) + "\t" + " ".join(ex.logic)


def write_parallel_corpus(examples: Sequence[Example], path):
    text = "".join(format_parallel_line(ex) + "\n" for ex in examples)
    Path(path).write_text(text, encoding="utf-8")


# --- dependency parses -------------------------------------------------------------

def parse_conllu(text: str) -> DependencyParse:
    """Parse one sentence block of ``index form head label`` rows (1-based, 0 = ROOT).

    Full 10-column CoNLL-U rows are accepted too (HEAD and DEPREL are read from
    columns 7 and 8). Comment lines and multiword/empty-node rows are skipped.
    """
    rows = []
    for line in text.splitlines():
        if not line.strip():
            if rows:
                break
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t") if "\t" in line else line.split()
        if "-" in cols[0] or "." in cols[0]:
            continue
        if len(cols) >= 10:
            cols = [cols[0], cols[1], cols[6], cols[7]]
        if len(cols) < 4:
            raise CorpusError(f"dependency row needs 4 columns: {line!r}")
        rows.append(cols)

    n = len(rows)
    arcs = []
    seen = set()
    for pos, (idx, _form, head, label) in enumerate(rows):
        if not idx.isdigit():
            raise CorpusError(f"non-numeric index: {idx!r}")
        if not head.isdigit():
            raise CorpusError(f"non-numeric head: {head!r}")
        dep = int(idx) - 1
        if dep != pos:
            raise CorpusError(f"indices must run 1..n in order, got {idx} at row {pos + 1}")
        if dep in seen:
            raise CorpusError(f"duplicate dependent {idx}")
        seen.add(dep)
        h = int(head)
        if h > n:
            raise CorpusError(f"head index {h} out of range for {n} tokens")
        if not label:
            raise CorpusError("empty dependency label")
        arcs.append((ROOT if h == 0 else h - 1, dep, label))
    return DependencyParse(tuple(arcs))


def format_conllu(parse: DependencyParse, words: Sequence[str]) -> str:
    by_dep = {d: (h, lab) for h, d, lab in parse.arcs}
    lines = []
    for i, w in enumerate(words):
        if i in by_dep:
            h, lab = by_dep[i]
            head = 0 if h == ROOT else h + 1
        else:
            head, lab = 0, "dep"
        lines.append(f"{i + 1}\t{w}\t{head}\t{lab}")
    return "\n".join(lines) + "\n"


def split_blocks(text: str) -> list[str]:
    blocks, current = [], []
    for line in text.splitlines():
        if line.strip():
            current.append(line)
        elif current:
            blocks.append("\n".join(current))
            current = []
    if current:
        blocks.append("\n".join(current))
    return blocks


def load_dependency_file(path) -> list[DependencyParse]:
    return [parse_conllu(b) for b in split_blocks(Path(path).read_text(encoding="utf-8"))]


def write_dependency_file(examples: Sequence[Example], path):
    blocks = [format_conllu(ex.dep, ex.words) for ex in examples]
    Path(path).write_text("\n".join(blocks), encoding="utf-8")


# --- constituency trees ------------------------------------------------------------

def _tokenize_brackets(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def parse_bracketed_tree(text: str) -> ConstituentTree:
    """Parse ``(NP (DT the) (NNS jobs))``-style notation.

    Leaves are replaced by their left-to-right position; pre-terminal POS
    nodes stay as ordinary non-terminals.
    """
    toks = _tokenize_brackets(text)
    if not toks:
        raise CorpusError("empty tree")
    if toks.count("(") != toks.count(")"):
        raise CorpusError("unbalanced parentheses")
    words: list[str] = []
    pos = 0

    def node() -> ConstituentNode:
        nonlocal pos
        if toks[pos] != "(":
            raise CorpusError(f"expected '(' at token {pos}")
        pos += 1
        if pos >= len(toks) or toks[pos] in "()":
            raise CorpusError("non-terminal without a label")
        label = toks[pos]
        pos += 1
        children: list[Child] = []
        while True:
            if pos >= len(toks):
                raise CorpusError("unbalanced parentheses")
            tok = toks[pos]
            if tok == ")":
                pos += 1
                break
            if tok == "(":
                children.append(node())
            else:
                children.append(len(words))
                words.append(tok)
                pos += 1
        if not children:
            raise CorpusError(f"empty non-terminal {label}")
        return ConstituentNode(label, tuple(children))

    root = node()
    if pos != len(toks):
        raise CorpusError("trailing material after the root bracket")
    return ConstituentTree(root, tuple(words))


def load_tree_file(path) -> list[ConstituentTree]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [parse_bracketed_tree(line) for line in lines if line.strip()]


def write_tree_file(examples: Sequence[Example], path):
    text = "".join(ex.cons.to_bracketed() + "\n" for ex in examples)
    Path(path).write_text(text, encoding="utf-8")


def attach_parses(examples: list[Example], deps: Sequence[DependencyParse] | None = None,
                  trees: Sequence[ConstituentTree] | None = None) -> list[Example]:
    """Return copies of ``examples`` carrying the aligned parses."""
    for name, side in (("dependency", deps), ("constituency", trees)):
        if side is not None and len(side) != len(examples):
            raise CorpusError(
                f"{name} file has {len(side)} entries but corpus has {len(examples)}")
    out = []
    for i, ex in enumerate(examples):
        dep = deps[i] if deps is not None else ex.dep
        cons = trees[i] if trees is not None else ex.cons
        try:
            out.append(Example(list(ex.tokens), list(ex.logic), dep, cons))
        except CorpusError as err:
            raise CorpusError(f"example {i + 1}: {err}") from None
    return out


def load_dataset(corpus, dep=None, cons=None) -> list[Example]:
    examples = load_parallel_corpus(corpus)
    deps = load_dependency_file(dep) if dep else None
    trees = load_tree_file(cons) if cons else None
    return attach_parses(examples, deps, trees)


# --- vocabularies ---------------------------------------------------------------------

@dataclass
class Vocab:
    itos: list[str]
    stoi: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.itos[:4]) != RESERVED:
            raise ValueError("vocab must start with the reserved tokens")
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocab entries must be unique")

    @classmethod
    def from_counts(cls, counts: Counter, min_freq: int = 1) -> "Vocab":
        kept = [t for t, c in counts.items() if c >= min_freq and t not in RESERVED]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(list(RESERVED) + kept)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def tokens(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]


def source_symbols(ex: Example) -> list[str]:
    """Every text attribute a graph node built from ``ex`` can carry."""
    out = list(ex.words)
    if ex.dep is not None:
        out.extend(lab for h, _, lab in ex.dep.arcs if h != ROOT)
    if ex.cons is not None:
        out.extend(n.label for n in ex.cons.nonterminals())
    return out


def build_vocab(examples: Sequence[Example], min_freq: int = 1) -> tuple[Vocab, Vocab]:
    src, tgt = Counter(), Counter()
    for ex in examples:
        src.update(source_symbols(ex))
        tgt.update(ex.logic)
    return Vocab.from_counts(src, min_freq), Vocab.from_counts(tgt, min_freq)


# --- pretrained vectors ------------------------------------------------------------

@dataclass
class EmbeddingMatrix:
    weights: np.ndarray
    coverage: int = 0

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


def random_embeddings(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-UNKNOWN_INIT_SCALE, UNKNOWN_INIT_SCALE, size=(n, d))


def load_pretrained_embeddings(path, vocab: Vocab, d: int = 300,
                               rng: np.random.Generator | None = None) -> EmbeddingMatrix:
    """Copy vectors for vocab tokens found in a GloVe-style text file.

    Tokens not in the file keep a uniform [-0.08, 0.08] initialisation.
    """
    if d <= 0:
        raise ValueError("embedding dimension must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    weights = random_embeddings(len(vocab), d, rng)
    found = set()
    with Path(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            if len(parts) - 1 != d:
                raise CorpusError(
                    f"line {lineno}: vector has dimension {len(parts) - 1}, expected {d}")
            token = parts[0]
            if token in vocab.stoi and token not in found:
                weights[vocab.stoi[token]] = np.asarray(parts[1:], dtype=np.float64)
                found.add(token)
    return EmbeddingMatrix(weights, len(found))
