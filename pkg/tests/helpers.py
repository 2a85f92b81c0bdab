"""Random sentence/parse generators shared by the tests."""

import numpy as np

from syngraph.corpus_io import ROOT, ConstituentNode, ConstituentTree, DependencyParse, Example, make_tokens

LABELS = ("det", "nsubj", "obj", "amod", "nmod", "case", "advmod")
PHRASES = ("NP", "VP", "PP", "S", "ADJP", "SBAR")
TAGS = ("DT", "NN", "NNS", "VB", "IN", "JJ")


def random_projective_arcs(rng, lo, hi, head, arcs):
    """Attach every token in [lo, hi) under ``head`` as a projective subtree."""
    if lo >= hi:
        return
    root = int(rng.integers(lo, hi))
    arcs.append((head, root, LABELS[rng.integers(len(LABELS))] if head != ROOT else "root"))
    random_projective_arcs(rng, lo, root, root, arcs)
    random_projective_arcs(rng, root + 1, hi, root, arcs)


def random_dependency(rng, n):
    arcs = []
    random_projective_arcs(rng, 0, n, ROOT, arcs)
    return DependencyParse(tuple(sorted(arcs, key=lambda a: a[1])))


def random_constituents(rng, lo, hi, preterminals=True):
    if hi - lo == 1:
        leaf = lo
        if preterminals and rng.random() < 0.8:
            return ConstituentNode(TAGS[rng.integers(len(TAGS))], (leaf,))
        return leaf
    cuts = sorted(rng.choice(np.arange(lo + 1, hi), size=min(hi - lo - 1, int(rng.integers(1, 4))),
                             replace=False).tolist())
    bounds = [lo] + cuts + [hi]
    children = tuple(random_constituents(rng, a, b, preterminals) for a, b in zip(bounds, bounds[1:]))
    return ConstituentNode(PHRASES[rng.integers(len(PHRASES))], children)


def random_tree(rng, n):
    root = random_constituents(rng, 0, n)
    if isinstance(root, int):
        root = ConstituentNode("X", (root,))
    return ConstituentTree(root)


def random_example(rng, n=None, vocab=("what", "are", "the", "jobs", "for", "c++", "salary", "list")):
    n = n or int(rng.integers(1, 15))
    words = [vocab[i] for i in rng.integers(len(vocab), size=n)]
    return Example(make_tokens(words), ["x"], random_dependency(rng, n), random_tree(rng, n))


def tiny_model(tgt_words=("a",), seed=0, dim=3, hidden=4, hops=2, max_len=4, beam=3,
               src_words=("list", "the", "jobs", "NP", "det"), scramble=True):
    """A small randomly initialised model with a hand-picked target vocabulary."""
    from syngraph.corpus_io import RESERVED, Vocab
    from syngraph.decoder import DecoderConfig
    from syngraph.encoder import EncoderConfig
    from syngraph.graph import ALL_FEATURES
    from syngraph.model import Graph2Seq

    rng = np.random.default_rng(seed)
    src = Vocab(list(RESERVED) + list(src_words))
    tgt = Vocab(list(RESERVED) + list(tgt_words))
    enc = EncoderConfig(hops=hops, dim=dim)
    dec = DecoderConfig(hidden=hidden, embed_dim=dim, beam=beam, max_len=max_len, dropout=0.5)
    model = Graph2Seq.create(src, tgt, enc, dec, ALL_FEATURES, rng,
                             embeddings=rng.normal(size=(len(src), dim)))
    for name, p in model.params.items():
        # unit-scale weights give peaked, tie-free output distributions
        if scramble and (name.startswith("dec.") or name.endswith("_b")):
            p.data = rng.normal(size=p.shape)
    return model


def five_node_example():
    """Two words, one dependency label node, NP and one pre-terminal: five graph nodes."""
    from syngraph.corpus_io import Example, parse_bracketed_tree, parse_conllu

    return Example.from_strings("the jobs", "a", dep=parse_conllu("1 the 2 det\n2 jobs 0 root"),
                                cons=parse_bracketed_tree("(NP (DT the) jobs)"))


def parsed(question, logic):
    """Example with a head-final dependency chain and a flat tree with pre-terminals."""
    from syngraph.corpus_io import Example, parse_bracketed_tree, parse_conllu

    words = question.split()
    n = len(words)
    conllu = "\n".join(f"{i + 1} {w} {0 if i == n - 1 else n} {'root' if i == n - 1 else 'dep'}"
                       for i, w in enumerate(words))
    tree = "(S " + " ".join(f"(X {w})" for w in words) + ")"
    return Example.from_strings(question, logic, dep=parse_conllu(conllu), cons=parse_bracketed_tree(tree))
