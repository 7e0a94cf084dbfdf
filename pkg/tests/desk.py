"""Seeded synthetic PTB-style corpus for tests and desk experiments.

Trees carry function tags, ``-NONE-`` traces (including a coindexed
topicalization whose trace subtree disappears entirely on normalization),
punctuation tags, quotes, particles and unary chains. Words are pseudo-words
with tag-typical suffixes drawn from Zipfian distributions, so rare-word
abstraction and OOV handling get exercised.
"""

from __future__ import annotations

import numpy as np

from neuralcrf.embeddings import EmbeddingTable
from neuralcrf.treebank import Leaf, Tree, normalize, read_ptb

_SYLL = ["ba", "ko", "ri", "ten", "lu", "mar", "so", "vi", "del", "pon", "ga", "ni", "tru", "fe", "lo", "sha", "dor", "mi"]

_OPEN = {
    "NN": (400, "", ["ment", "tion", "er", "ness", ""]),
    "NNS": (250, "s", ["er", "ment", "ist", ""]),
    "NNP": (200, "", ["son", "ville", "ia", ""]),
    "VB": (80, "", ["ate", "ize", ""]),
    "VBD": (150, "ed", ["", "at", "iz"]),
    "VBZ": (90, "s", ["", "ate"]),
    "VBG": (60, "ing", [""]),
    "JJ": (150, "", ["ous", "al", "ive", "ic"]),
    "RB": (50, "ly", [""]),
}

_CLOSED = {
    "DT": ["the", "a", "an", "this", "some", "every", "no"],
    "IN": ["of", "in", "on", "at", "with", "for", "from", "by", "near", "after"],
    "PRP": ["he", "she", "it", "they", "we"],
    "MD": ["will", "can", "would", "should", "may"],
    "CC": ["and", "but", "or"],
    "TO": ["to"],
    "RP": ["up", "out", "off", "down"],
    "CD": ["two", "three", "12", "1990", "3.5", "40"],
    "WDT": ["which", "that"],
    ".": [".", "?", "!"],
    ",": [","],
    ":": [";", "--"],
    "``": ["``"],
    "''": ["''"],
}


class _Lexicon:
    def __init__(self, rng: np.random.Generator):
        self.words: dict[str, list[str]] = {}
        seen = set()
        for tag, (size, suffix, stems) in _OPEN.items():
            out = []
            while len(out) < size:
                n = rng.integers(1, 4)
                w = "".join(rng.choice(_SYLL) for _ in range(n)) + rng.choice(stems) + suffix
                if tag == "NNP":
                    w = w.capitalize()
                if w in seen:
                    continue
                seen.add(w)
                out.append(w)
            self.words[tag] = out
        for tag, ws in _CLOSED.items():
            self.words[tag] = list(ws)
        self.probs = {}
        for tag, ws in self.words.items():
            z = 1.0 / np.arange(1, len(ws) + 1) ** 1.1
            self.probs[tag] = z / z.sum()

    def draw(self, rng, tag: str) -> str:
        ws = self.words[tag]
        return ws[rng.choice(len(ws), p=self.probs[tag])]


class DeskGenerator:
    """Draws raw (unnormalized) PTB-style trees from a hand-written grammar."""

    def __init__(self, seed: int = 0, max_length: int = 40, min_length: int = 2):
        self.rng = np.random.default_rng(seed)
        self.lex = _Lexicon(np.random.default_rng(10_000 + seed))
        self.max_length = max_length
        self.min_length = min_length
        self._coindex = 0

    # -- helpers --
    def _pt(self, tag):
        return ("T", tag, self.lex.draw(self.rng, tag))

    def _choose(self, options):
        ps = np.array([p for p, _ in options], dtype=float)
        return options[self.rng.choice(len(options), p=ps / ps.sum())][1]

    # -- grammar --
    def np_(self, d, label="NP"):
        base = [
            (3.0, lambda: [self._pt("DT"), self._pt("NN")]),
            (1.5, lambda: [self._pt("DT"), self._pt("JJ"), self._pt("NN")]),
            (1.0, lambda: [self._pt("DT"), self._pt("NNS")]),
            (1.0, lambda: [self._pt("NNS")]),
            (1.0, lambda: [self._pt("NNP")]),
            (0.7, lambda: [self._pt("NNP"), self._pt("NNP")]),
            (1.0, lambda: [self._pt("PRP")]),
            (0.6, lambda: [self._pt("CD"), self._pt("NNS")]),
            (0.4, lambda: [self._pt("JJ"), self._pt("NNS")]),
        ]
        if d < 3:
            base += [
                (1.2, lambda: [self.np_(d + 1), self.pp(d + 1)]),
                (0.3, lambda: [self.np_(d + 1), self._pt(","), self.np_(d + 1), self._pt(",")]),
                (0.4, lambda: [self.np_(d + 1), self._pt("CC"), self.np_(d + 1)]),
                (0.4, lambda: [self.np_(d + 1), self.sbar_rel(d + 1)]),
            ]
        return ("N", label, self._choose(base)())

    def pp(self, d, label="PP"):
        return ("N", label, [self._pt("IN"), self.np_(d + 1)])

    def sbar_rel(self, d):
        self._coindex += 1
        i = self._coindex
        wh = ("N", "WHNP-%d" % i, [self._pt("WDT")])
        trace = ("N", "NP-SBJ", [("T", "-NONE-", "*T*-%d" % i)])
        s = ("N", "S", [trace, self.vp(d + 1)])
        return ("N", "SBAR", [wh, s])

    def control_s(self, d):
        subj = ("N", "NP-SBJ", [("T", "-NONE-", "*")])
        inner = ("N", "VP", [self._pt("VB"), self.np_(d + 1)])
        return ("N", "S", [subj, ("N", "VP", [self._pt("TO"), inner])])

    def vp(self, d):
        opts = [
            (2.5, lambda: [self._pt("VBD"), self.np_(d + 1)]),
            (1.2, lambda: [self._pt("VBZ"), self.np_(d + 1)]),
            (1.0, lambda: [self._pt("VBD")]),
            (1.0, lambda: [self._pt("VBD"), self.pp(d + 1, "PP-LOC")]),
            (0.8, lambda: [self._pt("VBD"), ("N", "PRT", [self._pt("RP")]), self.np_(d + 1)]),
            (0.8, lambda: [self._pt("VBD"), ("N", "ADVP-MNR", [self._pt("RB")])]),
            (0.7, lambda: [self._pt("MD"), ("N", "VP", [self._pt("VB"), self.np_(d + 1)])]),
            (0.3, lambda: [self._pt("VBZ"), ("N", "ADJP-PRD", [self._pt("JJ")])]),
        ]
        if d < 3:
            opts += [
                (1.2, lambda: [self._pt("VBD"), self.np_(d + 1), self.pp(d + 1)]),
                (0.6, lambda: [self._pt("VBD"), self.control_s(d + 1)]),
                (0.5, lambda: [self._pt("VBD"), ("N", "SBAR", [self._pt("IN"), self.s_core(d + 1)])]),
                (0.3, lambda: [self._pt("VBG"), self.np_(d + 1)]),
            ]
        return ("N", "VP", self._choose(opts)())

    def s_core(self, d):
        return ("N", "S", [self.np_(d + 1, "NP-SBJ"), self.vp(d + 1)])

    def sentence(self):
        kind = self._choose([(8.0, "decl"), (0.6, "imp"), (0.5, "quote"), (0.6, "coord"), (0.3, "frag")])
        if kind == "decl":
            kids = [self.np_(0, "NP-SBJ"), self.vp(0), self._pt(".")]
        elif kind == "imp":
            # chain S -> VP -> VB once punctuation is deleted... here S keeps two children
            vp = ("N", "VP", [self._pt("VB")] + ([self.np_(1)] if self.rng.random() < 0.5 else []))
            kids = [vp, self._pt(".")]
        elif kind == "quote":
            self._coindex += 1
            i = self._coindex
            inner = ("N", "S-TPC-%d" % i, [self.np_(1, "NP-SBJ"), self.vp(1)])
            said = ("N", "VP", [self._pt("VBD"), ("N", "S", [("T", "-NONE-", "*T*-%d" % i)])])
            kids = [self._pt("``"), inner, self._pt(","), self._pt("''"), self.np_(1, "NP-SBJ"), said, self._pt(".")]
        elif kind == "coord":
            kids = [self.s_core(1), self._pt(":") if self.rng.random() < 0.3 else self._pt("CC"), self.s_core(1), self._pt(".")]
        else:
            # bare verb: unary chain S -> VP -> VB
            return ("N", "S", [("N", "VP", [self._pt("VB")])])
        return ("N", "S", kids)

    def _to_text(self, node) -> str:
        if node[0] == "T":
            return "(%s %s)" % (node[1], node[2])
        return "(%s %s)" % (node[1], " ".join(self._to_text(c) for c in node[2]))

    def raw_tree_text(self) -> str:
        while True:
            node = self.sentence()
            text = "( " + self._to_text(node) + ")"
            t = read_ptb(text)[0]
            n = len(normalize(t).words())
            if self.min_length <= n <= self.max_length:
                return text

    def raw_trees(self, count: int) -> list[Tree]:
        return read_ptb("\n".join(self.raw_tree_text() for _ in range(count)))

    def trees(self, count: int) -> list[Tree]:
        return [normalize(t) for t in self.raw_trees(count)]

    def embeddings(self, n_e: int = 8, coverage: float = 0.9, noise: float = 0.5, seed: int = 1) -> EmbeddingTable:
        """Tag-centroid-plus-noise vectors; a fraction of open-class words is left out."""
        rng = np.random.default_rng(seed)
        centroids = {tag: rng.normal(size=n_e) for tag in self.lex.words}
        words, vecs = [], []
        for tag, ws in self.lex.words.items():
            for w in ws:
                if tag in _OPEN and rng.random() > coverage:
                    continue
                if w in words:
                    continue
                words.append(w)
                vecs.append(centroids[tag] + noise * rng.normal(size=n_e))
        return EmbeddingTable(words, np.array(vecs))


def desk_corpus(n_train: int, n_test: int, seed: int = 0, max_length: int = 40):
    gen = DeskGenerator(seed, max_length=max_length)
    train = gen.trees(n_train)
    test = gen.trees(n_test)
    return gen, train, test


def toy_bank(count: int = 200, seed: int = 7, max_length: int = 12):
    gen = DeskGenerator(seed, max_length=max_length)
    return gen, gen.trees(count)


__all__ = ["DeskGenerator", "desk_corpus", "toy_bank", "Leaf"]
