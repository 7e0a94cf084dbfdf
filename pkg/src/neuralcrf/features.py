"""Sparse surface features and the neural word window.

Feature strings follow a fixed naming scheme (``BS=``, ``FW=``, ``LW=``,
``AE=``, ``BSP=``, ``ASP=``, ``LEN=``, ``SH=`` for spans and splits;
``W{off}=``, ``P{off}=``, ``S{off}=`` for preterminals) so a serialized
indexer reloads onto identical ids.
"""

from __future__ import annotations

from collections import Counter

import numpy as np
import scipy.sparse as sp

BEGIN = "<s>"
END = "</s>"
UNK = "<UNK>"

N_WINDOW = 12
MAX_LENGTH_BUCKET = 21
SHAPE_MAX = 8
SHAPE_ELLIPSIS = "…"
AFFIX_MAX = 5


class FeatureIndexer:
    """String -> dense id. Once frozen, unseen strings map to None."""

    def __init__(self, strings=()):
        self._ids: dict[str, int] = {}
        self._strings: list[str] = []
        self.frozen = False
        for s in strings:
            self.index(s)

    def index(self, s: str) -> int | None:
        idx = self._ids.get(s)
        if idx is None and not self.frozen:
            idx = self._ids[s] = len(self._strings)
            self._strings.append(s)
        return idx

    def indices(self, strings) -> list[int]:
        out = []
        for s in strings:
            idx = self.index(s)
            if idx is not None:
                out.append(idx)
        return out

    def freeze(self) -> "FeatureIndexer":
        self.frozen = True
        return self

    def string(self, idx: int) -> str:
        return self._strings[idx]

    def __len__(self) -> int:
        return len(self._strings)

    def __contains__(self, s) -> bool:
        return s in self._ids

    def strings(self) -> list[str]:
        return list(self._strings)


class WordAbstractor:
    """Maps a word to its longest suffix seen at least ``threshold`` times in training."""

    def __init__(self, suffix_counts: Counter, threshold: int = 100):
        self.suffix_counts = suffix_counts
        self.threshold = threshold
        self._memo: dict[str, str] = {}

    @classmethod
    def from_words(cls, words, threshold: int = 100) -> "WordAbstractor":
        counts: Counter = Counter()
        for w in words:
            for n in range(1, len(w) + 1):
                counts[w[-n:]] += 1
        return cls(counts, threshold)

    def __call__(self, word: str) -> str:
        out = self._memo.get(word)
        if out is None:
            out = abstract_word(word, self.suffix_counts, self.threshold)
            self._memo[word] = out
        return out


def abstract_word(word: str, counts, threshold: int = 100) -> str:
    for n in range(len(word), 0, -1):
        if counts.get(word[-n:], 0) >= threshold:
            return word[-n:]
    return UNK


def _token_class(tok: str) -> str:
    c = tok[0]
    if c.isdigit():
        return "0"
    if c.isalpha():
        return "X" if c.isupper() else "x"
    return c


def span_shape(sentence, i: int, k: int) -> str:
    classes = [_token_class(t) for t in sentence[i:k]]
    if len(classes) > SHAPE_MAX:
        classes = classes[:4] + [SHAPE_ELLIPSIS] + classes[-4:]
    return "".join(classes)


def _word(sentence, pos: int, abstract) -> str:
    if pos < 0:
        return BEGIN
    if pos >= len(sentence):
        return END
    return abstract(sentence[pos])


def _identity(w):
    return w


def start_features(sentence, i, abstract=_identity) -> list[str]:
    return ["BS=" + _word(sentence, i - 1, abstract), "FW=" + _word(sentence, i, abstract)]


def end_features(sentence, k, abstract=_identity) -> list[str]:
    return ["LW=" + _word(sentence, k - 1, abstract), "AE=" + _word(sentence, k, abstract)]


def split_features(sentence, j, abstract=_identity) -> list[str]:
    return ["BSP=" + _word(sentence, j - 1, abstract), "ASP=" + _word(sentence, j, abstract)]


def length_feature(length: int) -> str:
    return "LEN=%d" % min(length, MAX_LENGTH_BUCKET)


def surface_features_span(sentence, s, abstract=_identity) -> list[str]:
    """Features of an anchoring ``s = (i, j, k)``; ``j`` is None for unaries."""
    i, j, k = s
    feats = start_features(sentence, i, abstract) + end_features(sentence, k, abstract)
    if j is not None:
        feats += split_features(sentence, j, abstract)
    feats.append(length_feature(k - i))
    feats.append("SH=" + span_shape(sentence, i, k))
    return feats


def surface_features_preterminal(sentence, position: int) -> list[str]:
    feats = []
    for off in (-1, 0, 1):
        p = position + off
        if p < 0 or p >= len(sentence):
            feats.append("W%d=%s" % (off, BEGIN if p < 0 else END))
            continue
        w = sentence[p]
        feats.append("W%d=%s" % (off, w))
        for n in range(1, min(AFFIX_MAX, len(w)) + 1):
            feats.append("P%d=%s" % (off, w[:n]))
            feats.append("S%d=%s" % (off, w[-n:]))
    return feats


def window_positions(i: int, j: int | None, k: int) -> list[int | None]:
    """Token positions of the 12 window slots; None marks a filled-in split slot."""
    out = [i - 2, i - 1, i, i + 1]
    out += [None] * 4 if j is None else [j - 2, j - 1, j, j + 1]
    out += [k - 2, k - 1, k, k + 1]
    return out


def word_window(sentence, s) -> list[str]:
    i, j, k = s
    n = len(sentence)
    out = []
    for slot, p in enumerate(window_positions(i, j, k)):
        if p is None:
            out.append(BEGIN if slot < 6 else END)
        elif p < 0:
            out.append(BEGIN)
        elif p >= n:
            out.append(END)
        else:
            out.append(sentence[p])
    return out


def _csr(rows: list[list[int]], n_cols: int) -> sp.csr_matrix:
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    indices = np.fromiter((x for r in rows for x in r), dtype=np.int64, count=indptr[-1])
    data = np.ones(len(indices))
    return sp.csr_matrix((data, indices, indptr), shape=(len(rows), n_cols))


class SentenceFeatures:
    """Indicator matrices for every span, split point and preterminal of one sentence.

    ``spans`` rows follow the chart layout's span order; ``splits`` has one
    row per fence ``0..n``; ``preterminals`` one row per token.
    """

    def __init__(self, sentence, indexer: FeatureIndexer, abstract, span_order):
        n = len(sentence)
        self.n = n
        idx = indexer.indices
        starts = [idx(start_features(sentence, i, abstract)) for i in range(n)]
        ends = [None] + [idx(end_features(sentence, k, abstract)) for k in range(1, n + 1)]
        lengths = [None] + [idx([length_feature(L)]) for L in range(1, n + 1)]
        rows = []
        for i, k in span_order:
            rows.append(starts[i] + ends[k] + lengths[k - i] + idx(["SH=" + span_shape(sentence, i, k)]))
        split_rows = [idx(split_features(sentence, j, abstract)) for j in range(n + 1)]
        pt_rows = [idx(surface_features_preterminal(sentence, p)) for p in range(n)]
        width = len(indexer)
        self.spans = _csr(rows, width)
        self.splits = _csr(split_rows, width)
        self.preterminals = _csr(pt_rows, width)
        used = np.concatenate([self.spans.indices, self.splits.indices, self.preterminals.indices])
        self.used = np.unique(used)


def index_corpus(sentences, indexer: FeatureIndexer, abstract) -> FeatureIndexer:
    """Register every feature string that fires anywhere in ``sentences``."""
    for sent in sentences:
        n = len(sent)
        for i in range(n):
            indexer.indices(start_features(sent, i, abstract))
            indexer.indices(surface_features_preterminal(sent, i))
        for k in range(1, n + 1):
            indexer.indices(end_features(sent, k, abstract))
            indexer.index(length_feature(k))
        for j in range(n + 1):
            indexer.indices(split_features(sent, j, abstract))
        for i in range(n):
            for k in range(i + 1, n + 1):
                indexer.index("SH=" + span_shape(sent, i, k))
    return indexer
