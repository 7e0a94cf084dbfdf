from collections import Counter

import numpy as np

from neuralcrf.features import (
    BEGIN,
    END,
    UNK,
    FeatureIndexer,
    SentenceFeatures,
    WordAbstractor,
    abstract_word,
    index_corpus,
    span_shape,
    surface_features_preterminal,
    surface_features_span,
    window_positions,
    word_window,
)
from neuralcrf.inference import layout

SENT = ["The", "dog", "barked", "at", "3", "cats", "."]


def test_span_features_binary():
    f = surface_features_span(SENT, (1, 3, 5))
    assert "BS=The" in f and "FW=dog" in f
    assert "LW=3" in f and "AE=cats" in f
    assert "BSP=barked" in f and "ASP=at" in f
    assert "LEN=4" in f
    assert "SH=xxx0" in f


def test_span_features_unary_has_no_split():
    f = surface_features_span(SENT, (0, None, 7))
    assert not any(x.startswith(("BSP=", "ASP=")) for x in f)
    assert "BS=" + BEGIN in f and "AE=" + END in f


def test_length_bucket_caps():
    words = ["w"] * 30
    assert "LEN=21" in surface_features_span(words, (0, None, 30))


def test_shape_is_truncated():
    words = ["A", "b", "1", ",", "c", "D", "e", "f", "g", "H"]
    s = span_shape(words, 0, 10)
    assert len(s) == 9 and s.startswith("Xx0,") and s.endswith("xxxX")


def test_preterminal_features():
    f = surface_features_preterminal(SENT, 2)
    assert "W0=barked" in f and "W-1=dog" in f and "W1=at" in f
    assert "P0=bar" in f and "S0=ked" in f and "S0=arked" in f
    assert "P0=barke" in f and "P0=barked" not in f
    assert "W-1=" + BEGIN in surface_features_preterminal(SENT, 0)


def test_abstraction():
    counts = Counter({"ing": 150, "ng": 300, "g": 500, "running": 3})
    assert abstract_word("running", counts, 100) == "ing"
    assert abstract_word("xyz", counts, 100) == UNK
    assert abstract_word("running", counts, 3) == "running"
    a = WordAbstractor.from_words(["going", "doing", "going"], 2)
    assert a("seeing") == "ing"
    assert a("boing") == "oing"
    assert a("going") == "going"


def test_window_slots():
    assert window_positions(2, 4, 7) == [0, 1, 2, 3, 2, 3, 4, 5, 5, 6, 7, 8]
    w = word_window(SENT, (0, None, 2))
    assert len(w) == 12
    assert w[:4] == [BEGIN, BEGIN, "The", "dog"]
    assert w[4:8] == [BEGIN, BEGIN, END, END]
    assert w[8:] == ["The", "dog", "barked", "at"]


def test_indexer_freeze():
    ix = FeatureIndexer(["a", "b"])
    assert ix.index("a") == 0 and ix.index("c") == 2
    ix.freeze()
    assert ix.index("d") is None
    assert ix.indices(["a", "zz", "b"]) == [0, 1]
    assert FeatureIndexer(ix.strings()).strings() == ix.strings()


def test_sentence_features_match_templates():
    ab = WordAbstractor.from_words(SENT, 1)
    ix = index_corpus([SENT], FeatureIndexer(), ab).freeze()
    lay = layout(len(SENT))
    order = list(zip(lay.span_i.tolist(), lay.span_k.tolist()))
    sf = SentenceFeatures(SENT, ix, ab, order)
    for row, (i, k) in enumerate(order):
        got = sorted(ix.string(c) for c in sf.spans[row].indices)
        want = sorted(surface_features_span(SENT, (i, None, k), ab))
        assert got == want
    j = 3
    got = sorted(ix.string(c) for c in sf.splits[j].indices)
    assert got == ["ASP=at", "BSP=barked"]
    for p in range(len(SENT)):
        got = sorted(ix.string(c) for c in sf.preterminals[p].indices)
        assert got == sorted(surface_features_preterminal(SENT, p))
    assert np.array_equal(sf.used, np.unique(np.concatenate([sf.spans.indices, sf.splits.indices, sf.preterminals.indices])))


def test_unseen_features_are_dropped():
    ab = WordAbstractor.from_words(SENT, 1)
    ix = index_corpus([SENT], FeatureIndexer(), ab).freeze()
    n_before = len(ix)
    other = ["Zebras", "fly"]
    lay = layout(2)
    SentenceFeatures(other, ix, ab, list(zip(lay.span_i.tolist(), lay.span_k.tolist())))
    assert len(ix) == n_before
