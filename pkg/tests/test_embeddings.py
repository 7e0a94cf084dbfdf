import io
import logging

import numpy as np
import pytest

from neuralcrf.embeddings import EmbeddingFormatError, EmbeddingTable, load_embeddings
from neuralcrf.features import BEGIN, END


def test_load_with_header_and_lookup():
    t = load_embeddings("2 3\ndog 1 2 3\nCat 4 5 6\n")
    assert t.n_e == 3
    assert np.array_equal(t.matrix[t.lookup("dog")], [1, 2, 3])
    assert t.lookup("cat") == t.unk  # no case folding downward of the vocabulary
    assert t.lookup("CAT") == t.unk
    assert t.lookup("DOG") == t.lookup("dog")
    assert t.lookup("zebra") == t.unk
    assert t.lookup(BEGIN) == t.begin and t.lookup(END) == t.end


def test_sentinel_rows_are_zero_and_table_is_frozen():
    t = load_embeddings("a 1 1\n")
    for r in (t.begin, t.end, t.unk):
        assert not t.matrix[r].any()
    with pytest.raises(ValueError):
        t.matrix[0, 0] = 5.0


def test_ragged_row_names_line():
    with pytest.raises(EmbeddingFormatError, match="line 3"):
        load_embeddings("a 1 2\nb 3 4\nc 5\n")


def test_nan_rejected():
    with pytest.raises(EmbeddingFormatError, match="line 2"):
        load_embeddings("a 1 2\nb nan 4\n")


def test_duplicates_last_wins(caplog):
    with caplog.at_level(logging.WARNING):
        t = load_embeddings("a 1 2\na 3 4\n")
    assert t.duplicates == 1
    assert np.array_equal(t.matrix[t.lookup("a")], [3, 4])
    assert "duplicates=1" in caplog.text


def test_empty_file():
    with pytest.raises(EmbeddingFormatError):
        load_embeddings("")


def test_dump_roundtrip_is_exact():
    rng = np.random.default_rng(0)
    t = EmbeddingTable(["x", "y"], rng.normal(size=(2, 5)))
    buf = io.StringIO()
    t.dump(buf)
    t2 = load_embeddings(buf.getvalue())
    assert np.array_equal(t.matrix, t2.matrix)
    assert t2.words == ["x", "y"]


def test_embed_window():
    t = load_embeddings("a 1 2\nb 3 4\n")
    v = t.embed_window(["a", BEGIN, "zz", "b"])
    assert np.array_equal(v, [1, 2, 0, 0, 0, 0, 3, 4])
