"""Frozen pre-trained word vectors in word2vec text format."""

from __future__ import annotations

import io
import logging

import numpy as np

from .features import BEGIN, END, UNK

log = logging.getLogger(__name__)

SENTINELS = (BEGIN, END, UNK)


class EmbeddingFormatError(ValueError):
    pass


class EmbeddingTable:
    """Vocabulary rows followed by the BEGIN, END and UNK sentinel rows."""

    def __init__(self, words, vectors: np.ndarray, duplicates: int = 0):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] == 0:
            raise EmbeddingFormatError("embedding dimension must be positive")
        if not np.all(np.isfinite(vectors)):
            raise EmbeddingFormatError("embedding table contains non-finite values")
        self.words = list(words)
        self.vocab = {w: i for i, w in enumerate(self.words)}
        n_e = vectors.shape[1]
        self.matrix = np.vstack([vectors, np.zeros((len(SENTINELS), n_e))])
        self.matrix.setflags(write=False)
        self.duplicates = duplicates
        base = len(self.words)
        self.begin, self.end, self.unk = base, base + 1, base + 2
        self._lower = {}
        for w, i in self.vocab.items():
            self._lower.setdefault(w.lower(), i)

    @property
    def n_e(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def lookup(self, token: str) -> int:
        if token == BEGIN:
            return self.begin
        if token == END:
            return self.end
        row = self.vocab.get(token)
        if row is None:
            row = self.vocab.get(token.lower())
        if row is None:
            row = self.unk
        return row

    def rows(self, tokens) -> np.ndarray:
        return np.array([self.lookup(t) for t in tokens], dtype=np.intp)

    def embed_window(self, window) -> np.ndarray:
        return self.matrix[self.rows(window)].reshape(-1)

    def dump(self, stream) -> None:
        stream.write("%d %d\n" % (len(self.words), self.n_e))
        for w, row in zip(self.words, self.matrix):
            stream.write(w + " " + " ".join("%.17g" % x for x in row) + "\n")


def load_embeddings(stream) -> EmbeddingTable:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    words: list[str] = []
    rows: list[list[float]] = []
    index: dict[str, int] = {}
    duplicates = 0
    width = None
    for lineno, line in enumerate(stream, 1):
        parts = line.split()
        if not parts:
            continue
        if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
            width = int(parts[1])
            continue
        word, values = parts[0], parts[1:]
        if width is None:
            width = len(values)
        if len(values) != width or width == 0:
            raise EmbeddingFormatError(f"line {lineno}: expected {width} values, found {len(values)}")
        try:
            vec = [float(v) for v in values]
        except ValueError as e:
            raise EmbeddingFormatError(f"line {lineno}: {e}") from None
        if not all(np.isfinite(vec)):
            raise EmbeddingFormatError(f"line {lineno}: non-finite value")
        if word in index:
            duplicates += 1
            rows[index[word]] = vec
        else:
            index[word] = len(words)
            words.append(word)
            rows.append(vec)
    if width is None or not words:
        raise EmbeddingFormatError("no vectors found")
    if duplicates:
        log.warning("embeddings duplicates=%d (last occurrence kept)", duplicates)
    return EmbeddingTable(words, np.array(rows, dtype=np.float64).reshape(len(words), width), duplicates)


def load_embeddings_file(path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as f:
        return load_embeddings(f)
