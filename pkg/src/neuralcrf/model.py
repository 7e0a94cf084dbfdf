"""Model configuration, parameter blocks, parsing, and the on-disk container.

Container layout::

    b"NCRFMODL"                8 bytes
    header length              8 bytes, little-endian unsigned
    header                     UTF-8 JSON
    blocks                     raw little-endian float64, in header order

The header carries a mandatory ``version`` plus config, grammar, feature
indexer, word abstractor, embedding vocabulary and a block table of
``{name, shape, dtype, offset}`` records (offsets relative to the first block).
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property

import numpy as np

from .embeddings import EmbeddingTable
from .features import N_WINDOW, FeatureIndexer, WordAbstractor
from .grammar import Grammar, coarse_projection
from .inference import DEFAULT_LOG_THRESHOLD, coarse_prune, viterbi
from .scoring import NONLINEARITIES, NeuralParams, SentenceScorer, uses_neural, uses_sparse
from .treebank import Tree, unprepare

MAGIC = b"NCRFMODL"
FORMAT_VERSION = 1
MODES = ("sparse", "neural", "combined")


class ModelFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    mode: str = "combined"
    nonlinearity: str = "relu"
    depth: int = 1
    n_h: int = 200
    n_oe: int | None = None
    vertical: int = 0
    bias: bool = False
    rare_threshold: int = 100

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.depth not in (0, 1, 2):
            raise ConfigError("depth must be 0, 1 or 2")
        if self.n_h < 1:
            raise ConfigError("n_h must be positive")
        if self.n_oe is not None and self.n_oe < 1:
            raise ConfigError("n_oe must be positive when set")
        if self.vertical not in (0, 1):
            raise ConfigError("vertical must be 0 or 1")
        if self.rare_threshold < 1:
            raise ConfigError("rare_threshold must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def parameter_shapes(config: ModelConfig, n_features: int, n_outputs: int, n_e: int) -> dict:
    shapes = {}
    if uses_sparse(config):
        shapes["W1"] = (n_features, n_outputs)
    if uses_neural(config):
        width = N_WINDOW * n_e
        for d in range(config.depth):
            shapes["H%d" % (d + 1)] = (config.n_h, width)
            if config.bias:
                shapes["b%d" % (d + 1)] = (config.n_h,)
            width = config.n_h
        if config.n_oe is None:
            shapes["W2"] = (width, n_outputs)
        else:
            shapes["W2"] = (width, config.n_oe)
            shapes["K"] = (config.n_oe, n_outputs)
    if config.bias:
        shapes["bo"] = (n_outputs,)
    return shapes


@dataclass
class ParseResult:
    tree: Tree | None
    score: float | None
    pruned_fallback: bool = False
    coarse_failed: bool = False


@dataclass
class Model:
    config: ModelConfig
    grammar: Grammar
    indexer: FeatureIndexer
    abstractor: WordAbstractor
    embeddings: EmbeddingTable | None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if uses_neural(self.config) and self.embeddings is None:
            raise ConfigError("a neural model needs word embeddings")

    @cached_property
    def coarse(self):
        return coarse_projection(self.grammar)

    @property
    def n_e(self) -> int:
        return self.embeddings.n_e if self.embeddings is not None else 0

    def expected_shapes(self) -> dict:
        return parameter_shapes(self.config, len(self.indexer), self.grammar.n_outputs, self.n_e)

    def neural_params(self) -> NeuralParams:
        return NeuralParams.from_params(self.params, self.config, self.n_e)

    def prune(self, words, log_threshold: float = DEFAULT_LOG_THRESHOLD):
        """Fine-symbol allow mask and whether the coarse pass failed open."""
        mask = coarse_prune(self.coarse, words, log_threshold)
        return mask.fine(self.coarse.projection), mask.failed_open

    def scorer(self, words, allow=None) -> SentenceScorer:
        return SentenceScorer(self, words, allow)

    def parse_binarized(self, words, log_threshold: float | None = DEFAULT_LOG_THRESHOLD):
        """Viterbi parse in the binarized, annotated form; no pruning when ``log_threshold`` is None."""
        words = list(words)
        if not words:
            return ParseResult(None, None)
        allow, failed = (None, False) if log_threshold is None else self.prune(words, log_threshold)
        res = viterbi(self.scorer(words, allow).tables, self.grammar, words)
        fallback = False
        if res is None and allow is not None:
            fallback = True
            res = viterbi(self.scorer(words, None).tables, self.grammar, words)
        if res is None:
            return ParseResult(None, None, fallback, failed)
        return ParseResult(res.tree, res.score, fallback, failed)

    def parse(self, words, log_threshold: float | None = DEFAULT_LOG_THRESHOLD) -> ParseResult:
        r = self.parse_binarized(words, log_threshold)
        if r.tree is not None:
            r.tree = unprepare(r.tree)
        return r

    # -- container ---------------------------------------------------------------
    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    def to_bytes(self) -> bytes:
        blocks, table, offset = [], [], 0
        names = sorted(self.params)
        arrays = [(n, self.params[n]) for n in names]
        if self.embeddings is not None:
            n_vocab = len(self.embeddings.words)
            arrays.append(("E", self.embeddings.matrix[:n_vocab]))
        for name, arr in arrays:
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            table.append({"name": name, "shape": list(arr.shape), "dtype": "<f8", "offset": offset})
            blocks.append(data)
            offset += len(data)
        ab = self.abstractor
        header = {
            "version": FORMAT_VERSION,
            "config": asdict(self.config),
            "grammar": self.grammar.to_dict(),
            "coarse_rare_max": self.coarse.rare_max,
            "features": self.indexer.strings(),
            "abstractor": {
                "threshold": ab.threshold,
                "suffixes": {s: c for s, c in ab.suffix_counts.items() if c >= ab.threshold},
            },
            "embedding_vocab": None if self.embeddings is None else self.embeddings.words,
            "blocks": table,
        }
        raw = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
        return MAGIC + struct.pack("<Q", len(raw)) + raw + b"".join(blocks)

    @classmethod
    def load(cls, path) -> "Model":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Model":
        if data[: len(MAGIC)] != MAGIC:
            raise ModelFormatError("not a model file (bad magic bytes)")
        try:
            (hlen,) = struct.unpack("<Q", data[8:16])
            header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ModelFormatError(f"corrupt model header: {e}") from None
        if header.get("version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model version {header.get('version')!r}")
        base = 16 + hlen
        arrays = {}
        for b in header["blocks"]:
            if b["dtype"] != "<f8":
                raise ModelFormatError(f"block {b['name']}: unsupported dtype {b['dtype']}")
            shape = tuple(b["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = base + b["offset"]
            if start + 8 * count > len(data):
                raise ModelFormatError(f"block {b['name']} is truncated")
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=start).reshape(shape)
            arrays[b["name"]] = arr.astype(np.float64)
        config = ModelConfig.from_dict(header["config"])
        grammar = Grammar.from_dict(header["grammar"])
        indexer = FeatureIndexer(header["features"]).freeze()
        ab = header["abstractor"]
        abstractor = WordAbstractor(Counter(ab["suffixes"]), ab["threshold"])
        emb = None
        if header["embedding_vocab"] is not None:
            emb = EmbeddingTable(header["embedding_vocab"], arrays.pop("E"))
        model = cls(config, grammar, indexer, abstractor, emb, arrays)
        model.coarse.rare_max = header.get("coarse_rare_max", 1)
        expected = model.expected_shapes()
        got = {k: v.shape for k, v in arrays.items()}
        if {k: tuple(v) for k, v in expected.items()} != got:
            raise ModelFormatError(f"parameter blocks {got} do not match config {expected}")
        return model
