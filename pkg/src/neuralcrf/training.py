"""Conditional log-likelihood training with Adadelta."""

from __future__ import annotations

import logging
import multiprocessing as mp
import time
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingTable
from .features import FeatureIndexer, WordAbstractor, index_corpus
from .grammar import extract_grammar
from .inference import DEFAULT_LOG_THRESHOLD, Marginals, gold_counts, inside, marginals, outside
from .model import Model, ModelConfig, parameter_shapes
from .scoring import RowSparse
from .treebank import prepare

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    minibatch: int = 200
    passes: int = 10
    max_minibatches: int = 1000
    rho: float = 0.95
    eps: float = 1e-6
    seed: int = 0
    log_threshold: float | None = DEFAULT_LOG_THRESHOLD
    workers: int = 1

    def __post_init__(self):
        if self.minibatch < 1 or self.passes < 1 or self.max_minibatches < 1:
            raise ValueError("minibatch, passes and max_minibatches must be positive")
        if not 0.0 < self.rho < 1.0 or self.eps <= 0.0:
            raise ValueError("need 0 < rho < 1 and eps > 0")
        if self.workers < 1:
            raise ValueError("workers must be positive")


# -- Adadelta -------------------------------------------------------------------


class AdadeltaState:
    """Running averages ``E[g^2]`` and ``E[dx^2]`` per parameter block."""

    def __init__(self, params: dict, rho: float = 0.95, eps: float = 1e-6):
        self.rho = rho
        self.eps = eps
        self.sq_grad = {k: np.zeros_like(v) for k, v in params.items()}
        self.sq_delta = {k: np.zeros_like(v) for k, v in params.items()}


def adadelta_step(state: AdadeltaState, params: dict, grads: dict) -> dict:
    """One Adadelta update of ``params`` in place along ``-grads``; returns the deltas.

    ``grads`` is the gradient of the quantity being minimized. Blocks
    missing from ``grads`` are treated as zero gradient.
    """
    rho, eps = state.rho, state.eps
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter block {name!r}")
        if isinstance(g, RowSparse):
            g = g.to_dense(params[name].shape)
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} does not match block {name} {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter block {name}")
    deltas = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif isinstance(g, RowSparse):
            g = g.to_dense(p.shape)
        eg = state.sq_grad[name]
        ed = state.sq_delta[name]
        eg *= rho
        eg += (1.0 - rho) * g * g
        delta = -(np.sqrt(ed + eps) / np.sqrt(eg + eps)) * g
        ed *= rho
        ed += (1.0 - rho) * delta * delta
        p += delta
        deltas[name] = delta
    return deltas


# -- initialization ----------------------------------------------------------------


def initialize(config: ModelConfig, grammar, n_features: int, n_e: int, seed: int = 0) -> dict:
    """Zero output weights, N(0, 0.01) hidden layers, parent-clustered output embedding."""
    rng = np.random.default_rng(seed)
    shapes = parameter_shapes(config, n_features, grammar.n_outputs, n_e)
    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.startswith("H"):
            params[name] = rng.normal(0.0, 0.1, size=shape)
        elif name == "K":
            per_parent = rng.normal(0.0, 0.1, size=(grammar.n_symbols, shape[0]))
            K = np.empty(shape)
            K[:, : grammar.n_rules] = per_parent[grammar.rule_parents].T
            K[:, grammar.n_rules :] = per_parent.T
            params[name] = K
        else:
            params[name] = np.zeros(shape)
    return params


# -- objective -------------------------------------------------------------------------


@dataclass
class TreeGradient:
    loglik: float
    grads: dict


class GoldPrunedError(RuntimeError):
    pass


def _posterior_difference(tables, grammar, rules):
    chart = outside(inside(tables, grammar))
    mu = marginals(chart)
    gold = gold_counts(tables, grammar, rules)
    diff = Marginals(gold.pt - mu.pt, gold.un - mu.un, gold.bin - mu.bin)
    return chart.log_z, diff


def loglikelihood(model: Model, rules, words, allow=None) -> float:
    """``sum of gold potentials - log Z`` for a gold tree given as anchored rules."""
    tables = model.scorer(words, allow).tables
    gold = tables.score_rules(model.grammar, rules)
    if not np.isfinite(gold):
        raise GoldPrunedError("gold tree lies outside the pruning mask")
    # stays in the tables' precision (extended when the parameters are)
    return gold - inside(tables, model.grammar).log_z


def tree_gradient(model: Model, rules, words, allow=None) -> TreeGradient:
    """Log-likelihood of one gold tree and its gradient w.r.t. every parameter block."""
    scorer = model.scorer(words, allow)
    tables = scorer.tables
    gold = tables.score_rules(model.grammar, rules)
    if not np.isfinite(gold):
        raise GoldPrunedError("gold tree lies outside the pruning mask")
    log_z, diff = _posterior_difference(tables, model.grammar, rules)
    return TreeGradient(float(gold - log_z), scorer.backward(diff))


def gradient_output(model: Model, rules, words, allow=None) -> dict:
    """Gradients of the output-side weights (``W1`` and/or ``W2``, plus ``bo``)."""
    g = tree_gradient(model, rules, words, allow).grads
    return {k: v for k, v in g.items() if k in ("W1", "W2", "bo")}


def gradient_hidden(model: Model, rules, words, allow=None) -> dict:
    """Gradients of hidden layers, their biases and ``K``."""
    g = tree_gradient(model, rules, words, allow).grads
    return {k: v for k, v in g.items() if k[0] in "HbK" and k != "bo"}


# -- training loop ---------------------------------------------------------------------


@dataclass
class MinibatchRecord:
    pass_index: int
    minibatch: int
    trees: int
    skipped: int
    loglik: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    skipped_total: int = 0
    coarse_failures: int = 0

    @property
    def objective(self) -> list[float]:
        return [r.loglik for r in self.records]


def build_model(trees, embeddings: EmbeddingTable | None, config: ModelConfig, seed: int = 0) -> tuple[Model, list]:
    """Extract grammar, feature index and initial parameters; returns the model and prepared trees."""
    trees = list(trees)
    if not trees:
        raise ValueError("training treebank is empty")
    prepared = [prepare(t, config.vertical) for t in trees]
    grammar = extract_grammar(prepared)
    sentences = [t.words() for t in trees]
    abstractor = WordAbstractor.from_words((w for s in sentences for w in s), config.rare_threshold)
    indexer = FeatureIndexer()
    if config.mode != "neural":
        index_corpus(sentences, indexer, abstractor)
    indexer.freeze()
    n_e = embeddings.n_e if embeddings is not None else 0
    params = initialize(config, grammar, len(indexer), n_e, seed)
    return Model(config, grammar, indexer, abstractor, embeddings, params), prepared


# worker-global state, set before forking
_WORK: dict = {}


def _work_one(idx):
    m, items = _WORK["model"], _WORK["items"]
    words, rules, allow = items[idx]
    try:
        return idx, tree_gradient(m, rules, words, allow)
    except GoldPrunedError:
        return idx, None


def _accumulate(total: dict, grads: dict, params: dict) -> None:
    for name, g in grads.items():
        acc = total.get(name)
        if acc is None:
            acc = total[name] = np.zeros_like(params[name])
        if isinstance(g, RowSparse):
            g.add_to(acc)
        else:
            acc += g


def train(trees, embeddings, config: ModelConfig, tconfig: TrainConfig | None = None, on_minibatch=None, on_pass=None):
    """Train a model on normalized trees; returns ``(model, TrainLog)``.

    Minibatch gradients are summed over trees. ``on_pass(model, pass_index)``
    may return True to stop early.
    """
    tconfig = tconfig or TrainConfig()
    model, prepared = build_model(trees, embeddings, config, tconfig.seed)
    g = model.grammar
    items = []
    tlog = TrainLog()
    for t in prepared:
        words = t.words()
        rules = g.tree_to_anchored_rules(t)
        allow = None
        if tconfig.log_threshold is not None:
            allow, failed = model.prune(words, tconfig.log_threshold)
            tlog.coarse_failures += int(failed)
        items.append((words, rules, allow))

    state = AdadeltaState(model.params, tconfig.rho, tconfig.eps)
    rng = np.random.default_rng(tconfig.seed)
    done = 0
    for p in range(tconfig.passes):
        order = rng.permutation(len(items))
        for start in range(0, len(order), tconfig.minibatch):
            if done >= tconfig.max_minibatches:
                break
            batch = order[start : start + tconfig.minibatch]
            t0 = time.perf_counter()
            total: dict = {}
            ll, skipped = 0.0, 0
            for _, res in _batch_gradients(model, items, batch, tconfig.workers):
                if res is None:
                    skipped += 1
                    continue
                ll += res.loglik
                _accumulate(total, res.grads, model.params)
            neg = {k: -v for k, v in total.items()}
            adadelta_step(state, model.params, neg)
            done += 1
            rec = MinibatchRecord(p + 1, done, len(batch), skipped, ll, time.perf_counter() - t0)
            tlog.records.append(rec)
            tlog.skipped_total += skipped
            log.info(
                "event=minibatch pass=%d minibatch=%d trees=%d skipped=%d loglik=%.6f seconds=%.3f",
                rec.pass_index, rec.minibatch, rec.trees, rec.skipped, rec.loglik, rec.seconds,
            )
            if on_minibatch is not None:
                on_minibatch(model, rec)
        if on_pass is not None and on_pass(model, p + 1):
            break
        if done >= tconfig.max_minibatches:
            break
    return model, tlog


def _batch_gradients(model, items, batch, workers):
    if workers <= 1 or len(batch) < 2:
        for idx in batch:
            words, rules, allow = items[idx]
            try:
                yield idx, tree_gradient(model, rules, words, allow)
            except GoldPrunedError:
                yield idx, None
        return
    _WORK["model"], _WORK["items"] = model, items
    ctx = mp.get_context("fork")
    with ctx.Pool(workers) as pool:
        results = dict(pool.map(_work_one, [int(i) for i in batch]))
    _WORK.clear()
    for idx in batch:
        yield idx, results[int(idx)]
