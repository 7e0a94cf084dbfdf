"""Anchored-rule potentials: sparse bilinear, feedforward neural, and their sum.

Parameter blocks (all float64)::

    W1  n_s x n_o       sparse surface-feature weights
    H1  n_h x (n_w*n_e) first hidden layer        H2  n_h x n_h (depth 2)
    W2  d_h x n_o       output weights, or d_h x n_oe when K is used
    K   n_oe x n_o      output embedding
    b1, b2, bo          biases, only when ``config.bias`` is set

``d_h`` is ``n_h`` for depth >= 1 and ``n_w * n_e`` for depth 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .features import (
    N_WINDOW,
    SentenceFeatures,
    surface_features_preterminal,
    surface_features_span,
    word_window,
)
from .inference import NEG_INF, ScoreTables, layout, mask_tables


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_d(x):
    return (x > 0).astype(x.dtype if hasattr(x, "dtype") else float)


def _tanh_d(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _cube(x):
    return x * x * x


def _cube_d(x):
    return 3.0 * x * x


NONLINEARITIES = {
    "relu": (_relu, _relu_d),
    "tanh": (np.tanh, _tanh_d),
    "cube": (_cube, _cube_d),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
}


def nonlinearity(tag: str, x):
    return NONLINEARITIES[tag][0](x)


def nonlinearity_derivative(tag: str, x):
    return NONLINEARITIES[tag][1](x)


class DimensionError(ValueError):
    pass


@dataclass
class NeuralParams:
    layers: list  # H1[, H2]
    biases: list | None
    W2: np.ndarray
    K: np.ndarray | None
    nonlinearity: str
    n_e: int
    n_w: int = N_WINDOW

    def __post_init__(self):
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        width = self.n_w * self.n_e
        for H in self.layers:
            if H.ndim != 2 or H.shape[1] != width:
                raise DimensionError(f"hidden layer expects {width} inputs, has shape {H.shape}")
            width = H.shape[0]
        if self.biases is not None:
            for b, H in zip(self.biases, self.layers):
                if b.shape != (H.shape[0],):
                    raise DimensionError("bias does not match its layer")
        if self.W2.shape[0] != width:
            raise DimensionError(f"output weights expect {width} rows, have {self.W2.shape[0]}")
        if self.K is not None and self.K.shape[0] != self.W2.shape[1]:
            raise DimensionError("output embedding K does not match W2")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def d_h(self) -> int:
        return self.W2.shape[0]

    @property
    def n_o(self) -> int:
        return self.W2.shape[1] if self.K is None else self.K.shape[1]

    @property
    def effective_output(self) -> np.ndarray:
        """``W2`` or ``W2 K``: d_h x n_o."""
        return self.W2 if self.K is None else self.W2 @ self.K

    @classmethod
    def from_params(cls, params: dict, config, n_e: int) -> "NeuralParams":
        layers = [params["H%d" % (d + 1)] for d in range(config.depth)]
        biases = [params["b%d" % (d + 1)] for d in range(config.depth)] if config.bias else None
        return cls(layers, biases, params["W2"], params.get("K"), config.nonlinearity, n_e)


@dataclass
class SparseParams:
    W: np.ndarray  # n_s x n_o; unset entries are 0

    def score(self, f_s, f_o) -> float:
        return score_sparse(self.W, f_s, f_o)


def score_sparse(W: np.ndarray, f_s, f_o) -> float:
    f_s = np.asarray(list(f_s), dtype=np.intp)
    f_o = np.asarray(list(f_o), dtype=np.intp)
    if not len(f_s) or not len(f_o):
        return 0.0
    return float(W[np.ix_(f_s, f_o)].sum())


def _slot_product(block: np.ndarray, v: np.ndarray) -> np.ndarray:
    # elementwise product then a contiguous row reduction: same bits on every call
    return (block * v).sum(axis=1)


def _slot_block(H: np.ndarray, slot: int, n_e: int) -> np.ndarray:
    return H[:, slot * n_e : (slot + 1) * n_e]


def layer1_preactivation(neural: NeuralParams, vectors) -> np.ndarray:
    """Sum of per-slot block products in slot order, then the bias."""
    H = neural.layers[0]
    acc = _slot_product(_slot_block(H, 0, neural.n_e), vectors[0])
    for s in range(1, neural.n_w):
        acc = acc + _slot_product(_slot_block(H, s, neural.n_e), vectors[s])
    if neural.biases is not None:
        acc = acc + neural.biases[0]
    return acc


def _upper_layers(neural: NeuralParams, h):
    g = NONLINEARITIES[neural.nonlinearity][0]
    for d in range(1, neural.depth):
        pre = h @ neural.layers[d].T
        if neural.biases is not None:
            pre = pre + neural.biases[d]
        h = g(pre)
    return h


def hidden_activations(neural: NeuralParams, table, window) -> np.ndarray:
    """``g(H v(f_w))`` for one window of tokens; depth 0 returns ``v(f_w)``."""
    rows = table.rows(window)
    if neural.depth == 0:
        return table.matrix[rows].reshape(-1)
    vectors = [table.matrix[r] for r in rows]
    h = nonlinearity(neural.nonlinearity, layer1_preactivation(neural, vectors))
    return _upper_layers(neural, h)


class HiddenCache:
    """Per (embedding row, window slot) contribution to the first hidden layer."""

    def __init__(self, neural: NeuralParams, table, rows):
        if neural.depth < 1:
            raise ValueError("hidden cache requires at least one hidden layer")
        self.neural = neural
        H = neural.layers[0]
        self.entries: dict[tuple[int, int], np.ndarray] = {}
        for r in sorted(set(int(x) for x in rows)):
            v = table.matrix[r]
            for s in range(neural.n_w):
                self.entries[(r, s)] = _slot_product(_slot_block(H, s, neural.n_e), v)

    def __len__(self) -> int:
        return len(self.entries)

    def preactivation(self, window_rows) -> np.ndarray:
        acc = self.entries[(int(window_rows[0]), 0)]
        for s in range(1, self.neural.n_w):
            acc = acc + self.entries[(int(window_rows[s]), s)]
        if self.neural.biases is not None:
            acc = acc + self.neural.biases[0]
        return acc

    def hidden(self, window_rows) -> np.ndarray:
        h = nonlinearity(self.neural.nonlinearity, self.preactivation(window_rows))
        return _upper_layers(self.neural, h)


def build_hidden_cache(neural: NeuralParams, table, rows) -> HiddenCache:
    rows = list(rows) + [table.begin, table.end]
    return HiddenCache(neural, table, rows)


def score_neural(neural: NeuralParams, table, window, f_o) -> float:
    """``h^T W2 [K] f_o`` summing only the active output columns."""
    h = hidden_activations(neural, table, window)
    if neural.K is None:
        return float(sum(h @ neural.W2[:, b] for b in f_o))
    return float(h @ (neural.W2 @ neural.K[:, list(f_o)].sum(axis=1)))


def score_anchored(model, words, s, rule: int) -> float:
    """Potential of one anchored rule, computed directly from feature strings and windows.

    Lexical rules use preterminal features and the width-1 span window;
    unary rules use span features; binary rules add the split features.
    """
    g, cfg = model.grammar, model.config
    i, j, k = s
    kind = g.rule_kind(rule)[0]
    if kind != "binary":
        j = None
    f_o = g.rule_output_features(rule)
    total = 0.0
    if uses_sparse(cfg):
        if kind == "lexical":
            strings = surface_features_preterminal(words, i)
        else:
            strings = surface_features_span(words, (i, j, k), model.abstractor)
        total += score_sparse(model.params["W1"], model.indexer.indices(strings), f_o)
    if uses_neural(cfg):
        total += score_neural(model.neural_params(), model.embeddings, word_window(words, (i, j, k)), f_o)
    if cfg.bias:
        total += float(model.params["bo"][f_o].sum())
    return total


def output_indicator(grammar) -> sp.csr_matrix:
    """n_rules x n_o indicator matrix whose rows are ``f_o(r)``."""
    nr = grammar.n_rules
    rows = np.repeat(np.arange(nr), 2)
    cols = np.stack([grammar.output_rule_cols, grammar.output_parent_cols], axis=1).reshape(-1)
    return sp.csr_matrix((np.ones(2 * nr), (rows, cols)), shape=(nr, grammar.n_outputs))


def _onehot(index: np.ndarray, n_rows: int) -> sp.csr_matrix:
    m = len(index)
    return sp.csr_matrix((np.ones(m), (index, np.arange(m))), shape=(n_rows, m))


@dataclass
class RowSparse:
    """Gradient touching only ``rows`` of a matrix parameter."""

    rows: np.ndarray
    values: np.ndarray

    def add_to(self, dense: np.ndarray, scale: float = 1.0) -> None:
        dense[self.rows] += scale * self.values

    def to_dense(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        self.add_to(out)
        return out


def uses_sparse(config) -> bool:
    return config.mode in ("sparse", "combined")


def uses_neural(config) -> bool:
    return config.mode in ("neural", "combined")


class SentenceScorer:
    """Potentials of every anchored rule of one sentence, plus their backward pass.

    ``allow`` is an optional fine-symbol mask ``(n+1, n+1, n_symbols)``; binary
    anchorings whose span admits no binary parent (or whose children admit no
    symbol) are not scored at all.
    """

    def __init__(self, model, words, allow=None, features: SentenceFeatures | None = None):
        self.model = model
        self.words = list(words)
        g = model.grammar
        cfg = model.config
        self.n = n = len(self.words)
        lay = self.layout = layout(n)
        self.allow = allow
        if allow is None:
            self.tri = np.arange(lay.n_triples)
        else:
            any_sym = allow.any(-1)
            par_ok = allow[..., g.bin_parent].any(-1) if g.n_binary else np.zeros(any_sym.shape, bool)
            ok = par_ok[lay.tri_i, lay.tri_k] & any_sym[lay.tri_i, lay.tri_j] & any_sym[lay.tri_j, lay.tri_k]
            self.tri = np.flatnonzero(ok)
        self._features = features
        self.fo = output_indicator(g)
        B, U = g.n_binary, g.n_unary
        self.sl_bin = slice(0, B)
        self.sl_un = slice(B, B + U)
        self.sl_pt = slice(B + U, g.n_rules)

        m = len(self.tri)
        # float64 normally; extended precision when the parameters are
        dt = self.dtype = np.result_type(*model.params.values(), np.float64)
        pt = np.zeros((n, g.n_tags), dtype=dt)
        un_span = np.zeros((lay.n_spans, U), dtype=dt)
        bin_act = np.zeros((m, B), dtype=dt)

        if uses_neural(cfg):
            self._neural_forward()
            Ur = self.rule_weights
            bin_act += self.h_tri @ Ur[:, self.sl_bin]
            un_span += self.h_span @ Ur[:, self.sl_un]
            pt += self.h_span[:n] @ Ur[:, self.sl_pt]
        if uses_sparse(cfg):
            f = self.features
            W1 = model.params["W1"]
            rs = self._rule_project(f.spans @ W1)
            rj = self._rule_project(f.splits @ W1)
            rp = self._rule_project(f.preterminals @ W1)
            bin_act += rs[lay.tri_span[self.tri], self.sl_bin] + rj[lay.tri_j[self.tri], self.sl_bin]
            un_span += rs[:, self.sl_un]
            pt += rp[:, self.sl_pt]
        if cfg.bias:
            bo = model.params["bo"]
            rb = bo[g.output_rule_cols] + bo[g.output_parent_cols]
            bin_act += rb[self.sl_bin]
            un_span += rb[self.sl_un]
            pt += rb[self.sl_pt]

        bn = np.full((lay.n_triples, B), NEG_INF, dtype=dt)
        bn[self.tri] = bin_act
        un = np.zeros((n + 1, n + 1, U), dtype=dt)
        un[lay.span_i, lay.span_k] = un_span
        tables = ScoreTables(n, pt, un, bn)
        if allow is not None:
            tables = mask_tables(tables, g, allow)
        self.tables = tables

    # -- pieces ----------------------------------------------------------------
    @property
    def features(self) -> SentenceFeatures:
        if self._features is None:
            m = self.model
            order = list(zip(self.layout.span_i.tolist(), self.layout.span_k.tolist()))
            self._features = SentenceFeatures(self.words, m.indexer, m.abstractor, order)
        return self._features

    def _rule_project(self, vec: np.ndarray) -> np.ndarray:
        g = self.model.grammar
        vec = np.asarray(vec)
        return vec[:, g.output_rule_cols] + vec[:, g.output_parent_cols]

    def _neural_forward(self):
        model, n, lay = self.model, self.n, self.layout
        table = model.embeddings
        neural = self.neural = model.neural_params()
        self.rows_pad = np.concatenate(
            [[table.begin, table.begin], table.rows(self.words), [table.end, table.end]]
        ).astype(np.intp)
        ti, tj, tk = lay.tri_i[self.tri], lay.tri_j[self.tri], lay.tri_k[self.tri]
        off = np.array([-2, -1, 0, 1])
        p_tri = np.concatenate(
            [ti[:, None] + off, tj[:, None] + off, tk[:, None] + off], axis=1
        ) + 2
        p_span = np.concatenate(
            [
                lay.span_i[:, None] + off,
                np.broadcast_to(np.array([-2, -1, n, n + 1]), (lay.n_spans, 4)),
                lay.span_k[:, None] + off,
            ],
            axis=1,
        ) + 2
        self.positions = np.concatenate([p_tri, p_span]).astype(np.intp)
        self.m_tri = len(ti)
        E = table.matrix
        if neural.depth == 0:
            h = E[self.rows_pad[self.positions]].reshape(len(self.positions), -1)
            self.pre = []
        else:
            H1 = neural.layers[0]
            cache = {}
            C = np.empty((neural.n_w, n + 4, H1.shape[0]), dtype=self.dtype)
            for p, r in enumerate(self.rows_pad):
                if r not in cache:
                    cache[r] = [_slot_product(_slot_block(H1, s, neural.n_e), E[r]) for s in range(neural.n_w)]
                for s in range(neural.n_w):
                    C[s, p] = cache[r][s]
            acc = C[0][self.positions[:, 0]]
            for s in range(1, neural.n_w):
                acc = acc + C[s][self.positions[:, s]]
            if neural.biases is not None:
                acc = acc + neural.biases[0]
            self.pre = [acc]
            g = NONLINEARITIES[neural.nonlinearity][0]
            self.h_layers = [g(acc)]
            for d in range(1, neural.depth):
                pre = self.h_layers[-1] @ neural.layers[d].T
                if neural.biases is not None:
                    pre = pre + neural.biases[d]
                self.pre.append(pre)
                self.h_layers.append(g(pre))
            h = self.h_layers[-1]
        self.h_all = h
        self.h_tri = h[: self.m_tri]
        self.h_span = h[self.m_tri :]
        W_eff = neural.effective_output
        self.w_eff = W_eff
        self.rule_weights = self._rule_project(W_eff)

    # -- objective pieces ------------------------------------------------------
    def backward(self, diff) -> dict:
        """Gradient of ``sum diff * phi`` w.r.t. every parameter block.

        ``diff`` holds per-anchored-rule coefficients shaped like the score
        tables, normally gold counts minus posterior marginals.
        """
        cfg, g = self.model.config, self.model.grammar
        lay = self.layout
        c_bin = diff.bin[self.tri]
        c_un = diff.un[lay.span_i, lay.span_k]
        c_pt = diff.pt
        grads = {}
        if cfg.bias:
            rule_tot = np.zeros(g.n_rules)
            rule_tot[self.sl_bin] = c_bin.sum(0)
            rule_tot[self.sl_un] = c_un.sum(0)
            rule_tot[self.sl_pt] = c_pt.sum(0)
            grads["bo"] = np.asarray(self.fo.T @ rule_tot).ravel()
        if uses_sparse(cfg):
            grads["W1"] = self._sparse_backward(c_bin, c_un, c_pt)
        if uses_neural(cfg):
            grads.update(self._neural_backward(c_bin, c_un, c_pt))
        return grads

    def _sparse_backward(self, c_bin, c_un, c_pt) -> RowSparse:
        lay, f, fo = self.layout, self.features, self.fo
        n = self.n
        to_span = _onehot(lay.tri_span[self.tri], lay.n_spans)
        to_split = _onehot(lay.tri_j[self.tri], n + 1)
        span_rules = np.hstack([to_span @ c_bin, c_un])
        q_span = np.asarray(span_rules @ fo[: self.sl_un.stop])
        q_split = np.asarray((to_split @ c_bin) @ fo[self.sl_bin])
        q_pt = np.asarray(c_pt @ fo[self.sl_pt])
        used = f.used
        vals = (
            f.spans[:, used].T @ q_span
            + f.splits[:, used].T @ q_split
            + f.preterminals[:, used].T @ q_pt
        )
        return RowSparse(used, np.asarray(vals))

    def _neural_backward(self, c_bin, c_un, c_pt) -> dict:
        neural, n = self.neural, self.n
        Ur = self.rule_weights
        g_u = np.zeros((neural.d_h, self.model.grammar.n_rules))
        g_u[:, self.sl_bin] = self.h_tri.T @ c_bin
        g_u[:, self.sl_un] = self.h_span.T @ c_un
        g_u[:, self.sl_pt] = self.h_span[:n].T @ c_pt
        g_eff = np.asarray((self.fo.T @ g_u.T).T)
        out = {}
        if neural.K is None:
            out["W2"] = g_eff
        else:
            out["W2"] = g_eff @ neural.K.T
            out["K"] = neural.W2.T @ g_eff
        if neural.depth == 0:
            return out
        dh = np.empty_like(self.h_all)
        dh[: self.m_tri] = c_bin @ Ur[:, self.sl_bin].T
        dh[self.m_tri :] = c_un @ Ur[:, self.sl_un].T
        dh[self.m_tri : self.m_tri + n] += c_pt @ Ur[:, self.sl_pt].T
        dg = NONLINEARITIES[neural.nonlinearity][1]
        for d in range(neural.depth - 1, 0, -1):
            dpre = dh * dg(self.pre[d])
            out["H%d" % (d + 1)] = dpre.T @ self.h_layers[d - 1]
            if neural.biases is not None:
                out["b%d" % (d + 1)] = dpre.sum(0)
            dh = dpre @ neural.layers[d]
        dpre = dh * dg(self.pre[0])
        if neural.biases is not None:
            out["b1"] = dpre.sum(0)
        E_pad = self.model.embeddings.matrix[self.rows_pad]
        gH = np.zeros_like(neural.layers[0])
        ne = neural.n_e
        for s in range(neural.n_w):
            agg = _onehot(self.positions[:, s], n + 4) @ dpre
            gH[:, s * ne : (s + 1) * ne] = agg.T @ E_pad
        out["H1"] = gH
        return out
