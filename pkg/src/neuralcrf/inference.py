"""Exact CKY over anchored-rule potentials.

Each chart cell has two layers. The pre-unary layer holds preterminals
(width-1 spans) and binary-rule parents; the post-unary layer holds either
the pre-unary symbol itself (identity) or the parent of one unary rule over
it. Binary rules consume post-unary children. ``TOP`` may only appear in the
root cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grammar import AnchoredRule, Grammar
from .treebank import Leaf, Tree

NEG_INF = -np.inf
DEFAULT_LOG_THRESHOLD = -9.0


class NoParseError(RuntimeError):
    pass


class Layout:
    """Flat orderings of spans (by width, then start) and binary anchorings (width, start, split)."""

    def __init__(self, n: int):
        self.n = n
        span_i, span_k, span_off = [], [], {}
        for L in range(1, n + 1):
            span_off[L] = len(span_i)
            for i in range(n - L + 1):
                span_i.append(i)
                span_k.append(i + L)
        self.span_i = np.array(span_i, dtype=np.intp)
        self.span_k = np.array(span_k, dtype=np.intp)
        self.span_off = span_off
        ti, tj, tk, tri_off = [], [], [], {}
        for L in range(2, n + 1):
            tri_off[L] = len(ti)
            for i in range(n - L + 1):
                for j in range(i + 1, i + L):
                    ti.append(i)
                    tj.append(j)
                    tk.append(i + L)
        tri_off[n + 1] = len(ti)
        self.tri_i = np.array(ti, dtype=np.intp)
        self.tri_j = np.array(tj, dtype=np.intp)
        self.tri_k = np.array(tk, dtype=np.intp)
        self.tri_off = tri_off
        self.tri_span = self.span_index(self.tri_i, self.tri_k) if ti else np.zeros(0, dtype=np.intp)

    @property
    def n_spans(self) -> int:
        return len(self.span_i)

    @property
    def n_triples(self) -> int:
        return len(self.tri_i)

    def span_index(self, i, k):
        L = np.asarray(k) - np.asarray(i)
        # span_off[L] = sum_{l<L} (n - l + 1)
        off = (L - 1) * (self.n + 1) - (L - 1) * L // 2
        return off + i

    def triple_index(self, i: int, j: int, k: int) -> int:
        L = k - i
        return self.tri_off[L] + i * (L - 1) + (j - i - 1)

    def triple_slice(self, L: int) -> slice:
        return slice(self.tri_off[L], self.tri_off[L + 1])


@lru_cache(maxsize=256)
def layout(n: int) -> Layout:
    return Layout(n)


@dataclass
class ScoreTables:
    """Potentials of every anchored rule of one sentence.

    ``pt[i, p]`` lexical rule ``p`` at token ``i``; ``un[i, k, u]`` unary rule
    ``u`` over span ``(i, k)``; ``bin[t, b]`` binary rule ``b`` at the
    ``t``-th anchoring of :class:`Layout`. ``ident`` optionally scores the
    identity (no-unary) transition per symbol.
    """

    n: int
    pt: np.ndarray
    un: np.ndarray
    bin: np.ndarray
    ident: np.ndarray | None = None

    @property
    def layout(self) -> Layout:
        return layout(self.n)

    @property
    def dtype(self):
        """Common floating type of the tables (float64 unless built from extended-precision inputs)."""
        return np.result_type(self.pt, self.un, self.bin, np.float64)

    def bin_len(self, L: int) -> np.ndarray:
        return self.bin[self.layout.triple_slice(L)].reshape(self.n - L + 1, L - 1, -1)

    def score_rules(self, grammar: Grammar, rules) -> float:
        lay = self.layout
        total = self.dtype.type(0)
        for a in rules:
            kind, x = grammar.rule_kind(a.rule)
            if kind == "lexical":
                total += self.pt[a.i, x]
            elif kind == "unary":
                total += self.un[a.i, a.k, x]
            else:
                total += self.bin[lay.triple_index(a.i, a.j, a.k), x]
        return total


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m_safe), axis=axis, keepdims=True)) + m_safe
    return np.squeeze(out, axis)


class _Groups:
    """Reduce the last axis of an array over rules grouped by a symbol key."""

    def __init__(self, keys: np.ndarray, n_out: int):
        self.n_out = n_out
        self.size = len(keys)
        self.order = np.argsort(keys, kind="stable")
        sk = keys[self.order]
        if self.size:
            self.starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
        else:
            self.starts = np.zeros(0, dtype=np.intp)
        self.keys = sk[self.starts]
        self.counts = np.diff(np.r_[self.starts, self.size])

    def _out(self, x, fill):
        return np.full(x.shape[:-1] + (self.n_out,), fill, dtype=x.dtype)

    def max(self, x):
        out = self._out(x, NEG_INF)
        if self.size:
            out[..., self.keys] = np.maximum.reduceat(x[..., self.order], self.starts, axis=-1)
        return out

    def min(self, x, fill):
        out = self._out(x, fill)
        if self.size:
            out[..., self.keys] = np.minimum.reduceat(x[..., self.order], self.starts, axis=-1)
        return out

    def lse(self, x):
        out = self._out(x, NEG_INF)
        if not self.size:
            return out
        xs = x[..., self.order]
        m = np.maximum.reduceat(xs, self.starts, axis=-1)
        m_safe = np.where(np.isfinite(m), m, 0.0)
        s = np.add.reduceat(np.exp(xs - np.repeat(m_safe, self.counts, axis=-1)), self.starts, axis=-1)
        with np.errstate(divide="ignore"):
            out[..., self.keys] = np.log(s) + m_safe
        return out


class _GrammarGroups:
    def __init__(self, g: Grammar):
        ns = g.n_symbols
        self.bin_parent = _Groups(g.bin_parent, ns)
        self.bin_left = _Groups(g.bin_left, ns)
        self.bin_right = _Groups(g.bin_right, ns)
        self.un_parent = _Groups(g.un_parent, ns)
        self.un_child = _Groups(g.un_child, ns)


def _groups(g: Grammar) -> _GrammarGroups:
    gg = g.__dict__.get("_inference_groups")
    if gg is None:
        gg = g.__dict__["_inference_groups"] = _GrammarGroups(g)
    return gg


_SEMIRINGS = {"sum": (_lse, np.logaddexp, "lse"), "max": (np.max, np.maximum, "max")}


@dataclass
class Chart:
    n: int
    grammar: Grammar
    tables: ScoreTables
    semiring: str
    inside_pre: np.ndarray
    inside_post: np.ndarray
    outside_pre: np.ndarray | None = None
    outside_post: np.ndarray | None = None

    @property
    def log_z(self):
        return self.inside_post[0, self.n, self.grammar.top]

    @property
    def has_parse(self) -> bool:
        return bool(np.isfinite(self.log_z))


def _spans(n, L):
    i = np.arange(n - L + 1)
    return i, i + L


def inside(tables: ScoreTables, grammar: Grammar, semiring: str = "sum") -> Chart:
    reduce_axis, combine, rname = _SEMIRINGS[semiring]
    gg = _groups(grammar)
    n, ns = tables.n, grammar.n_symbols
    if n < 1:
        raise ValueError("sentence must contain at least one token")
    top = grammar.top
    dt = tables.dtype
    ident = np.zeros(ns, dtype=dt) if tables.ident is None else tables.ident
    pre = np.full((n + 1, n + 1, ns), NEG_INF, dtype=dt)
    post = np.full((n + 1, n + 1, ns), NEG_INF, dtype=dt)
    uc = grammar.un_child
    bl, br = grammar.bin_left, grammar.bin_right

    for L in range(1, n + 1):
        I, K = _spans(n, L)
        if L == 1:
            cell = np.full((n, ns), NEG_INF, dtype=dt)
            cell[:, grammar.tag_array] = tables.pt
        else:
            J = I[:, None] + np.arange(1, L)[None, :]
            left = post[I[:, None], J][..., bl]
            right = post[J, K[:, None]][..., br]
            rule_tot = reduce_axis(tables.bin_len(L) + left + right, axis=1)
            cell = getattr(gg.bin_parent, rname)(rule_tot)
        if L < n:
            cell[:, top] = NEG_INF
        pre[I, K] = cell
        agg = getattr(gg.un_parent, rname)(tables.un[I, K] + cell[:, uc])
        up_cell = combine(cell + ident, agg)
        if L < n:
            up_cell[:, top] = NEG_INF
        post[I, K] = up_cell
    return Chart(n, grammar, tables, semiring, pre, post)


def outside(chart: Chart) -> Chart:
    reduce_axis, combine, rname = _SEMIRINGS[chart.semiring]
    g, tables, n = chart.grammar, chart.tables, chart.n
    gg = _groups(g)
    ns = g.n_symbols
    dt = tables.dtype
    ident = np.zeros(ns, dtype=dt) if tables.ident is None else tables.ident
    in_post = chart.inside_post
    o_pre = np.full((n + 1, n + 1, ns), NEG_INF, dtype=dt)
    o_post = np.full((n + 1, n + 1, ns), NEG_INF, dtype=dt)
    o_post[0, n, g.top] = 0.0
    bp, bl, br = g.bin_parent, g.bin_left, g.bin_right
    up = g.un_parent

    for L in range(n, 0, -1):
        I, K = _spans(n, L)
        o_up = o_post[I, K]
        agg = getattr(gg.un_child, rname)(o_up[:, up] + tables.un[I, K])
        o_cell = combine(o_up + ident, agg)
        o_pre[I, K] = o_cell
        if L >= 2:
            J = I[:, None] + np.arange(1, L)[None, :]
            t = o_cell[:, None, bp] + tables.bin_len(L)
            to_left = getattr(gg.bin_left, rname)(t + in_post[J, K[:, None]][..., br])
            o_post[I[:, None], J] = combine(o_post[I[:, None], J], to_left)
            to_right = getattr(gg.bin_right, rname)(t + in_post[I[:, None], J][..., bl])
            o_post[J, K[:, None]] = combine(o_post[J, K[:, None]], to_right)
    chart.outside_pre = o_pre
    chart.outside_post = o_post
    return chart


@dataclass
class Marginals:
    """Posterior probability of every anchored rule, shaped like :class:`ScoreTables`."""

    pt: np.ndarray
    un: np.ndarray
    bin: np.ndarray


def marginals(chart: Chart) -> Marginals:
    if chart.outside_pre is None:
        outside(chart)
    if not chart.has_parse:
        raise NoParseError("no parse")
    g, tables, n = chart.grammar, chart.tables, chart.n
    log_z = chart.log_z
    ip, iu = chart.inside_pre, chart.inside_post
    op, ou = chart.outside_pre, chart.outside_post
    I = np.arange(n)
    mu_pt = np.exp(op[I, I + 1][:, g.tag_array] + tables.pt - log_z)
    mu_un = np.zeros(tables.un.shape, dtype=mu_pt.dtype)
    mu_bin = np.zeros(tables.bin.shape, dtype=mu_pt.dtype)
    lay = tables.layout
    for L in range(1, n + 1):
        I, K = _spans(n, L)
        mu_un[I, K] = np.exp(ou[I, K][:, g.un_parent] + tables.un[I, K] + ip[I, K][:, g.un_child] - log_z)
        if L >= 2:
            J = I[:, None] + np.arange(1, L)[None, :]
            v = (
                op[I, K][:, None, g.bin_parent]
                + tables.bin_len(L)
                + iu[I[:, None], J][..., g.bin_left]
                + iu[J, K[:, None]][..., g.bin_right]
            )
            mu_bin[lay.triple_slice(L)] = np.exp(v - log_z).reshape(-1, g.n_binary)
    return Marginals(mu_pt, mu_un, mu_bin)


def log_partition(tables: ScoreTables, grammar: Grammar) -> float:
    return float(inside(tables, grammar).log_z)


def expected_rule_counts(chart: Chart) -> dict[AnchoredRule, float]:
    """Nonzero posterior marginals keyed by anchored rule."""
    mu = marginals(chart)
    g, lay = chart.grammar, chart.tables.layout
    out: dict[AnchoredRule, float] = {}
    for i, p in zip(*np.nonzero(mu.pt)):
        out[AnchoredRule(g.lexical_id(int(p)), int(i), None, int(i) + 1)] = float(mu.pt[i, p])
    for i, k, u in zip(*np.nonzero(mu.un)):
        out[AnchoredRule(g.unary_id(int(u)), int(i), None, int(k))] = float(mu.un[i, k, u])
    for t, b in zip(*np.nonzero(mu.bin)):
        out[AnchoredRule(int(b), int(lay.tri_i[t]), int(lay.tri_j[t]), int(lay.tri_k[t]))] = float(mu.bin[t, b])
    return out


def gold_counts(tables: ScoreTables, grammar: Grammar, rules) -> Marginals:
    """Indicator arrays of a gold anchored-rule set, shaped like the marginals."""
    lay = tables.layout
    pt = np.zeros_like(tables.pt)
    un = np.zeros_like(tables.un)
    bn = np.zeros_like(tables.bin)
    for a in rules:
        kind, x = grammar.rule_kind(a.rule)
        if kind == "lexical":
            pt[a.i, x] += 1
        elif kind == "unary":
            un[a.i, a.k, x] += 1
        else:
            bn[lay.triple_index(a.i, a.j, a.k), x] += 1
    return Marginals(pt, un, bn)


@dataclass
class ViterbiResult:
    score: float
    tree: Tree
    rules: list[AnchoredRule]


def viterbi(tables: ScoreTables, grammar: Grammar, words=None) -> ViterbiResult | None:
    """Best tree, or None if no tree has finite score.

    Ties between binary analyses of a parent are broken by lower split point,
    then lower rule id; the identity transition wins ties against unaries.
    """
    g, n = grammar, tables.n
    gg = _groups(g)
    ns, nb = g.n_symbols, g.n_binary
    top = g.top
    ident = np.zeros(ns) if tables.ident is None else tables.ident
    big = np.iinfo(np.int64).max
    pre = np.full((n + 1, n + 1, ns), NEG_INF)
    post = np.full((n + 1, n + 1, ns), NEG_INF)
    bp_rule = np.full((n + 1, n + 1, ns), -1, dtype=np.int64)
    bp_split = np.full((n + 1, n + 1, ns), -1, dtype=np.int64)
    bp_un = np.full((n + 1, n + 1, ns), -1, dtype=np.int64)
    up, uc = g.un_parent, g.un_child
    u_ids = np.arange(g.n_unary, dtype=np.int64)
    b_ids = np.arange(nb, dtype=np.int64)

    for L in range(1, n + 1):
        I, K = _spans(n, L)
        if L == 1:
            cell = np.full((n, ns), NEG_INF)
            cell[:, g.tag_array] = tables.pt
        else:
            J = I[:, None] + np.arange(1, L)[None, :]
            tot = tables.bin_len(L) + post[I[:, None], J][..., g.bin_left] + post[J, K[:, None]][..., g.bin_right]
            bj = np.argmax(tot, axis=1)
            bv = np.take_along_axis(tot, bj[:, None, :], axis=1)[:, 0, :]
            cell = gg.bin_parent.max(bv)
            cand = np.isfinite(bv) & (bv == cell[:, g.bin_parent])
            key = np.where(cand, bj * nb + b_ids, big)
            kmin = gg.bin_parent.min(key, big)
            ok = kmin != big
            bp_rule[I, K] = np.where(ok, kmin % max(nb, 1), -1)
            bp_split[I, K] = np.where(ok, I[:, None] + 1 + kmin // max(nb, 1), -1)
        if L < n:
            cell[:, top] = NEG_INF
        pre[I, K] = cell
        vals = tables.un[I, K] + cell[:, uc]
        best_un = gg.un_parent.max(vals)
        cand = np.isfinite(vals) & (vals == best_un[:, up])
        umin = gg.un_parent.min(np.where(cand, u_ids, big), big)
        idv = cell + ident
        use_ident = idv >= best_un
        up_cell = np.where(use_ident, idv, best_un)
        if L < n:
            up_cell[:, top] = NEG_INF
        post[I, K] = up_cell
        bp_un[I, K] = np.where(use_ident | (umin == big), -1, umin)

    score = post[0, n, top]
    if not np.isfinite(score):
        return None
    if words is None:
        words = ["w%d" % i for i in range(n)]
    sym = g.symbols.symbol
    rules: list[AnchoredRule] = []

    def build_post(i, k, a):
        u = int(bp_un[i, k, a])
        if u < 0:
            return build_pre(i, k, a)
        node = build_pre(i, k, int(uc[u]))
        rules.append(AnchoredRule(g.unary_id(u), i, None, k))
        return Tree(g.unary[u][2], (node,))

    def build_pre(i, k, a):
        if k == i + 1:
            p = g.find_tag(a)
            rules.append(AnchoredRule(g.lexical_id(p), i, None, k))
            return Tree(sym(a), (Leaf(words[i], i),))
        b, j = int(bp_rule[i, k, a]), int(bp_split[i, k, a])
        rules.append(AnchoredRule(b, i, j, k))
        return Tree(sym(a), (build_post(i, j, int(g.bin_left[b])), build_post(j, k, int(g.bin_right[b]))))

    tree = build_post(0, n, top)
    return ViterbiResult(float(score), tree, rules)


# -- coarse pruning -------------------------------------------------------------


@dataclass
class PruningMask:
    """``allow[i, k, A]`` over coarse symbols; ``fine`` lifts it through a projection."""

    allow: np.ndarray
    failed_open: bool = False

    def fine(self, projection: np.ndarray) -> np.ndarray:
        return self.allow[..., projection]

    def pruned_fraction(self) -> float:
        return 1.0 - float(self.allow.mean())


def coarse_tables(coarse, words) -> ScoreTables:
    g = coarse.grammar
    n = len(words)
    lay = layout(n)
    pt = np.stack([coarse.lexical_logprob(w) for w in words]) if n else np.zeros((0, g.n_tags))
    un = np.broadcast_to(coarse.unary_logprob, (n + 1, n + 1, g.n_unary))
    bn = np.broadcast_to(coarse.binary_logprob, (lay.n_triples, g.n_binary))
    return ScoreTables(n, pt, un, bn, coarse.identity_logprob)


def max_marginals(tables: ScoreTables, grammar: Grammar) -> tuple[np.ndarray, float]:
    """Log max-marginal of every labeled span relative to the Viterbi score (max over layers)."""
    chart = outside(inside(tables, grammar, "max"))
    v = chart.log_z
    with np.errstate(invalid="ignore"):
        mm = np.maximum(chart.inside_pre + chart.outside_pre, chart.inside_post + chart.outside_post) - v
    return mm, v


def coarse_prune(coarse, words, log_threshold: float = DEFAULT_LOG_THRESHOLD) -> PruningMask:
    """Allow ``(i, k, A)`` iff its max-marginal ratio is nonzero and at least ``exp(log_threshold)``."""
    n = len(words)
    g = coarse.grammar
    mm, v = max_marginals(coarse_tables(coarse, words), g)
    if not np.isfinite(v):
        return PruningMask(np.ones((n + 1, n + 1, g.n_symbols), dtype=bool), failed_open=True)
    allow = np.isfinite(mm) & (mm >= log_threshold)
    allow[0, n, g.top] = True
    return PruningMask(allow)


def mask_tables(tables: ScoreTables, grammar: Grammar, allow: np.ndarray) -> ScoreTables:
    """Set potentials of rules whose parent is disallowed at their span to -inf."""
    n = tables.n
    lay = tables.layout
    I = np.arange(n)
    pt = np.where(allow[I, I + 1][:, grammar.tag_array], tables.pt, NEG_INF)
    un = np.where(allow[..., grammar.un_parent], tables.un, NEG_INF)
    ok_bin = allow[lay.tri_i, lay.tri_k][:, grammar.bin_parent]
    bn = np.where(ok_bin, tables.bin, NEG_INF)
    return ScoreTables(n, pt, un, bn, tables.ident)
