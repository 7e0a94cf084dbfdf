"""Rule inventory over binarized trees, anchored rules, and the coarse X-bar PCFG."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .treebank import (
    CHAIN_SEP,
    TOP,
    Leaf,
    Tree,
    base_label,
    node_symbol,
)

BINARY, UNARY, LEXICAL = "binary", "unary", "lexical"


class UnseenRuleError(KeyError):
    pass


class SymbolTable:
    """Dense, contiguous ids for strings, with occurrence counts."""

    def __init__(self, symbols=()):
        self._ids: dict[str, int] = {}
        self._symbols: list[str] = []
        self.counts: Counter = Counter()
        for s in symbols:
            self.add(s)

    def add(self, symbol: str, count: int = 0) -> int:
        idx = self._ids.get(symbol)
        if idx is None:
            idx = self._ids[symbol] = len(self._symbols)
            self._symbols.append(symbol)
        self.counts[symbol] += count
        return idx

    def __getitem__(self, symbol: str) -> int:
        return self._ids[symbol]

    def get(self, symbol: str, default=None):
        return self._ids.get(symbol, default)

    def symbol(self, idx: int) -> str:
        return self._symbols[idx]

    def __contains__(self, symbol) -> bool:
        return symbol in self._ids

    def __len__(self) -> int:
        return len(self._symbols)

    def __iter__(self):
        return iter(self._symbols)


class AnchoredRule(NamedTuple):
    rule: int
    i: int
    j: int | None
    k: int


@dataclass
class Grammar:
    """Binary, unary (possibly composite chain) and lexical rules over one symbol table.

    Rule ids are laid out binary first, then unary, then one lexical rule per
    preterminal tag. Output features ``f_o(r)`` are ``[r, n_rules + parent(r)]``.
    """

    symbols: SymbolTable
    binary: list[tuple[int, int, int]]
    unary: list[tuple[int, int, str]]  # (parent, child, chain label)
    tags: list[int]
    rule_counts: np.ndarray
    identity_counts: np.ndarray  # per symbol: pre-layer nodes with no unary above
    lexicon: dict[str, Counter] = field(default_factory=dict)  # tag -> word counts
    word_counts: Counter = field(default_factory=Counter)

    # -- sizes -----------------------------------------------------------------
    @property
    def n_symbols(self) -> int:
        return len(self.symbols)

    @property
    def n_binary(self) -> int:
        return len(self.binary)

    @property
    def n_unary(self) -> int:
        return len(self.unary)

    @property
    def n_tags(self) -> int:
        return len(self.tags)

    @property
    def n_rules(self) -> int:
        return self.n_binary + self.n_unary + self.n_tags

    @property
    def n_outputs(self) -> int:
        return self.n_rules + self.n_symbols

    @property
    def top(self) -> int:
        return self.symbols[TOP]

    # -- rule ids --------------------------------------------------------------
    def unary_id(self, u: int) -> int:
        return self.n_binary + u

    def lexical_id(self, p: int) -> int:
        return self.n_binary + self.n_unary + p

    def rule_kind(self, rid: int) -> tuple[str, int]:
        if rid < self.n_binary:
            return BINARY, rid
        if rid < self.n_binary + self.n_unary:
            return UNARY, rid - self.n_binary
        return LEXICAL, rid - self.n_binary - self.n_unary

    def rule_parent(self, rid: int) -> int:
        kind, x = self.rule_kind(rid)
        if kind == BINARY:
            return self.binary[x][0]
        if kind == UNARY:
            return self.unary[x][0]
        return self.tags[x]

    def rule_name(self, rid: int) -> str:
        kind, x = self.rule_kind(rid)
        sym = self.symbols.symbol
        if kind == BINARY:
            p, l, r = self.binary[x]
            return f"{sym(p)} -> {sym(l)} {sym(r)}"
        if kind == UNARY:
            return f"{self.unary[x][2]} -> {sym(self.unary[x][1])}"
        return f"{sym(self.tags[x])} -> <word>"

    @cached_property
    def _binary_index(self) -> dict:
        return {rule: b for b, rule in enumerate(self.binary)}

    @cached_property
    def _unary_index(self) -> dict:
        return {(chain, c): u for u, (_, c, chain) in enumerate(self.unary)}

    @cached_property
    def _tag_index(self) -> dict:
        return {t: p for p, t in enumerate(self.tags)}

    def find_binary(self, p: int, l: int, r: int) -> int | None:
        return self._binary_index.get((p, l, r))

    def find_unary(self, chain: str, child: int) -> int | None:
        return self._unary_index.get((chain, child))

    def find_tag(self, sym: int) -> int | None:
        return self._tag_index.get(sym)

    # -- arrays used by inference ---------------------------------------------
    @cached_property
    def bin_parent(self) -> np.ndarray:
        return np.array([b[0] for b in self.binary], dtype=np.intp)

    @cached_property
    def bin_left(self) -> np.ndarray:
        return np.array([b[1] for b in self.binary], dtype=np.intp)

    @cached_property
    def bin_right(self) -> np.ndarray:
        return np.array([b[2] for b in self.binary], dtype=np.intp)

    @cached_property
    def un_parent(self) -> np.ndarray:
        return np.array([u[0] for u in self.unary], dtype=np.intp)

    @cached_property
    def un_child(self) -> np.ndarray:
        return np.array([u[1] for u in self.unary], dtype=np.intp)

    @cached_property
    def tag_array(self) -> np.ndarray:
        return np.array(self.tags, dtype=np.intp)

    @cached_property
    def rule_parents(self) -> np.ndarray:
        return np.concatenate([self.bin_parent, self.un_parent, self.tag_array]).astype(np.intp)

    # -- output features -------------------------------------------------------
    def rule_output_features(self, rid: int) -> list[int]:
        return [rid, self.n_rules + self.rule_parent(rid)]

    def output_feature_name(self, idx: int) -> str:
        if idx < self.n_rules:
            return "rule:" + self.rule_name(idx)
        return "parent:" + self.symbols.symbol(idx - self.n_rules)

    @cached_property
    def output_rule_cols(self) -> np.ndarray:
        return np.arange(self.n_rules, dtype=np.intp)

    @cached_property
    def output_parent_cols(self) -> np.ndarray:
        return self.n_rules + self.rule_parents

    # -- anchored rules --------------------------------------------------------
    def tree_to_anchored_rules(self, t: Tree) -> list[AnchoredRule]:
        """Anchored rules of a binarized tree (raises UnseenRuleError on unknown productions)."""
        out: list[AnchoredRule] = []

        def walk(node) -> tuple[int, int]:
            if node.is_preterminal:
                i = node.children[0].index
                p = self._tag_for(node.label)
                out.append(AnchoredRule(self.lexical_id(p), i, None, i + 1))
                return i, i + 1
            if len(node.children) == 1:
                child = node.children[0]
                i, k = walk(child)
                csym = self.symbols.get(child.label)
                u = None if csym is None else self.find_unary(node.label, csym)
                if u is None:
                    raise UnseenRuleError(f"unseen unary rule {node.label} -> {child.label}")
                out.append(AnchoredRule(self.unary_id(u), i, None, k))
                return i, k
            left, right = node.children
            i, j = walk(left)
            _, k = walk(right)
            ids = [self.symbols.get(x) for x in (node.label, node_symbol(left), node_symbol(right))]
            b = None if None in ids else self.find_binary(*ids)
            if b is None:
                raise UnseenRuleError(
                    f"unseen binary rule {node.label} -> {node_symbol(left)} {node_symbol(right)}"
                )
            out.append(AnchoredRule(b, i, j, k))
            return i, k

        walk(t)
        return out

    def _tag_for(self, label: str) -> int:
        sym = self.symbols.get(label)
        p = None if sym is None else self.find_tag(sym)
        if p is None:
            raise UnseenRuleError(f"unseen preterminal tag {label}")
        return p

    def anchored_rules_to_tree(self, rules, words) -> Tree:
        """Inverse of :meth:`tree_to_anchored_rules`."""
        lex, un, bi = {}, {}, {}
        for a in rules:
            kind, x = self.rule_kind(a.rule)
            if kind == LEXICAL:
                lex[a.i] = x
            elif kind == UNARY:
                un[(a.i, a.k)] = x
            else:
                bi[(a.i, a.k)] = (x, a.j)
        n = len(words)
        sym = self.symbols.symbol

        def pre(i, k):
            if k == i + 1 and (i, k) not in bi:
                return Tree(sym(self.tags[lex[i]]), (Leaf(words[i], i),))
            b, j = bi[(i, k)]
            return Tree(sym(self.binary[b][0]), (post(i, j), post(j, k)))

        def post(i, k):
            node = pre(i, k)
            if (i, k) in un:
                node = Tree(self.unary[un[(i, k)]][2], (node,))
            return node

        return post(0, n)

    # -- serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "symbols": list(self.symbols),
            "binary": [list(b) for b in self.binary],
            "unary": [list(u) for u in self.unary],
            "tags": list(self.tags),
            "rule_counts": self.rule_counts.tolist(),
            "identity_counts": self.identity_counts.tolist(),
            "lexicon": {t: dict(c) for t, c in self.lexicon.items()},
            "word_counts": dict(self.word_counts),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Grammar":
        return cls(
            symbols=SymbolTable(d["symbols"]),
            binary=[tuple(b) for b in d["binary"]],
            unary=[(u[0], u[1], u[2]) for u in d["unary"]],
            tags=list(d["tags"]),
            rule_counts=np.array(d["rule_counts"], dtype=float),
            identity_counts=np.array(d["identity_counts"], dtype=float),
            lexicon={t: Counter(c) for t, c in d["lexicon"].items()},
            word_counts=Counter(d["word_counts"]),
        )


def _collect(trees, relabel=lambda s: s):
    binary, unary, tags = Counter(), Counter(), Counter()
    identity, lexicon, words = Counter(), {}, Counter()

    def chain_of(label):
        return CHAIN_SEP.join(relabel(x) for x in label.split(CHAIN_SEP))

    def walk(node, under_unary):
        if node.is_preterminal:
            tag = node.label
            tags[tag] += 1
            word = node.children[0].word
            lexicon.setdefault(tag, Counter())[word] += 1
            words[word] += 1
            if not under_unary:
                identity[tag] += 1
            return
        if len(node.children) == 1:
            child = node.children[0]
            unary[(chain_of(node.label), relabel(child.label))] += 1
            walk(child, True)
            return
        left, right = node.children
        binary[(relabel(node.label), relabel(node_symbol(left)), relabel(node_symbol(right)))] += 1
        if not under_unary:
            identity[relabel(node.label)] += 1
        walk(left, False)
        walk(right, False)

    for t in trees:
        walk(t, False)
    return binary, unary, tags, identity, lexicon, words


def _assemble(binary, unary, tags, identity, lexicon, words) -> Grammar:
    names = set(tags) | set(identity)
    for p, l, r in binary:
        names.update((p, l, r))
    for chain, c in unary:
        names.update((chain.split(CHAIN_SEP)[0], c))
    names.add(TOP)
    ordered = sorted(names, key=lambda s: (s != TOP, s))
    symbols = SymbolTable(ordered)
    for p, l, r in binary:
        symbols.counts[p] += binary[(p, l, r)]
    for t, c in tags.items():
        symbols.counts[t] += c

    bkeys = sorted(binary)
    ukeys = sorted(unary)
    tkeys = sorted(tags)
    brules = [(symbols[p], symbols[l], symbols[r]) for p, l, r in bkeys]
    urules = [(symbols[ch.split(CHAIN_SEP)[0]], symbols[c], ch) for ch, c in ukeys]
    trules = [symbols[t] for t in tkeys]
    counts = np.array(
        [binary[k] for k in bkeys] + [unary[k] for k in ukeys] + [tags[k] for k in tkeys],
        dtype=float,
    )
    ident = np.zeros(len(symbols))
    for s, c in identity.items():
        ident[symbols[s]] = c
    return Grammar(symbols, brules, urules, trules, counts, ident, lexicon, words)


def extract_grammar(trees) -> Grammar:
    """Grammar containing exactly the productions observed in binarized trees."""
    trees = list(trees)
    if not trees:
        raise ValueError("cannot extract a grammar from an empty training set")
    return _assemble(*_collect(trees))


def project_symbol(label: str) -> str:
    """X-bar projection: ``NP^S`` -> ``NP``, ``@NP^S`` -> ``@NP``."""
    return CHAIN_SEP.join(base_label(x) for x in label.split(CHAIN_SEP))


UNK_WORD = "<UNK>"


@dataclass
class CoarseGrammar:
    """Maximum-likelihood PCFG over the projected grammar, plus the fine->coarse symbol map.

    The pre-unary layer of a symbol distributes over its binary rules (and
    its lexical emissions, if it is a tag); the post-unary layer distributes
    over its unary rules and the identity (no-unary) transition.
    """

    grammar: Grammar
    projection: np.ndarray  # fine symbol id -> coarse symbol id
    rare_max: int = 1

    @cached_property
    def _totals(self):
        g = self.grammar
        pre = np.zeros(g.n_symbols)
        post = g.identity_counts.copy()
        np.add.at(pre, g.bin_parent, g.rule_counts[: g.n_binary])
        np.add.at(post, g.un_parent, g.rule_counts[g.n_binary : g.n_binary + g.n_unary])
        np.add.at(pre, g.tag_array, g.rule_counts[g.n_binary + g.n_unary :])
        return pre, post

    @staticmethod
    def _log(num, den):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(num) - np.log(den)
        return np.where(num > 0, out, -np.inf)

    @cached_property
    def binary_logprob(self) -> np.ndarray:
        g = self.grammar
        pre, _ = self._totals
        return self._log(g.rule_counts[: g.n_binary], pre[g.bin_parent])

    @cached_property
    def unary_logprob(self) -> np.ndarray:
        g = self.grammar
        _, post = self._totals
        return self._log(g.rule_counts[g.n_binary : g.n_binary + g.n_unary], post[g.un_parent])

    @cached_property
    def identity_logprob(self) -> np.ndarray:
        _, post = self._totals
        return self._log(self.grammar.identity_counts, post)

    @cached_property
    def tag_share_logprob(self) -> np.ndarray:
        g = self.grammar
        pre, _ = self._totals
        return self._log(g.rule_counts[g.n_binary + g.n_unary :], pre[g.tag_array])

    @cached_property
    def _emissions(self):
        g = self.grammar
        rare = {w for w, c in g.word_counts.items() if c <= self.rare_max}
        table = {}
        unk = np.full(g.n_tags, -np.inf)
        for p, t in enumerate(g.tags):
            counts = g.lexicon.get(g.symbols.symbol(t), Counter())
            total = sum(counts.values())
            rare_total = sum(c for w, c in counts.items() if w in rare)
            if rare_total:
                unk[p] = np.log(rare_total / total)
            for w, c in counts.items():
                if w in rare:
                    continue
                row = table.setdefault(w, np.full(g.n_tags, -np.inf))
                row[p] = np.log(c / total)
        return table, unk

    def lexical_logprob(self, word: str) -> np.ndarray:
        table, unk = self._emissions
        return self.tag_share_logprob + table.get(word, unk)

    def rule_probabilities(self) -> dict[str, dict[str, float]]:
        """Per-layer conditional distributions, keyed by ``pre:A`` / ``post:A``."""
        g = self.grammar
        out: dict[str, dict[str, float]] = {}
        sym = g.symbols.symbol
        for b, lp in enumerate(self.binary_logprob):
            out.setdefault("pre:" + sym(g.binary[b][0]), {})[g.rule_name(b)] = float(np.exp(lp))
        for p, lp in enumerate(self.tag_share_logprob):
            out.setdefault("pre:" + sym(g.tags[p]), {})[g.rule_name(g.lexical_id(p))] = float(np.exp(lp))
        for u, lp in enumerate(self.unary_logprob):
            out.setdefault("post:" + sym(g.unary[u][0]), {})[g.rule_name(g.unary_id(u))] = float(np.exp(lp))
        for s, lp in enumerate(self.identity_logprob):
            if np.isfinite(lp):
                out.setdefault("post:" + sym(s), {})["<identity>"] = float(np.exp(lp))
        return out


def coarse_projection(g: Grammar) -> CoarseGrammar:
    binary, unary, tags = Counter(), Counter(), Counter()
    identity = Counter()
    sym = g.symbols.symbol
    for b, (p, l, r) in enumerate(g.binary):
        binary[(project_symbol(sym(p)), project_symbol(sym(l)), project_symbol(sym(r)))] += g.rule_counts[b]
    for u, (_, c, chain) in enumerate(g.unary):
        unary[(project_symbol(chain), project_symbol(sym(c)))] += g.rule_counts[g.unary_id(u)]
    for p, t in enumerate(g.tags):
        tags[sym(t)] += g.rule_counts[g.lexical_id(p)]
    for s in range(g.n_symbols):
        if g.identity_counts[s]:
            identity[project_symbol(sym(s))] += g.identity_counts[s]
    coarse = _assemble(binary, unary, tags, identity, g.lexicon, g.word_counts)
    proj = np.array([coarse.symbols[project_symbol(sym(s))] for s in range(g.n_symbols)], dtype=np.intp)
    return CoarseGrammar(coarse, proj)

