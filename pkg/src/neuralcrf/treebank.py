"""Penn Treebank bracketed trees: reading, writing and grammar-engineering transforms.

Pipeline used for training data::

    tree = normalize(tree)           # traces and function tags removed
    tree = add_top(tree)             # explicit TOP root
    tree = annotate_vertical(tree, v)
    btree = binarize(tree)

and the inverse for parser output: ``deannotate(debinarize(btree))``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator

TOP = "TOP"
NONE_TAG = "-NONE-"
INTERMEDIATE = "@"
ANNOTATION = "^"
CHAIN_SEP = "+"

PTB_ESCAPES = {
    "(": "-LRB-",
    ")": "-RRB-",
    "[": "-LSB-",
    "]": "-RSB-",
    "{": "-LCB-",
    "}": "-RCB-",
}


class TreeParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class EmptyTreeError(ValueError):
    """Raised when normalization deletes every leaf of a tree."""


@dataclass(frozen=True)
class Leaf:
    word: str
    index: int

    @property
    def is_leaf(self) -> bool:
        return True

    def to_string(self) -> str:
        return self.word


@dataclass(frozen=True)
class Tree:
    label: str
    children: tuple

    def __post_init__(self):
        if not self.children:
            raise ValueError(f"node {self.label!r} has no children")

    @property
    def is_leaf(self) -> bool:
        return False

    @property
    def is_preterminal(self) -> bool:
        return len(self.children) == 1 and self.children[0].is_leaf

    def leaves(self) -> list[Leaf]:
        out = []
        stack = [self]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend(reversed(node.children))
        return out

    def words(self) -> list[str]:
        return [leaf.word for leaf in self.leaves()]

    def preterminals(self) -> list["Tree"]:
        return [n for n in self.subtrees() if n.is_preterminal]

    def tags(self) -> list[str]:
        return [n.label for n in self.preterminals()]

    def subtrees(self) -> Iterator["Tree"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(c for c in reversed(node.children) if not c.is_leaf)

    def span(self) -> tuple[int, int]:
        first = self
        while not first.is_leaf:
            first = first.children[0]
        last = self
        while not last.is_leaf:
            last = last.children[-1]
        return first.index, last.index + 1

    def to_string(self) -> str:
        return "(" + self.label + " " + " ".join(c.to_string() for c in self.children) + ")"

    def __str__(self) -> str:
        return self.to_string()


def _tokenize(text: str):
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line, col = line + 1, 1
            i += 1
        elif ch.isspace():
            i += 1
            col += 1
        elif ch in "()":
            yield ch, line, col
            i += 1
            col += 1
        else:
            start, scol = i, col
            while i < n and not text[i].isspace() and text[i] not in "()":
                i += 1
            col += i - start
            yield text[start:i], line, scol


def read_ptb(text: str) -> list[Tree]:
    """Parse every top-level bracketing in ``text``.

    A top-level bracket with no label and a single child (the ``( (S ...) )``
    convention) is unwrapped.
    """
    tokens = list(_tokenize(text))
    pos = 0
    trees = []

    def parse_node(depth: int):
        nonlocal pos
        _, line, col = tokens[pos]
        pos += 1  # "("
        if pos >= len(tokens):
            raise TreeParseError("unbalanced brackets: unexpected end of input", line, col)
        label = ""
        tok, tline, tcol = tokens[pos]
        if tok not in "()":
            label = tok
            pos += 1
        children = []
        while True:
            if pos >= len(tokens):
                raise TreeParseError("unbalanced brackets: missing ')'", line, col)
            tok, tline, tcol = tokens[pos]
            if tok == ")":
                pos += 1
                break
            if tok == "(":
                children.append(parse_node(depth + 1))
            else:
                children.append(tok)
                pos += 1
        if not children:
            raise TreeParseError(f"node {label!r} has no children", line, col)
        words = [c for c in children if isinstance(c, str)]
        if words:
            if len(children) != 1:
                raise TreeParseError("a word must be the only child of its preterminal", line, col)
            if not label:
                raise TreeParseError("empty label on preterminal", line, col)
            return ("pt", label, children[0])
        if not label:
            if depth == 0 and len(children) == 1:
                return children[0]
            raise TreeParseError("empty label where a label is required", line, col)
        return ("nt", label, children)

    while pos < len(tokens):
        tok, line, col = tokens[pos]
        if tok != "(":
            raise TreeParseError(f"unexpected token {tok!r} outside a tree", line, col)
        raw = parse_node(0)
        counter = [0]
        trees.append(_build(raw, counter))
    return trees


def _build(raw, counter) -> Tree:
    kind, label, payload = raw
    if kind == "pt":
        leaf = Leaf(payload, counter[0])
        counter[0] += 1
        return Tree(label, (leaf,))
    return Tree(label, tuple(_build(c, counter) for c in payload))


def read_ptb_file(path) -> list[Tree]:
    with open(path, encoding="utf-8") as f:
        return read_ptb(f.read())


def write_ptb(trees, stream) -> None:
    for t in trees:
        stream.write((t.to_string() if t is not None else "(())") + "\n")


def reindex(t: Tree) -> Tree:
    counter = [0]

    def walk(node):
        if node.is_leaf:
            leaf = Leaf(node.word, counter[0])
            counter[0] += 1
            return leaf
        return Tree(node.label, tuple(walk(c) for c in node.children))

    return walk(t)


_FUNCTION_TAG = re.compile(r"[-=]")


def strip_label(label: str) -> str:
    # -LRB-, -NONE- and friends are literal labels
    if label.startswith("-") and label.endswith("-") and len(label) > 2:
        return label
    m = _FUNCTION_TAG.search(label)
    if m and m.start() > 0:
        return label[: m.start()]
    return label


def normalize(t: Tree) -> Tree:
    """Delete traces and strip functional tags / coindexation from nonterminals."""

    def walk(node):
        if node.is_leaf:
            return node
        if node.is_preterminal:
            return None if node.label == NONE_TAG else node
        kids = tuple(k for k in (walk(c) for c in node.children) if k is not None)
        if not kids:
            return None
        return Tree(strip_label(node.label), kids)

    out = walk(t)
    if out is None:
        raise EmptyTreeError("tree is empty after trace removal")
    return reindex(out)


def add_top(t: Tree) -> Tree:
    if t.label == TOP:
        return t
    return Tree(TOP, (t,))


def escape_token(word: str) -> str:
    return PTB_ESCAPES.get(word, word)


def annotate_vertical(t: Tree, v: int) -> Tree:
    """Parent annotation (``v=1``): ``NP`` under ``S`` becomes ``NP^S``."""
    if v not in (0, 1):
        raise ValueError("vertical order must be 0 or 1")
    if v == 0:
        return t

    def walk(node, parent):
        if node.is_leaf or node.is_preterminal:
            return node
        if node.label == TOP:
            label = TOP
        else:
            label = node.label + ANNOTATION + parent
        return Tree(label, tuple(walk(c, node.label) for c in node.children))

    return walk(t, TOP)


def base_label(label: str) -> str:
    """Drop the vertical annotation from a (possibly intermediate) label."""
    cut = label.find(ANNOTATION)
    return label if cut < 0 else label[:cut]


def deannotate(t: Tree) -> Tree:
    def walk(node):
        if node.is_leaf or node.is_preterminal:
            return node
        return Tree(base_label(node.label), tuple(walk(c) for c in node.children))

    return walk(t)


def is_intermediate(label: str) -> bool:
    return label.startswith(INTERMEDIATE)


def binarize(t: Tree) -> Tree:
    """Left-branching binarization with ``@Parent`` intermediates and unary-chain collapse.

    In the result every unary node carries the whole chain above its child,
    e.g. ``(S (VP (V go)))`` becomes ``(S+VP (V go))``.
    """

    def walk(node):
        if node.is_preterminal:
            return node
        if len(node.children) == 1:
            chain = [node.label]
            below = node.children[0]
            while not below.is_preterminal and len(below.children) == 1:
                chain.append(below.label)
                below = below.children[0]
            return Tree(CHAIN_SEP.join(chain), (walk(below),))
        kids = [walk(c) for c in node.children]
        inter = INTERMEDIATE + node.label
        left = kids[0]
        for k in kids[1:-1]:
            left = Tree(inter, (left, k))
        return Tree(node.label, (left, kids[-1]))

    return walk(t)


def debinarize(b: Tree) -> Tree:
    def walk(node):
        if node.is_preterminal:
            return [node]
        if len(node.children) == 1:
            inner = walk(node.children[0])
            for label in reversed(node.label.split(CHAIN_SEP)):
                inner = [Tree(label, tuple(inner))]
            return inner
        kids = []
        for c in node.children:
            kids.extend(walk(c))
        if is_intermediate(node.label):
            return kids
        return [Tree(node.label, tuple(kids))]

    (out,) = walk(b)
    return out


def node_symbol(node: Tree) -> str:
    """Symbol a binarized node exposes to its parent (top of a unary chain)."""
    if len(node.children) == 1 and not node.is_preterminal:
        return node.label.split(CHAIN_SEP)[0]
    return node.label


def prepare(t: Tree, vertical: int = 0) -> Tree:
    """Normalized source tree to the binarized, annotated training form."""
    return binarize(annotate_vertical(add_top(t), vertical))


def unprepare(b: Tree) -> Tree:
    return deannotate(debinarize(b))
