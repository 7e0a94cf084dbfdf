"""Labeled-bracket scoring with evalb (COLLINS.prm) semantics.

* Tokens whose gold tag is in ``delete_tags`` are removed before span
  indices are computed; brackets left covering no token are dropped.
* Bracket labels are compared after stripping function tags and after the
  ``ADVP = PRT`` equivalence; ``TOP``, ``-NONE-`` and punctuation labels
  never form brackets.
* Bracket sets are multisets, so a unary ``NP`` over ``NP`` gives two
  identical brackets.
* A no-parse guess (None) matches nothing but its gold brackets still count.
* The length cutoff applies to the sentence length before deletion.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field

from .treebank import CHAIN_SEP, NONE_TAG, TOP, Tree, is_intermediate, normalize, strip_label

PUNCT_TAGS = frozenset({"``", "''", ":", ",", "."})
DELETE_LABELS = frozenset({TOP, NONE_TAG}) | PUNCT_TAGS
EQUIVALENT_LABELS = {"PRT": "ADVP"}


class AlignmentError(ValueError):
    pass


class BinarizedTreeError(ValueError):
    pass


def _check_unbinarized(t: Tree) -> None:
    for node in t.subtrees():
        if is_intermediate(node.label) or (not node.is_preterminal and CHAIN_SEP in node.label and len(node.children) == 1):
            raise BinarizedTreeError(f"tree contains binarization artifact {node.label!r}; debinarize first")


def _canonical(label: str) -> str:
    base = strip_label(label)
    return EQUIVALENT_LABELS.get(base, base)


def _kept_positions(tags, delete_tags) -> list[int]:
    """Map each token index to its index after deletion (deleted tokens keep the next index)."""
    out, j = [], 0
    for t in tags:
        out.append(j)
        if t not in delete_tags:
            j += 1
    out.append(j)
    return out


def brackets(t: Tree, delete_tags=PUNCT_TAGS, delete_labels=DELETE_LABELS, reference_tags=None) -> Counter:
    """Multiset of ``(label, i, k)`` over the tokens that survive deletion.

    ``reference_tags`` (normally the gold tags) decides which tokens are
    deleted; it defaults to the tree's own tags.
    """
    _check_unbinarized(t)
    tags = list(reference_tags) if reference_tags is not None else t.tags()
    pos = _kept_positions(tags, delete_tags)
    out: Counter = Counter()

    def walk(node, start):
        if node.is_preterminal:
            return start + 1
        end = start
        for c in node.children:
            end = walk(c, end)
        label = _canonical(node.label)
        if label not in delete_labels and node.label not in delete_labels:
            i, k = pos[start], pos[end]
            if k > i:
                out[(label, i, k)] += 1
        return end

    walk(t, 0)
    return out


@dataclass
class SentenceScore:
    index: int
    length: int
    status: str  # "ok" or "noparse"
    matched: int
    gold: int
    test: int
    words: int
    correct_tags: int

    @property
    def recall(self) -> float:
        return 100.0 * self.matched / self.gold if self.gold else 0.0

    @property
    def precision(self) -> float:
        return 100.0 * self.matched / self.test if self.test else 0.0

    @property
    def exact(self) -> bool:
        return self.status == "ok" and self.matched == self.gold == self.test


@dataclass
class Summary:
    sentences: int = 0
    noparse: int = 0
    matched: int = 0
    gold: int = 0
    test: int = 0
    exact: int = 0
    words: int = 0
    correct_tags: int = 0

    def add(self, s: SentenceScore) -> None:
        self.sentences += 1
        self.noparse += s.status != "ok"
        self.matched += s.matched
        self.gold += s.gold
        self.test += s.test
        self.exact += s.exact
        self.words += s.words
        self.correct_tags += s.correct_tags

    @property
    def recall(self) -> float:
        return 100.0 * self.matched / self.gold if self.gold else 0.0

    @property
    def precision(self) -> float:
        return 100.0 * self.matched / self.test if self.test else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def exact_match(self) -> float:
        return 100.0 * self.exact / self.sentences if self.sentences else 0.0

    @property
    def tagging_accuracy(self) -> float:
        return 100.0 * self.correct_tags / self.words if self.words else 0.0


@dataclass
class EvalResult:
    sentences: list = field(default_factory=list)
    max_length: int | None = 40

    def summary(self, max_length: int | None = None) -> Summary:
        s = Summary()
        for x in self.sentences:
            if max_length is None or x.length <= max_length:
                s.add(x)
        return s

    @property
    def all(self) -> Summary:
        return self.summary(None)

    @property
    def short(self) -> Summary:
        return self.summary(self.max_length)


def _without_traces(t: Tree) -> Tree:
    if any(tag == NONE_TAG for tag in t.tags()):
        return normalize(t)
    return t


def score_sentence(index: int, gold: Tree, guess: Tree | None, delete_tags=PUNCT_TAGS, delete_labels=DELETE_LABELS) -> SentenceScore:
    gold = _without_traces(gold)
    if guess is not None:
        guess = _without_traces(guess)
    gold_tags = gold.tags()
    gb = brackets(gold, delete_tags, delete_labels)
    kept = [i for i, t in enumerate(gold_tags) if t not in delete_tags]
    if guess is None:
        return SentenceScore(index, len(gold_tags), "noparse", 0, sum(gb.values()), 0, len(kept), 0)
    gw, tw = gold.words(), guess.words()
    if len(gw) != len(tw):
        raise AlignmentError(f"sentence {index}: gold has {len(gw)} tokens, guess has {len(tw)}")
    for a, b in zip(gw, tw):
        if a != b:
            raise AlignmentError(f"sentence {index}: token mismatch {a!r} vs {b!r}")
    tb = brackets(guess, delete_tags, delete_labels, reference_tags=gold_tags)
    matched = sum((gb & tb).values())
    guess_tags = guess.tags()
    correct = sum(1 for i in kept if guess_tags[i] == gold_tags[i])
    return SentenceScore(index, len(gold_tags), "ok", matched, sum(gb.values()), sum(tb.values()), len(kept), correct)


def score(gold, guess, max_length: int | None = 40, delete_tags=PUNCT_TAGS) -> EvalResult:
    """Score aligned gold and guess trees (None marks a no-parse guess)."""
    gold, guess = list(gold), list(guess)
    if len(gold) != len(guess):
        raise AlignmentError(f"{len(gold)} gold trees but {len(guess)} guesses")
    delete_labels = frozenset({TOP, NONE_TAG}) | frozenset(delete_tags)
    res = EvalResult(max_length=max_length)
    for i, (g, t) in enumerate(zip(gold, guess), 1):
        res.sentences.append(score_sentence(i, g, t, delete_tags, delete_labels))
    return res


def _block(title: str, s: Summary) -> list[str]:
    return [
        f"-- {title} --",
        f"Number of sentence        = {s.sentences:6d}",
        f"Number of No-parse        = {s.noparse:6d}",
        f"Bracketing Recall         = {s.recall:6.2f}",
        f"Bracketing Precision      = {s.precision:6.2f}",
        f"Bracketing FMeasure       = {s.f1:6.2f}",
        f"Complete match            = {s.exact_match:6.2f}",
        f"Tagging accuracy          = {s.tagging_accuracy:6.2f}",
    ]


def report(res: EvalResult) -> str:
    """evalb-style summary, then the two F1 columns (length cutoff, all)."""
    cut = res.max_length
    lines = _block("All", res.all)
    if cut is not None:
        lines += [""] + _block(f"len<={cut}", res.short)
        lines += ["", f"F1 len<={cut}\tF1 all", f"{res.short.f1:.2f}\t{res.all.f1:.2f}"]
    else:
        lines += ["", "F1 all", f"{res.all.f1:.2f}"]
    return "\n".join(lines) + "\n"


PER_SENTENCE_FIELDS = ("id", "length", "status", "recall", "precision", "matched", "gold", "test", "words", "correct_tags")


def per_sentence_table(res: EvalResult, delimiter: str = "\t") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(PER_SENTENCE_FIELDS)
    for s in res.sentences:
        w.writerow([s.index, s.length, s.status, f"{s.recall:.2f}", f"{s.precision:.2f}", s.matched, s.gold, s.test, s.words, s.correct_tags])
    return buf.getvalue()
