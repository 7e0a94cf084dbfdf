"""Batch command line: ``train``, ``parse``, ``eval``, ``ablate`` and ``inspect``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
Log records go to stderr as ``neuralcrf key=value ...`` lines.
"""

from __future__ import annotations

import argparse
import io
import logging
import multiprocessing as mp
import sys
import time

from . import __version__
from .embeddings import EmbeddingFormatError, load_embeddings_file
from .evaluation import AlignmentError, BinarizedTreeError, per_sentence_table, report, score
from .inference import DEFAULT_LOG_THRESHOLD
from .model import ConfigError, Model, ModelConfig, ModelFormatError
from .scoring import NONLINEARITIES
from .training import NumericError, TrainConfig, train
from .treebank import EmptyTreeError, Tree, TreeParseError, escape_token, normalize, read_ptb, write_ptb

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_N_H = 200
DEFAULT_LENGTH_CAP = 200
NL_CHOICES = [k for k in NONLINEARITIES if k != "identity"]

log = logging.getLogger("neuralcrf")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _KeyValueFormatter(logging.Formatter):
    def format(self, record):
        msg = record.getMessage()
        if "=" not in msg.split(" ", 1)[0]:
            msg = "msg=" + repr(msg)
        return f"neuralcrf level={record.levelname.lower()} {msg}"


def _setup_logging(verbosity: int) -> None:
    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)
    h = logging.StreamHandler(sys.stderr)
    h.setFormatter(_KeyValueFormatter())
    root.addHandler(h)
    root.setLevel(logging.WARNING if verbosity < 0 else logging.INFO if verbosity == 0 else logging.DEBUG)


# -- argument groups -------------------------------------------------------------


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--mode", choices=["sparse", "neural", "combined"], default="combined", help="potential family")
    g.add_argument("--nonlinearity", choices=NL_CHOICES, default="relu", help="hidden nonlinearity g")
    g.add_argument("--depth", type=int, choices=[0, 1, 2], default=1, help="number of hidden layers")
    g.add_argument("--n-h", type=int, default=None, help=f"hidden width (default {DEFAULT_N_H}; not allowed with depth 0)")
    g.add_argument("--vertical", type=int, choices=[0, 1], default=0, help="vertical Markovization order V")
    g.add_argument("--n-oe", type=int, default=None, help="output-embedding rank n_oe (default: off)")
    g.add_argument("--bias", action="store_true", help="add bias terms to hidden and output layers")
    g.add_argument("--rare-threshold", type=int, default=100, help="suffix count needed to keep a word in sparse features")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--minibatch", type=int, default=200, help="trees per minibatch")
    g.add_argument("--passes", type=int, default=10, help="maximum passes over the treebank")
    g.add_argument("--max-minibatches", type=int, default=1000, help="maximum number of minibatches")
    g.add_argument("--seed", type=int, default=0, help="seed for initialization and shuffling")


def _add_inference_flags(p):
    g = p.add_argument_group("inference")
    g.add_argument("--prune-exp", type=float, default=DEFAULT_LOG_THRESHOLD, help="pruning threshold exponent: prune below e^x")
    g.add_argument("--no-prune", action="store_true", help="disable coarse pruning")
    g.add_argument("--length-cap", type=int, default=DEFAULT_LENGTH_CAP, help="flag sentences longer than this many tokens")
    g.add_argument("--workers", type=int, default=1, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="neuralcrf", description="Neural CRF constituency parser.", formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model", formatter_class=fmt)
    t.add_argument("--train", required=True, help="training treebank (bracketed)")
    t.add_argument("--dev", default=None, help="optional dev treebank scored after training")
    t.add_argument("--embeddings", default=None, help="word vectors (required unless --mode sparse)")
    t.add_argument("--model-out", required=True, help="output model file")
    _add_model_flags(t)
    _add_train_flags(t)
    _add_inference_flags(t)

    q = sub.add_parser("parse", help="parse tokenized sentences, one per line", formatter_class=fmt)
    q.add_argument("--model", required=True, help="model file")
    q.add_argument("--input", default="-", help="input file, - for stdin")
    q.add_argument("--output", default="-", help="output file, - for stdout")
    _add_inference_flags(q)

    e = sub.add_parser("eval", help="labeled bracket scoring", formatter_class=fmt)
    e.add_argument("--gold", required=True, help="gold treebank")
    e.add_argument("--guess", required=True, help="parser output, one tree per line; (()) for no parse")
    e.add_argument("--max-length", type=int, default=40, help="length cutoff for the first F1 column")
    e.add_argument("--per-sentence", default=None, help="write per-sentence scores as tab-separated values")
    e.add_argument(
        "--delete-tags", default="``,'',:,\\,,.",
        help="comma-separated tags removed before scoring (backslash escapes a comma)",
    )

    a = sub.add_parser("ablate", help="train and score a grid of neural configurations", formatter_class=fmt)
    a.add_argument("--train", required=True, help="training treebank")
    a.add_argument("--dev", required=True, help="dev treebank")
    a.add_argument("--embeddings", required=True, help="word vectors")
    a.add_argument("--nonlinearities", default="relu,tanh,cube", help="comma-separated nonlinearities")
    a.add_argument("--depths", default="0,1,2", help="comma-separated depths")
    a.add_argument("--output-embedding", choices=["off", "on", "both"], default="both", help="K variants to run")
    a.add_argument("--mode", choices=["neural", "combined"], default="neural", help="potential family")
    a.add_argument("--n-h", type=int, default=DEFAULT_N_H, help="hidden width")
    a.add_argument("--n-oe", type=int, default=20, help="output-embedding rank when K is on")
    a.add_argument("--vertical", type=int, choices=[0, 1], default=0, help="vertical Markovization order V")
    a.add_argument("--rare-threshold", type=int, default=100, help="suffix count needed to keep a word in sparse features")
    _add_train_flags(a)
    _add_inference_flags(a)

    i = sub.add_parser("inspect", help="summarize a model file", formatter_class=fmt)
    i.add_argument("--model", required=True, help="model file")
    i.add_argument("--rules", type=int, default=0, help="also list this many most frequent rules")
    return p


# -- helpers -------------------------------------------------------------------------


def _split_escaped(s: str) -> list[str]:
    out, cur, esc = [], [], False
    for ch in s:
        if esc:
            cur.append(ch)
            esc = False
        elif ch == "\\":
            esc = True
        elif ch == ",":
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return [x for x in out if x]


def _read_treebank(path) -> list[Tree]:
    try:
        with open(path, encoding="utf-8") as f:
            raw = read_ptb(f.read())
    except OSError as e:
        raise DataError(f"cannot read treebank {path}: {e.strerror}") from None
    except TreeParseError as e:
        raise DataError(f"{path}: {e}") from None
    out = []
    for n, t in enumerate(raw, 1):
        try:
            out.append(normalize(t))
        except EmptyTreeError:
            log.warning("event=skip_tree file=%s tree=%d reason=empty_after_normalization", path, n)
    if not out:
        raise DataError(f"treebank {path} contains no usable trees")
    return out


def _read_guesses(path) -> list[Tree | None]:
    out: list[Tree | None] = []
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                s = line.strip()
                if not s:
                    continue
                if s.replace(" ", "") in ("(())", "()"):
                    out.append(None)
                    continue
                try:
                    trees = read_ptb(s)
                except TreeParseError as e:
                    raise DataError(f"{path}: line {lineno}: {e}") from None
                if len(trees) != 1:
                    raise DataError(f"{path}: line {lineno}: expected one tree, found {len(trees)}")
                out.append(trees[0])
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from None
    return out


def _load_embeddings(path):
    try:
        return load_embeddings_file(path)
    except OSError as e:
        raise DataError(f"cannot read embeddings {path}: {e.strerror}") from None
    except EmbeddingFormatError as e:
        raise DataError(f"{path}: {e}") from None


def _model_config(args, depth=None, nonlinearity=None, n_oe="unset") -> ModelConfig:
    depth = args.depth if depth is None else depth
    n_h = args.n_h
    if depth == 0 and n_h is not None and getattr(args, "command", "") == "train":
        raise UsageError("--n-h cannot be combined with --depth 0")
    try:
        return ModelConfig(
            mode=args.mode,
            nonlinearity=nonlinearity or args.nonlinearity,
            depth=depth,
            n_h=n_h if n_h is not None else DEFAULT_N_H,
            n_oe=args.n_oe if n_oe == "unset" else n_oe,
            vertical=args.vertical,
            bias=getattr(args, "bias", False),
            rare_threshold=args.rare_threshold,
        )
    except ConfigError as e:
        raise UsageError(str(e)) from None


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            minibatch=args.minibatch,
            passes=args.passes,
            max_minibatches=args.max_minibatches,
            seed=args.seed,
            log_threshold=None if args.no_prune else args.prune_exp,
            workers=args.workers,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def _threshold(args):
    return None if args.no_prune else args.prune_exp


# worker-global model for sentence-parallel parsing
_PARSE: dict = {}


def _parse_one(words):
    m, thr = _PARSE["model"], _PARSE["threshold"]
    return m.parse(words, thr)


def parse_sentences(model: Model, sentences, log_threshold, workers: int = 1):
    if workers <= 1 or len(sentences) < 2:
        return [model.parse(s, log_threshold) for s in sentences]
    _PARSE["model"], _PARSE["threshold"] = model, log_threshold
    with mp.get_context("fork").Pool(workers) as pool:
        out = pool.map(_parse_one, sentences, chunksize=max(1, len(sentences) // (4 * workers)))
    _PARSE.clear()
    return out


def _dev_f1(model: Model, dev, args):
    sents = [t.words() for t in dev]
    results = parse_sentences(model, sents, _threshold(args), args.workers)
    return score(dev, [r.tree for r in results])


# -- commands -------------------------------------------------------------------------


def cmd_train(args) -> int:
    config = _model_config(args)
    tconfig = _train_config(args)
    if config.mode != "sparse" and not args.embeddings:
        raise UsageError("--embeddings is required unless --mode sparse")
    trees = _read_treebank(args.train)
    dev = _read_treebank(args.dev) if args.dev else None
    emb = _load_embeddings(args.embeddings) if args.embeddings else None
    log.info("event=train_start trees=%d mode=%s depth=%d nonlinearity=%s", len(trees), config.mode, config.depth, config.nonlinearity)
    t0 = time.perf_counter()
    model, tlog = train(trees, emb, config, tconfig)
    log.info(
        "event=train_done minibatches=%d skipped=%d coarse_failures=%d seconds=%.2f",
        len(tlog.records), tlog.skipped_total, tlog.coarse_failures, time.perf_counter() - t0,
    )
    try:
        model.save(args.model_out)
    except OSError as e:
        raise DataError(f"cannot write model {args.model_out}: {e.strerror}") from None
    log.info("event=model_saved path=%s", args.model_out)
    if dev is not None:
        res = _dev_f1(model, dev, args)
        log.info("event=dev_score f1_short=%.2f f1_all=%.2f", res.short.f1, res.all.f1)
        sys.stdout.write(report(res))
    return EXIT_OK


def _load_model(path) -> Model:
    try:
        return Model.load(path)
    except OSError as e:
        raise DataError(f"cannot read model {path}: {e.strerror}") from None
    except (ModelFormatError, ConfigError, KeyError) as e:
        raise DataError(f"{path}: invalid model file: {e}") from None


def _open_in(path):
    if path == "-":
        return io.TextIOWrapper(sys.stdin.buffer, encoding="utf-8")
    try:
        return open(path, encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from None


def cmd_parse(args) -> int:
    model = _load_model(args.model)
    with _open_in(args.input) as f:
        sentences = [[escape_token(w) for w in line.split()] for line in f]
    for n, s in enumerate(sentences, 1):
        if len(s) > args.length_cap:
            log.warning("event=long_sentence line=%d tokens=%d cap=%d", n, len(s), args.length_cap)
    results = parse_sentences(model, sentences, _threshold(args), args.workers)
    n_fail = 0
    for n, (s, r) in enumerate(zip(sentences, results), 1):
        if r.tree is None and s:
            n_fail += 1
            log.warning("event=no_parse line=%d tokens=%d", n, len(s))
        if r.pruned_fallback:
            log.info("event=pruned_fallback line=%d", n)
    buf = io.StringIO()
    write_ptb([r.tree for r in results], buf)
    text = buf.getvalue()
    if args.output == "-":
        sys.stdout.write(text)
    else:
        try:
            with open(args.output, "w", encoding="utf-8") as f:
                f.write(text)
        except OSError as e:
            raise DataError(f"cannot write {args.output}: {e.strerror}") from None
    log.info("event=parse_done sentences=%d no_parse=%d", len(sentences), n_fail)
    return EXIT_OK


def cmd_eval(args) -> int:
    gold = _read_treebank(args.gold)
    guess = _read_guesses(args.guess)
    try:
        res = score(gold, guess, args.max_length, frozenset(_split_escaped(args.delete_tags)))
    except (AlignmentError, BinarizedTreeError) as e:
        raise DataError(str(e)) from None
    sys.stdout.write(report(res))
    if args.per_sentence:
        with open(args.per_sentence, "w", encoding="utf-8") as f:
            f.write(per_sentence_table(res))
    return EXIT_OK


def ablation_grid(nonlinearities, depths, k_variants):
    """(nonlinearity, depth, use_k) rows; depth 0 has no nonlinearity and appears once per K variant."""
    rows = []
    for d in depths:
        for use_k in k_variants:
            if d == 0:
                rows.append(("-", 0, use_k))
            else:
                rows.extend((nl, d, use_k) for nl in nonlinearities)
    return rows


def cmd_ablate(args) -> int:
    nls = _split_escaped(args.nonlinearities)
    for nl in nls:
        if nl not in NL_CHOICES:
            raise UsageError(f"unknown nonlinearity {nl!r}")
    try:
        depths = [int(x) for x in _split_escaped(args.depths)]
    except ValueError:
        raise UsageError("--depths must be comma-separated integers") from None
    if any(d not in (0, 1, 2) for d in depths):
        raise UsageError("depths must be 0, 1 or 2")
    k_variants = {"off": [False], "on": [True], "both": [False, True]}[args.output_embedding]
    tconfig = _train_config(args)
    trees = _read_treebank(args.train)
    dev = _read_treebank(args.dev)
    emb = _load_embeddings(args.embeddings)
    rows = ablation_grid(nls, depths, k_variants)
    out = ["nonlinearity\tdepth\tembed_output\tF1_len<=40\tF1_all\tseconds"]
    for nl, d, use_k in rows:
        args.depth = d
        config = _model_config(args, depth=d, nonlinearity="relu" if nl == "-" else nl, n_oe=args.n_oe if use_k else None)
        t0 = time.perf_counter()
        model, _ = train(trees, emb, config, tconfig)
        res = _dev_f1(model, dev, args)
        secs = time.perf_counter() - t0
        log.info("event=ablation_row nonlinearity=%s depth=%d embed_output=%s f1_all=%.2f seconds=%.1f", nl, d, use_k, res.all.f1, secs)
        out.append(f"{nl}\t{d}\t{'yes' if use_k else 'no'}\t{res.short.f1:.2f}\t{res.all.f1:.2f}\t{secs:.1f}")
    sys.stdout.write("\n".join(out) + "\n")
    return EXIT_OK


def cmd_inspect(args) -> int:
    m = _load_model(args.model)
    g = m.grammar
    lines = [
        f"mode\t{m.config.mode}",
        f"nonlinearity\t{m.config.nonlinearity}",
        f"depth\t{m.config.depth}",
        f"n_h\t{m.config.n_h}",
        f"n_oe\t{m.config.n_oe if m.config.n_oe is not None else 'off'}",
        f"vertical\t{m.config.vertical}",
        f"symbols\t{g.n_symbols}",
        f"rules\t{g.n_rules} (binary {g.n_binary}, unary {g.n_unary}, lexical {g.n_tags})",
        f"sparse_features\t{len(m.indexer)}",
        f"embedding_vocab\t{len(m.embeddings.words) if m.embeddings is not None else 0}",
    ]
    for name in sorted(m.params):
        lines.append(f"block\t{name}\t{'x'.join(map(str, m.params[name].shape))}")
    if args.rules:
        order = sorted(range(g.n_rules), key=lambda r: (-g.rule_counts[r], r))[: args.rules]
        lines += [f"rule\t{int(g.rule_counts[r])}\t{g.rule_name(r)}" for r in order]
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "parse": cmd_parse, "eval": cmd_eval, "ablate": cmd_ablate, "inspect": cmd_inspect}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(-1 if args.quiet else args.verbose)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        sys.stderr.write(f"neuralcrf: usage error: {e}\n")
        return EXIT_USAGE
    except DataError as e:
        sys.stderr.write(f"neuralcrf: data error: {e}\n")
        return EXIT_DATA
    except (NumericError, FloatingPointError) as e:
        sys.stderr.write(f"neuralcrf: numeric abort: {e}\n")
        return EXIT_NUMERIC
