"""Small-model builders shared by the scoring, training and acceptance tests."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from desk import DeskGenerator

from neuralcrf.model import ModelConfig
from neuralcrf.scoring import RowSparse
from neuralcrf.training import build_model, loglikelihood, tree_gradient

_BANKS: dict = {}


def short_bank(seed: int = 0, count: int = 40, max_length: int = 6):
    key = (seed, count, max_length)
    if key not in _BANKS:
        gen = DeskGenerator(seed, max_length=max_length)
        _BANKS[key] = (gen, gen.trees(count))
    return _BANKS[key]


def random_model(
    mode="combined",
    nonlinearity="relu",
    depth=1,
    n_h=6,
    n_e=3,
    n_oe=None,
    bias=False,
    seed=0,
    scale=0.3,
    hidden_scale=0.1,
    count=40,
):
    """Model over a short desk bank with every parameter block drawn at random.

    Hidden layers use ``hidden_scale`` (the initializer's standard deviation by
    default); output-side blocks use ``scale``.
    """
    gen, trees = short_bank(seed % 5, count)
    emb = gen.embeddings(n_e=n_e, seed=seed)
    cfg = ModelConfig(mode=mode, nonlinearity=nonlinearity, depth=depth, n_h=n_h, n_oe=n_oe, bias=bias, rare_threshold=2)
    model, prepared = build_model(trees, emb, cfg, seed)
    rng = np.random.default_rng(1000 + seed)
    for name, p in model.params.items():
        sd = hidden_scale if name[0] in "Hb" and name != "bo" else scale
        p[...] = rng.normal(0.0, sd, size=p.shape)
    return model, prepared


def dense(g, shape):
    return g.to_dense(shape) if isinstance(g, RowSparse) else g


def extended_copy(model):
    """Same model with parameters in 80-bit extended precision (for the difference quotient only)."""
    return replace(model, params={k: v.astype(np.longdouble) for k, v in model.params.items()})


def finite_difference_check(model, tree, coords_per_block=6, step=1e-5, rng=None, allow=None):
    """Compare analytic gradients against central differences; returns (worst relative error, rows).

    The difference quotient is evaluated in extended precision so its own
    rounding error (about 1e-10 absolute in float64) does not swamp small
    gradient coordinates.
    """
    rng = rng or np.random.default_rng(0)
    rules = model.grammar.tree_to_anchored_rules(tree)
    words = tree.words()
    grads = tree_gradient(model, rules, words, allow).grads
    ext = extended_copy(model)
    step = np.longdouble(step)
    worst, rows = 0.0, []
    for name in sorted(model.params):
        p = ext.params[name]
        g = dense(grads[name], model.params[name].shape)
        if name == "W1":
            cand_rows = grads[name].rows
            coords = [(int(rng.choice(cand_rows)), int(rng.integers(p.shape[1]))) for _ in range(coords_per_block)]
        else:
            coords = [tuple(int(rng.integers(s)) for s in p.shape) for _ in range(coords_per_block)]
        for ix in coords:
            old = p[ix]
            p[ix] = old + step
            up = loglikelihood(ext, rules, words, allow)
            p[ix] = old - step
            down = loglikelihood(ext, rules, words, allow)
            p[ix] = old
            fd = float((up - down) / (2 * step))
            an = float(g[ix])
            denom = max(abs(fd), abs(an))
            rel = 0.0 if denom < 1e-8 else abs(fd - an) / denom
            worst = max(worst, rel)
            rows.append((name, ix, fd, an, rel))
    return worst, rows
