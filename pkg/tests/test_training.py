import math

import numpy as np
import pytest
from desk import desk_corpus
from helpers import dense, finite_difference_check, random_model
from oracle import brute_force, count_trees

from neuralcrf.evaluation import score
from neuralcrf.model import ModelConfig
from neuralcrf.training import (
    AdadeltaState,
    GoldPrunedError,
    NumericError,
    TrainConfig,
    adadelta_step,
    build_model,
    initialize,
    loglikelihood,
    train,
    tree_gradient,
)
from neuralcrf.treebank import normalize, read_ptb

ONE_PARSE = "(S (NP (DT the) (NN dog)) (VP (VBZ barks)))"


def test_single_parse_has_zero_loglik_and_gradient():
    trees = [normalize(read_ptb(ONE_PARSE)[0])]
    model, prepared = build_model(trees, None, ModelConfig(mode="sparse", rare_threshold=1), 0)
    rng = np.random.default_rng(0)
    model.params["W1"][...] = rng.normal(size=model.params["W1"].shape)
    assert count_trees(model.grammar, 3) == 1
    t = prepared[0]
    res = tree_gradient(model, model.grammar.tree_to_anchored_rules(t), t.words())
    assert abs(res.loglik) < 1e-12
    assert np.abs(dense(res.grads["W1"], model.params["W1"].shape)).max() < 1e-12


def test_zero_potentials_give_minus_log_tree_count():
    model, prepared = random_model(mode="sparse", seed=2)
    model.params["W1"][...] = 0.0
    for t in prepared[:10]:
        m = count_trees(model.grammar, len(t.words()))
        ll = loglikelihood(model, model.grammar.tree_to_anchored_rules(t), t.words())
        assert abs(ll + math.log(m)) < 1e-9


def test_loglikelihood_matches_enumeration():
    model, prepared = random_model(mode="combined", depth=1, seed=3)
    checked = 0
    for t in prepared:
        words = t.words()
        if count_trees(model.grammar, len(words)) > 20000:
            continue
        rules = model.grammar.tree_to_anchored_rules(t)
        tab = model.scorer(words).tables
        bf = brute_force(tab, model.grammar)
        want = tab.score_rules(model.grammar, rules) - bf["log_z"]
        assert abs(loglikelihood(model, rules, words) - want) < 1e-8
        checked += 1
        if checked == 5:
            break
    assert checked == 5


@pytest.mark.parametrize("nl", ["relu", "tanh", "cube"])
@pytest.mark.parametrize("depth", [0, 1, 2])
def test_gradients_match_finite_differences(nl, depth):
    model, prepared = random_model(nonlinearity=nl, depth=depth, n_oe=3 if depth != 1 else None, bias=depth == 1, seed=depth + 7)
    worst, rows = finite_difference_check(model, prepared[1], rng=np.random.default_rng(depth))
    assert worst < 1e-4, [r for r in rows if r[4] >= 1e-4]


def test_gradient_step_increases_loglik():
    model, prepared = random_model(mode="combined", depth=1, seed=5)
    t = prepared[0]
    rules, words = model.grammar.tree_to_anchored_rules(t), t.words()
    res = tree_gradient(model, rules, words)
    for name, g in res.grads.items():
        model.params[name] += 1e-4 * dense(g, model.params[name].shape)
    assert loglikelihood(model, rules, words) > res.loglik


def test_dead_relu_units_get_no_hidden_gradient():
    model, prepared = random_model(nonlinearity="relu", depth=1, seed=4)
    model.params["H1"][...] = 0.0  # every preactivation is 0, where relu' is 0
    t = prepared[0]
    res = tree_gradient(model, model.grammar.tree_to_anchored_rules(t), t.words())
    assert not res.grads["H1"].any()
    assert not res.grads["W2"].any()


def test_gold_outside_mask_raises():
    model, prepared = random_model(mode="sparse", seed=1)
    t = prepared[0]
    words = t.words()
    allow = np.zeros((len(words) + 1, len(words) + 1, model.grammar.n_symbols), dtype=bool)
    allow[0, len(words), model.grammar.top] = True
    with pytest.raises(GoldPrunedError):
        tree_gradient(model, model.grammar.tree_to_anchored_rules(t), words, allow)


# -- Adadelta ------------------------------------------------------------------


def test_adadelta_zero_gradient_is_no_op():
    params = {"a": np.array([1.0, -2.0])}
    st = AdadeltaState(params)
    d = adadelta_step(st, params, {"a": np.zeros(2)})
    assert np.array_equal(params["a"], [1.0, -2.0]) and not d["a"].any()


def test_adadelta_first_step_closed_form():
    params = {"a": np.zeros(3)}
    st = AdadeltaState(params, rho=0.95, eps=1e-6)
    g = np.array([2.0, -0.5, 1e-3])
    d = adadelta_step(st, params, {"a": g})
    want = -np.sqrt(1e-6) / np.sqrt(0.05 * g * g + 1e-6) * g
    np.testing.assert_allclose(d["a"], want, rtol=0, atol=1e-15)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        adadelta_step(st, params, {"a": rng.normal(scale=10.0, size=3)})
        assert (st.sq_grad["a"] >= 0).all() and (st.sq_delta["a"] >= 0).all()


def test_adadelta_rejects_non_finite_and_names_block():
    params = {"W2": np.zeros(2), "H1": np.zeros(2)}
    st = AdadeltaState(params)
    with pytest.raises(NumericError, match="H1"):
        adadelta_step(st, params, {"W2": np.ones(2), "H1": np.array([0.0, np.nan])})
    assert not params["W2"].any()  # nothing applied


def test_initialization():
    model, _ = random_model(depth=2, n_oe=4, n_h=30, n_e=5)
    cfg = model.config
    a = initialize(cfg, model.grammar, len(model.indexer), 5, seed=3)
    b = initialize(cfg, model.grammar, len(model.indexer), 5, seed=3)
    for k in a:
        assert np.array_equal(a[k], b[k])
    assert not a["W1"].any() and not a["W2"].any()
    h = np.concatenate([a["H1"].ravel(), a["H2"].ravel()])
    assert 0.008 < h.var() < 0.012
    # output-embedding columns of rules sharing a parent coincide
    g = model.grammar
    K = a["K"]
    p = g.rule_parents
    same = [(r, s) for r in range(g.n_rules) for s in range(r + 1, g.n_rules) if p[r] == p[s]][:20]
    assert same and all(np.array_equal(K[:, r], K[:, s]) for r, s in same)


# -- training loop ---------------------------------------------------------------


def _f1(model, trees):
    guesses = [model.parse(t.words()).tree for t in trees]
    return score(trees, guesses).all.f1


def test_training_improves_objective():
    _, train_trees, _ = desk_corpus(60, 0, seed=3, max_length=10)
    _, tlog = train(
        train_trees, None, ModelConfig(mode="sparse", rare_threshold=2), TrainConfig(minibatch=10, passes=3, seed=0)
    )
    obj = tlog.objective
    per_pass = [sum(obj[i : i + 6]) for i in range(0, len(obj), 6)]
    assert per_pass[-1] > per_pass[0]
    assert tlog.skipped_total == 0


def test_sparse_results_stable_across_seeds():
    _, train_trees, test_trees = desk_corpus(150, 60, seed=4, max_length=15)
    f = []
    for seed in (0, 1):
        model, _ = train(
            train_trees, None, ModelConfig(mode="sparse", rare_threshold=2), TrainConfig(minibatch=10, passes=2, seed=seed)
        )
        f.append(_f1(model, test_trees))
    assert abs(f[0] - f[1]) <= 1.0, f


def test_workers_give_identical_parameters():
    _, train_trees, _ = desk_corpus(30, 0, seed=5, max_length=8)
    cfg = ModelConfig(mode="sparse", rare_threshold=2)
    a, _ = train(train_trees, None, cfg, TrainConfig(minibatch=10, passes=1, workers=1))
    b, _ = train(train_trees, None, cfg, TrainConfig(minibatch=10, passes=1, workers=2))
    np.testing.assert_allclose(a.params["W1"], b.params["W1"], rtol=0, atol=1e-12)


def test_embeddings_are_not_updated_by_training():
    gen, train_trees, _ = desk_corpus(20, 0, seed=6, max_length=8)
    emb = gen.embeddings(n_e=3)
    before = emb.matrix.copy()
    model, _ = train(train_trees, emb, ModelConfig(mode="neural", n_h=5, rare_threshold=2), TrainConfig(minibatch=5, passes=1))
    assert np.array_equal(model.embeddings.matrix, before)
    assert "E" not in model.params
