import dataclasses

import numpy as np
import pytest

from sodmv import training
from sodmv.chart import ModelKind, expected_counts, inside, viterbi_parse
from sodmv.data import build_parallel_views, generate_synthetic, random_grammar
from sodmv.grammar import GrammarError, Order, RuleTables, Sentence, Vocab, VocabMode
from sodmv.neural import DimConfig, init_params
from sodmv.oracle import enumerate_trees
from sodmv.training import (
    AdamState,
    JointModel,
    Method,
    NeuralModel,
    TableModel,
    TrainConfig,
    TrainingError,
    adam_update,
    build_model,
    dmo_step,
    em_step,
    joint_step,
    km_initialize,
    km_targets,
    mean_log_likelihood,
    supervised_warmup,
    train,
    tree_counts,
)

SMALL = DimConfig(d_pos=8, d_hidden=8, q_child=4, q_decision=2, init_range=0.3)
VOCAB = Vocab(VocabMode.UNLEXICALIZED, ("A", "B", "C"))


def neural(order=Order.SECOND_SIBLING, seed=0, vocab=VOCAB, dims=SMALL):
    return NeuralModel(init_params(seed, dims, vocab), vocab, order)


def corpus(n=30, seed=0):
    t, v = random_grammar(3, seed)
    return generate_synthetic(t, v, n, 6, seed).sentences


# -- Adam ---------------------------------------------------------------------------


def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    new, state = adam_update(p, {"w": np.zeros(2)}, AdamState.zeros(p), 0.1)
    np.testing.assert_array_equal(new["w"], p["w"])
    assert state.step == 1


def test_adam_first_step_magnitude():
    p = {"w": np.array([0.5])}
    new, _ = adam_update(p, {"w": np.array([1.0])}, AdamState.zeros(p), 0.001, eps=1e-8)
    assert p["w"][0] - new["w"][0] == pytest.approx(0.001, rel=1e-6)


def test_adam_identical_tensors():
    p = {"a": np.array([1.0, 2.0]), "b": np.array([1.0, 2.0])}
    g = {"a": np.array([0.3, -0.1]), "b": np.array([0.3, -0.1])}
    new, _ = adam_update(p, g, AdamState.zeros(p), 0.01)
    np.testing.assert_array_equal(new["a"], new["b"])


def test_adam_rejects_non_finite():
    p = {"w": np.zeros(1)}
    with pytest.raises(TrainingError):
        adam_update(p, {"w": np.array([np.nan])}, AdamState.zeros(p), 0.01)


# -- DMO / EM -------------------------------------------------------------------------


def test_zero_learning_rate_leaves_params():
    m = neural()
    before = {k: v.copy() for k, v in m.weights.items()}
    cfg = TrainConfig(learning_rate=0.0)  # steps do not validate; train() would refuse lr=0
    loss, _, _ = dmo_step(corpus(5), m, AdamState.zeros(m.weights), cfg)
    assert np.isfinite(loss)
    assert all(np.array_equal(before[k], m.weights[k]) for k in before)


def test_single_token_dmo_is_monotone():
    m = neural(Order.FIRST)
    batch = [Sentence([1])]
    cfg = TrainConfig(learning_rate=1e-3)
    opt = AdamState.zeros(m.weights)
    losses = []
    for _ in range(50):
        loss, opt, _ = dmo_step(batch, m, opt, cfg)
        losses.append(loss)
    assert all(b <= a + 1e-6 for a, b in zip(losses[1:], losses[2:]))
    assert losses[-1] < losses[0]


def test_duplicates_do_not_change_trajectory():
    s = corpus(1)[0]
    a, b = neural(seed=3), neural(seed=3)
    oa, ob = AdamState.zeros(a.weights), AdamState.zeros(b.weights)
    cfg = TrainConfig()
    for _ in range(3):
        _, oa, _ = dmo_step([s], a, oa, cfg)
        _, ob, _ = dmo_step([s, s], b, ob, cfg)
    for k in a.weights:
        np.testing.assert_allclose(a.weights[k], b.weights[k], rtol=0, atol=1e-14)


def test_em_one_inner_step_equals_dmo():
    batch = corpus(10)
    a, b = neural(seed=1), neural(seed=1)
    _, _, d = dmo_step(batch, a, AdamState.zeros(a.weights), TrainConfig())
    _, _, e = em_step(batch, b, AdamState.zeros(b.weights), TrainConfig(method=Method.EM))
    for k in d.grads[0]:
        np.testing.assert_allclose(d.grads[0][k], e.grads[0][k], rtol=0, atol=1e-12)


def test_em_counts_are_frozen_and_q_rises():
    m = neural(seed=2)
    cfg = TrainConfig(method=Method.EM, m_steps_per_e_step=3, learning_rate=1e-3)
    _, _, res = em_step(corpus(10), m, AdamState.zeros(m.weights), cfg)
    assert len(res.grads) == 3
    assert all(not a.flags.writeable for a in res.counts.arrays())
    q = res.inner_objectives
    assert q[1] >= q[0] - 1e-6 and q[2] >= q[1] - 1e-6


def test_non_finite_loss_is_reported():
    m = TableModel.uniform(VOCAB, Order.FIRST)
    m.logits["root"][:] = [0.0, -1e12, -1e12]  # root id 1 and 2 impossible
    with pytest.raises(TrainingError, match="batch sentence 1"):
        dmo_step([Sentence([0]), Sentence([1])], m, AdamState.zeros(m.weights), TrainConfig())


def test_table_model_dmo_improves():
    m = TableModel.uniform(VOCAB)
    cfg = TrainConfig(learning_rate=0.05)
    opt = AdamState.zeros(m.weights)
    batch = corpus(20)
    first, _, _ = dmo_step(batch, m, opt, cfg)
    for _ in range(20):
        loss, opt, _ = dmo_step(batch, m, opt, cfg)
    assert loss < first


# -- joint ------------------------------------------------------------------------------


def joint_setup(seed=0):
    sents = corpus(12, seed)
    pos, _ = build_parallel_views(sents, min_freq=1)
    lexical = NeuralModel(init_params(seed, dataclasses.replace(SMALL, d_word=4), pos.lex_vocab), pos.lex_vocab, Order.FIRST)
    structural = NeuralModel(init_params(seed + 1, SMALL, pos.vocab), pos.vocab, Order.SECOND_SIBLING)
    return pos.sentences, JointModel(lexical, structural)


def test_joint_objective_matches_oracle():
    sents, jm = joint_setup()
    short = [s for s in sents if len(s) <= 4][:5]
    opts = tuple(AdamState.zeros(m.weights) for m in jm.members)
    tables = jm.tables()
    obj, _, res = joint_step(short, jm, opts, TrainConfig(method=Method.JOINT_DMO, model="joint"))
    oracle = np.mean([enumerate_trees(s, tables, ModelKind.JOINT)[0] for s in short])
    assert obj == pytest.approx(oracle, abs=1e-9)
    assert res.counts.lexical.root.sum() == pytest.approx(len(short))
    assert res.counts.structural.root.sum() == pytest.approx(len(short))


def test_joint_single_tree():
    sents, jm = joint_setup()
    s = next(x for x in sents if len(x) == 1)
    t = jm.tables()
    expect = sum(enumerate_trees(s, tt, k)[0] for tt, k in ((t.lexical, ModelKind.FIRST), (t.structural, ModelKind.SIBLING)))
    assert inside(s, t, ModelKind.JOINT) == pytest.approx(expect, abs=1e-12)


def test_product_em_inner_steps():
    sents, jm = joint_setup(1)
    opts = tuple(AdamState.zeros(m.weights) for m in jm.members)
    cfg = TrainConfig(method=Method.PRODUCT_EM, model="joint", m_steps_per_e_step=2)
    _, _, res = joint_step(sents, jm, opts, cfg)
    assert len(res.grads) == 4 and len(res.inner_objectives) == 2


def test_joint_needs_lexical_view():
    _, jm = joint_setup()
    opts = tuple(AdamState.zeros(m.weights) for m in jm.members)
    with pytest.raises(GrammarError):
        joint_step([Sentence([0, 1])], jm, opts, TrainConfig(method=Method.JOINT_DMO, model="joint"))


# -- initialisation -------------------------------------------------------------------------


def test_km_cross_entropy_decreases():
    m = neural()
    hist = km_initialize(corpus(20), m, 15, TrainConfig(km_learning_rate=0.01))
    assert all(b <= a + 1e-6 for a, b in zip(hist, hist[1:]))


def test_km_prefers_adjacent_attachment():
    sents = [Sentence([0, 1, 2])]
    t = km_targets(sents, 3, Order.FIRST, False)
    # head 0 (position 1): adjacent child 1 beats distance-2 child 2
    assert t.child[0, 0, 1, 1, 1] > t.child[0, 0, 1, 1, 2]


def test_km_zero_epochs_is_noop():
    m = neural()
    before = {k: v.copy() for k, v in m.weights.items()}
    km_initialize(corpus(5), m, 0)
    assert all(np.array_equal(before[k], m.weights[k]) for k in before)


def test_tree_counts_single_token():
    t = RuleTables.uniform(3, Order.SECOND_GRAND)
    s = Sentence([2])
    c = tree_counts([(s, [0])], t)
    _, e = expected_counts(s, t, ModelKind.GRAND)
    for a, b in zip(c.arrays(), e.arrays()):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_warmup_recovers_given_tree():
    m = neural(Order.SECOND_SIBLING, dims=dataclasses.replace(SMALL, init_range=0.5))
    s = Sentence([0, 1, 2, 1])
    heads = [2, 0, 4, 2]
    supervised_warmup([(s, heads)], m, 300, TrainConfig(learning_rate=0.01))
    assert list(viterbi_parse(s, m.tables(), ModelKind.SIBLING).heads) == heads


def test_warmup_log_likelihood_non_decreasing():
    m = neural(Order.SECOND_GRAND)
    pairs = [(x, x.gold_heads) for x in corpus(10, 3)]
    hist = supervised_warmup(pairs, m, 30, TrainConfig(learning_rate=1e-3, batch_size=10))
    assert all(b >= a - 1e-6 for a, b in zip(hist, hist[1:]))
    assert hist[-1] > hist[0]


def test_warmup_rejects_bad_tree():
    m = neural()
    with pytest.raises(GrammarError, match="tree 1"):
        supervised_warmup([(Sentence([0]), [0]), (Sentence([0, 1]), [0, 0])], m, 1, TrainConfig())


# -- loop ---------------------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(TrainingError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(TrainingError):
        TrainConfig(method="joint-dmo", model="sibling").validate()
    with pytest.raises(TrainingError):
        TrainConfig(patience=0).validate()


def test_patience_stops_and_keeps_best(monkeypatch):
    values = iter([-1.0, -2.0, -3.0, -4.0])
    monkeypatch.setattr(training, "mean_log_likelihood", lambda s, m: next(values))
    sents = corpus(10)
    cfg = TrainConfig(model="ndmv", patience=1, max_epochs=4, init="uniform", dims=SMALL, batch_size=5)
    seen = []
    res = train(sents, sents[:2], cfg, VOCAB, on_epoch=lambda r: seen.append(r.epoch))
    assert seen == [1, 2] and res.best_epoch == 1


def test_training_is_deterministic_and_improves():
    t, v = random_grammar(3, 4)
    tr = generate_synthetic(t, v, 60, 6, 1).sentences
    dev = generate_synthetic(t, v, 20, 6, 2).sentences
    cfg = TrainConfig(model="sibling", max_epochs=4, batch_size=20, dims=SMALL, km_epochs=20, learning_rate=0.01)
    a = train(tr, dev, cfg, v)
    b = train(tr, dev, cfg, v)
    strip = lambda r: [(x.epoch, x.train_loss, x.dev_ll) for x in r.log]
    assert strip(a) == strip(b)
    assert a.log[-1].train_loss < a.log[0].train_loss


def test_build_model_variants():
    t, v = random_grammar(3, 0)
    sents = generate_synthetic(t, v, 10, 5, 0).sentences
    pos, _ = build_parallel_views(sents, min_freq=1)
    assert isinstance(build_model(TrainConfig(model="dmv"), pos.vocab), TableModel)
    g = build_model(TrainConfig(model="grand", dims=SMALL), pos.vocab)
    assert g.order is Order.SECOND_GRAND
    j = build_model(TrainConfig(model="joint", method="joint-dmo", dims=SMALL, lex_dims=SMALL), pos.vocab, pos.lex_vocab)
    assert isinstance(j, JointModel) and j.lexical.lexical and not j.structural.lexical
    with pytest.raises(GrammarError):
        build_model(TrainConfig(model="ndmv", lexicalized=True), pos.vocab)
    assert np.isfinite(mean_log_likelihood(pos.sentences, j))
