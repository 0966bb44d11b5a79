import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sodmv.chart import (
    JointTables,
    ModelKind,
    dp_update_count,
    expected_counts,
    expected_counts_batch,
    inside,
    inside_batch,
    instrumented_steps,
    viterbi_parse,
)
from sodmv.grammar import Direction, GrammarError, Order, RuleTables, Sentence, Valence
from sodmv.oracle import enumerate_trees
from sodmv.trees import projective_trees

ORDER_OF = {ModelKind.FIRST: Order.FIRST, ModelKind.SIBLING: Order.SECOND_SIBLING, ModelKind.GRAND: Order.SECOND_GRAND}
KINDS = list(ModelKind)


def model_for(kind, V, rng, temperature=1.0):
    if kind is ModelKind.JOINT:
        return JointTables(
            RuleTables.random(V, Order.FIRST, rng, temperature, lexical=True),
            RuleTables.random(V, Order.SECOND_SIBLING, rng, temperature),
        )
    return RuleTables.random(V, ORDER_OF[kind], rng, temperature)


def sentence(ids):
    return Sentence(ids, ids)


@pytest.mark.parametrize("kind", [ModelKind.FIRST, ModelKind.SIBLING, ModelKind.GRAND])
def test_single_token_closed_form(kind):
    t = RuleTables.random(3, ORDER_OF[kind], np.random.default_rng(0))
    a = 2
    expect = t.root[a] + t.decision[a, 0, Direction.LEFT, Valence.NOCHILD, 0] + t.decision[a, 0, Direction.RIGHT, Valence.NOCHILD, 0]
    assert inside(sentence([a]), t, kind) == pytest.approx(expect, abs=1e-12)
    tree = viterbi_parse(sentence([a]), t, kind)
    assert list(tree.heads) == [0] and tree.log_score == pytest.approx(expect, abs=1e-12)
    _, c = expected_counts(sentence([a]), t, kind)
    assert c.root[a] == pytest.approx(1.0)
    assert c.decision[a, 0, :, Valence.NOCHILD, 0] == pytest.approx([1.0, 1.0])
    assert c.root.sum() + c.child.sum() + c.decision.sum() == pytest.approx(3.0)


def test_n2_sibling_matches_two_trees():
    t = RuleTables.random(3, Order.SECOND_SIBLING, np.random.default_rng(1))
    s = sentence([0, 2])
    oz, _, _ = enumerate_trees(s, t, ModelKind.SIBLING)
    assert inside(s, t, ModelKind.SIBLING) == pytest.approx(oz, abs=1e-9)


def test_dominant_tree():
    t = RuleTables.uniform(2, Order.FIRST)
    t.root[:] = [-50.0, 0.0]  # only token id 1 can be the root child
    t.root[:] = t.root - np.log(np.exp(t.root).sum())
    s = sentence([0, 1])
    assert list(viterbi_parse(s, t, ModelKind.FIRST).heads) == [2, 0]


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(KINDS), st.lists(st.integers(0, 2), min_size=1, max_size=5), st.integers(0, 2**31))
def test_matches_oracle(kind, ids, seed):
    model = model_for(kind, 3, np.random.default_rng(seed))
    s = sentence(ids)
    oz, best, oc = enumerate_trees(s, model, kind)
    lz, c = expected_counts(s, model, kind)
    assert lz == pytest.approx(oz, abs=1e-9)
    tree = viterbi_parse(s, model, kind)
    assert tree.log_score == pytest.approx(best.log_score, abs=1e-9)
    assert tree.log_score <= lz + 1e-12
    pairs = [(c.lexical, oc.lexical), (c.structural, oc.structural)] if kind is ModelKind.JOINT else [(c, oc)]
    for a, b in pairs:
        for x, y in zip(a.arrays(), b.arrays()):
            np.testing.assert_allclose(x, y, atol=1e-8)
            assert (x >= -1e-12).all()
        assert a.root.sum() == pytest.approx(1.0)


def test_counts_reconstruct_expected_log_prob():
    rng = np.random.default_rng(3)
    t = RuleTables.random(3, Order.SECOND_GRAND, rng)
    s = sentence([0, 1, 2, 1])
    lz, c = expected_counts(s, t, ModelKind.GRAND)
    from sodmv.trees import tree_log_prob

    trees = list(projective_trees(4))
    scores = np.array([tree_log_prob(t, s.pos_ids, h) for h in trees])
    post = np.exp(scores - lz)
    assert c.dot(t) == pytest.approx(float(post @ scores), abs=1e-9)


def test_joint_with_identical_models():
    rng = np.random.default_rng(4)
    base = RuleTables.random(3, Order.FIRST, rng)
    lexical = RuleTables(Order.FIRST, base.root, base.child, base.decision, lexical=True)
    structural = base.broadcast_extra(Order.SECOND_SIBLING)
    s = sentence([2, 0, 1, 1])
    from sodmv.trees import tree_log_prob

    scores = np.array([2 * tree_log_prob(base, s.pos_ids, h) for h in projective_trees(4)])
    expect = scores.max() + np.log(np.exp(scores - scores.max()).sum())
    assert inside(s, JointTables(lexical, structural), ModelKind.JOINT) == pytest.approx(expect, abs=1e-9)


def test_mirror_symmetry_of_uniform_counts():
    t = RuleTables.uniform(2, Order.FIRST)
    s = sentence([0, 1, 0])
    _, _, c = enumerate_trees(s, t, ModelKind.FIRST)
    # swap direction and the result must be unchanged for a palindrome
    np.testing.assert_allclose(c.child, c.child[:, :, ::-1], atol=1e-12)
    np.testing.assert_allclose(c.decision, c.decision[:, :, ::-1], atol=1e-12)


def test_enumeration_limit():
    t = RuleTables.uniform(1, Order.FIRST)
    with pytest.raises(GrammarError, match="enumeration limit"):
        enumerate_trees(sentence([0] * 9), t, ModelKind.FIRST)


def test_errors():
    t = RuleTables.uniform(2, Order.FIRST)
    with pytest.raises(GrammarError, match="out of vocab"):
        inside(sentence([0, 5]), t, ModelKind.FIRST)
    with pytest.raises(GrammarError):
        inside(sentence([0, 1]), t, ModelKind.SIBLING)
    with pytest.raises(GrammarError):
        inside(sentence([0, 1]), t, ModelKind.JOINT)


def test_batch_agrees_with_single_and_is_deterministic():
    rng = np.random.default_rng(5)
    t = RuleTables.random(4, Order.SECOND_SIBLING, rng)
    sents = [sentence(rng.integers(0, 4, n)) for n in (3, 1, 5, 3, 2)]
    batch = inside_batch(sents, t, ModelKind.SIBLING)
    for s, z in zip(sents, batch):
        assert inside(s, t, ModelKind.SIBLING) == pytest.approx(z, abs=1e-12)
    assert np.array_equal(batch, inside_batch(sents, t, ModelKind.SIBLING))
    _, total = expected_counts_batch(sents, t, ModelKind.SIBLING, weights=[1, 0, 0, 0, 0])
    _, first = expected_counts(sents[0], t, ModelKind.SIBLING)
    np.testing.assert_allclose(total.child, first.child, atol=1e-12)


def test_counts_match_finite_differences():
    rng = np.random.default_rng(6)
    t = RuleTables.random(2, Order.SECOND_SIBLING, rng)
    s = sentence([0, 1, 1])
    _, c = expected_counts(s, t, ModelKind.SIBLING)
    h = 1e-5
    for idx in [(0, 0, 1, 1, 1), (1, 2, 0, 0, 1), (1, 0, 1, 1, 0)]:
        old = t.child[idx]
        t.child[idx] = old + h
        up = inside(s, t, ModelKind.SIBLING)
        t.child[idx] = old - h
        down = inside(s, t, ModelKind.SIBLING)
        t.child[idx] = old
        assert (up - down) / (2 * h) == pytest.approx(c.child[idx], rel=1e-4, abs=1e-9)


def test_update_counts():
    for kind in KINDS:
        assert dp_update_count(1, kind) == 0
        for n in range(1, 7):
            assert instrumented_steps(n, kind) == dp_update_count(n, kind)
    assert 6 <= dp_update_count(8, "first") / dp_update_count(4, "first") <= 10
    assert 12 <= dp_update_count(8, "sibling") / dp_update_count(4, "sibling") <= 20
