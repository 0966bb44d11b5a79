import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sodmv.grammar import GrammarError, Order
from sodmv.trees import derivation, is_projective_single_root, projective_trees, random_projective_tree


def test_tree_counts():
    assert [sum(1 for _ in projective_trees(n)) for n in range(1, 7)] == [1, 2, 7, 30, 143, 728]


def test_n2_trees():
    assert set(projective_trees(2)) == {(0, 1), (2, 0)}


def test_enumerated_trees_are_valid_and_distinct():
    trees = list(projective_trees(5))
    assert len(set(trees)) == len(trees)
    assert all(is_projective_single_root(t) for t in trees)


def test_projectivity_checks():
    assert not is_projective_single_root([0, 0])
    assert not is_projective_single_root([3, 0, 1, 2][:3])  # 1->3->1 cycle
    assert not is_projective_single_root([0, 4, 1, 1])  # crossing arcs
    assert is_projective_single_root([2, 0, 2])


def test_derivation_outside_in():
    # head 1 has right children 2 and 3; 3 is farther so it comes first
    rules = derivation([0, 1, 1], Order.SECOND_SIBLING)
    kids = [r for r in rules if r[0] == "child" and r[1] == 1]
    assert [r[-1] for r in kids] == [3, 2]
    assert kids[0][2] == 0 and kids[1][2] == 3  # sibling slot: NULL, then the previous child


def test_derivation_rejects_bad_tree():
    with pytest.raises(GrammarError):
        derivation([0, 0], Order.FIRST)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31))
def test_random_tree_is_projective(n, seed):
    heads = random_projective_tree(n, np.random.default_rng(seed))
    assert is_projective_single_root(heads)
