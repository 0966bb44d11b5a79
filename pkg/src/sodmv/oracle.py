"""Exhaustive enumeration over projective trees.

Slow and exact: every tree is scored by walking the generative story, with
no chart involved. Used to check the dynamic programs on short sentences.
"""

from __future__ import annotations

import numpy as np

from .chart import ExpectedCounts, JointCounts, JointTables, ModelKind, ParseTree, _structure
from .grammar import GrammarError, RuleTables, Sentence
from .trees import add_tree_counts, projective_trees, tree_log_prob

MAX_ENUMERATION_LENGTH = 8


def _score_fns(sentence: Sentence, model, kind: ModelKind):
    _, tables_list = _structure(model, kind)
    parts = []
    for t in tables_list:
        ids = sentence.ids(t.lexical)
        if ids.max() >= t.vocab_size:
            raise GrammarError(f"token id out of vocab range (vocab size {t.vocab_size})")
        parts.append((t, ids))
    return parts


def enumerate_trees(sentence: Sentence, model, kind: ModelKind | str):
    """Return (log-partition, best tree, expected counts) by brute force.

    Ties on the best score keep the first tree met in enumeration order.
    """
    kind = ModelKind(kind)
    n = len(sentence)
    if n > MAX_ENUMERATION_LENGTH:
        raise GrammarError(f"enumeration limit: n={n} > {MAX_ENUMERATION_LENGTH}")
    parts = _score_fns(sentence, model, kind)
    trees = list(projective_trees(n))
    scores = np.array([sum(tree_log_prob(t, ids, heads) for t, ids in parts) for heads in trees])
    m = scores.max()
    log_z = float(m + np.log(np.exp(scores - m).sum()))
    best = int(np.argmax(scores))
    posterior = np.exp(scores - log_z)

    totals = [ExpectedCounts.zeros_like(t) for t, _ in parts]
    for heads, p in zip(trees, posterior):
        for total, (t, ids) in zip(totals, parts):
            add_tree_counts(total, t.order, ids, heads, p)
    counts = JointCounts(*totals) if kind is ModelKind.JOINT else totals[0]
    return log_z, ParseTree(np.array(trees[best]), float(scores[best])), counts


def tree_score(sentence: Sentence, model, kind: ModelKind | str, heads) -> float:
    """Joint log-score of one given tree under a model (sum of both models for JOINT)."""
    parts = _score_fns(sentence, model, ModelKind(kind))
    return sum(tree_log_prob(t, ids, heads) for t, ids in parts)


def count_trees(n: int) -> int:
    return sum(1 for _ in projective_trees(n))


__all__ = ["enumerate_trees", "tree_score", "count_trees", "MAX_ENUMERATION_LENGTH", "JointTables", "RuleTables"]
