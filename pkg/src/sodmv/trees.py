"""Projective trees and the rule derivation the generative story assigns to one.

Positions are 1-based; head 0 is the imaginary root. Children of a head are
generated from the outside in: the farthest child in a direction first.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .grammar import Decision, Direction, GrammarError, Order, RuleTables, Valence


def is_projective_single_root(heads: Sequence[int]) -> bool:
    heads = [int(h) for h in heads]
    n = len(heads)
    if n == 0 or sum(1 for h in heads if h == 0) != 1:
        return False
    if any(h < 0 or h > n or h == i + 1 for i, h in enumerate(heads)):
        return False
    # every token must reach the root without a cycle
    for i in range(1, n + 1):
        seen = set()
        k = i
        while k != 0:
            if k in seen:
                return False
            seen.add(k)
            k = heads[k - 1]
    arcs = [(min(i + 1, h), max(i + 1, h)) for i, h in enumerate(heads) if h != 0]
    root = heads.index(0) + 1
    for a, b in arcs:
        if a < root < b:
            return False
        for c, d in arcs:
            if a < c < b < d:
                return False
    return True


@lru_cache(maxsize=None)
def _spans(i: int, j: int) -> tuple:
    """All (head, arcs) projective trees over positions i..j."""
    out = []
    for h in range(i, j + 1):
        for left in _sequences(i, h - 1):
            for right in _sequences(h + 1, j):
                arcs = tuple((r, h) for r, _ in left + right)
                for _, sub in left + right:
                    arcs += sub
                out.append((h, arcs))
    return tuple(out)


@lru_cache(maxsize=None)
def _sequences(i: int, j: int) -> tuple:
    """Ordered lists of adjacent subtrees covering i..j."""
    if i > j:
        return ((),)
    out = []
    for k in range(i, j + 1):
        for first in _spans(i, k):
            for rest in _sequences(k + 1, j):
                out.append((first,) + rest)
    return tuple(out)


def projective_trees(n: int) -> Iterator[tuple[int, ...]]:
    """Head vectors of every projective tree whose root has exactly one child."""
    for root, arcs in _spans(1, n):
        heads = [0] * n
        for dep, head in arcs:
            heads[dep - 1] = head
        heads[root - 1] = 0
        yield tuple(heads)


def children(heads: Sequence[int], head: int) -> tuple[list[int], list[int]]:
    """(left, right) dependents of ``head`` in generation order (farthest first)."""
    left = [i + 1 for i, h in enumerate(heads) if h == head and i + 1 < head]
    right = [i + 1 for i, h in enumerate(heads) if h == head and i + 1 > head]
    return left, right[::-1]


def derivation(heads: Sequence[int], order: Order) -> list[tuple]:
    """Rule applications of a tree, in generation order.

    Items are ``("root", c)``, ``("decision", h, x, dir, val, dec)`` and
    ``("child", h, x, dir, val, c)`` where ``x`` is the extra position
    (0 for NULL sibling, the imaginary root, or first-order models).
    """
    heads = [int(h) for h in heads]
    if not is_projective_single_root(heads):
        raise GrammarError(f"not a projective single-root tree: {heads}")
    n = len(heads)
    rules: list[tuple] = [("root", heads.index(0) + 1)]
    for h in range(1, n + 1):
        left, right = children(heads, h)
        for d, kids in ((Direction.LEFT, left), (Direction.RIGHT, right)):
            sib = 0
            val = Valence.NOCHILD
            for c in kids:
                x = _extra(order, heads, h, sib)
                rules.append(("decision", h, x, int(d), int(val), int(Decision.CONTINUE)))
                rules.append(("child", h, x, int(d), int(val), c))
                sib = c
                val = Valence.HASCHILD
            x = _extra(order, heads, h, sib)
            rules.append(("decision", h, x, int(d), int(val), int(Decision.STOP)))
    return rules


def _extra(order: Order, heads: list[int], h: int, sib: int) -> int:
    if order is Order.SECOND_SIBLING:
        return sib
    if order is Order.SECOND_GRAND:
        return heads[h - 1]
    return 0


def _extra_id(order: Order, ids: np.ndarray, x: int) -> int:
    if order is Order.FIRST or x == 0:
        return 0
    return int(ids[x - 1]) + 1


def rule_indices(heads: Sequence[int], ids: np.ndarray, order: Order) -> list[tuple[str, tuple]]:
    """Derivation mapped to table indices for the token ids of a sentence."""
    out = []
    for rule in derivation(heads, order):
        if rule[0] == "root":
            out.append(("root", (int(ids[rule[1] - 1]),)))
        elif rule[0] == "decision":
            _, h, x, d, v, a = rule
            out.append(("decision", (int(ids[h - 1]), _extra_id(order, ids, x), d, v, a)))
        else:
            _, h, x, d, v, c = rule
            out.append(("child", (int(ids[h - 1]), _extra_id(order, ids, x), d, v, int(ids[c - 1]))))
    return out


def tree_log_prob(tables: RuleTables, ids: np.ndarray, heads: Sequence[int]) -> float:
    """log p(x, z): sum of the log-probabilities of the rules the tree uses."""
    total = 0.0
    for name, idx in rule_indices(heads, ids, tables.order):
        total += float(getattr(tables, name)[idx])
    return total


def add_tree_counts(counts, tables_order: Order, ids: np.ndarray, heads: Sequence[int], weight: float = 1.0) -> None:
    """Accumulate c(r, x, z) into an object with ``root``/``child``/``decision`` arrays."""
    for name, idx in rule_indices(heads, ids, tables_order):
        getattr(counts, name)[idx] += weight


@lru_cache(maxsize=None)
def _n_trees(m: int) -> int:
    """Projective trees with a single head over ``m`` tokens."""
    return sum(_n_seqs(h) * _n_seqs(m - 1 - h) for h in range(m))


@lru_cache(maxsize=None)
def _n_seqs(m: int) -> int:
    """Ordered sequences of adjacent trees covering ``m`` tokens."""
    if m == 0:
        return 1
    return sum(_n_trees(k) * _n_seqs(m - k) for k in range(1, m + 1))


def _pick(weights: list[int], rng: np.random.Generator) -> int:
    total = sum(weights)
    u = rng.random()
    acc = 0
    for i, w in enumerate(weights):
        acc += w
        if u * total < acc:
            return i
    return len(weights) - 1


def random_projective_tree(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the projective trees whose root has exactly one child."""
    heads = np.zeros(n, dtype=np.int64)

    def tree(i: int, j: int, parent: int) -> None:
        m = j - i + 1
        h = i + _pick([_n_seqs(k) * _n_seqs(m - 1 - k) for k in range(m)], rng)
        heads[h - 1] = parent
        seq(i, h - 1, h)
        seq(h + 1, j, h)

    def seq(i: int, j: int, parent: int) -> None:
        while i <= j:
            m = j - i + 1
            k = 1 + _pick([_n_trees(k) * _n_seqs(m - k) for k in range(1, m + 1)], rng)
            tree(i, i + k - 1, parent)
            i += k

    tree(1, n, 0)
    return heads
