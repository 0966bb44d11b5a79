"""Inside, Viterbi and expected-count computation over v-span charts.

One chart engine serves the four model kinds. Cells are indexed
``[batch, extra, head, end, valence]`` where ``extra`` is 0 for NULL/ROOT and
``k + 1`` for the token at (0-based) position ``k``:

* FIRST   - no extra token, the axis has size one.
* GRAND   - the extra token is the head's parent.
* SIBLING - the extra token is the previously generated (outer) child;
            NULL pairs with NOCHILD and any sibling with HASCHILD.
* JOINT   - a first-order lexical model and a structural model score the
            same tree; the chart takes the structural model's shape.

A complete span ``C[x; h, e, v]`` holds the decisions of head ``h`` from the
outermost one (made at valence ``v``) inwards; ``I[x; h, c, v]`` additionally
covers the arc ``h -> c`` to the outermost remaining child ``c``.

Expected counts are the gradient of the log-partition with respect to the
log rule scores. The backward pass walks the combination steps of the
forward pass in reverse order, recomputing each step's terms from the
filled chart, so there is no separate outside recursion to maintain.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grammar import NEG_INF, Decision, Direction, GrammarError, Order, RuleTables, Sentence, Valence

L, R = int(Direction.LEFT), int(Direction.RIGHT)
HAS, NOCH = int(Valence.HASCHILD), int(Valence.NOCHILD)
STOP, CONT = int(Decision.STOP), int(Decision.CONTINUE)


class ModelKind(enum.Enum):
    FIRST = "first"
    SIBLING = "sibling"
    GRAND = "grand"
    JOINT = "joint"


_KIND_ORDER = {ModelKind.FIRST: Order.FIRST, ModelKind.SIBLING: Order.SECOND_SIBLING, ModelKind.GRAND: Order.SECOND_GRAND}
_ORDER_KIND = {v: k for k, v in _KIND_ORDER.items()}


def kind_for_order(order: Order) -> ModelKind:
    return _ORDER_KIND[order]


@dataclass(frozen=True)
class JointTables:
    """Agreement model: first-order lexical tables plus structural tables."""

    lexical: RuleTables
    structural: RuleTables


@dataclass
class ParseTree:
    heads: np.ndarray
    log_score: float

    def __post_init__(self):
        self.heads = np.asarray(self.heads, dtype=np.int64)


@dataclass
class ExpectedCounts:
    root: np.ndarray
    child: np.ndarray
    decision: np.ndarray

    @classmethod
    def zeros_like(cls, tables: RuleTables) -> "ExpectedCounts":
        return cls(np.zeros_like(tables.root), np.zeros_like(tables.child), np.zeros_like(tables.decision))

    def dot(self, tables: RuleTables) -> float:
        """sum_r count(r) * log p(r)"""
        return float(
            np.sum(self.root * tables.root) + np.sum(self.child * tables.child) + np.sum(self.decision * tables.decision)
        )

    def scaled(self, factor: float) -> "ExpectedCounts":
        return ExpectedCounts(self.root * factor, self.child * factor, self.decision * factor)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.root, self.child, self.decision

    def copy(self) -> "ExpectedCounts":
        return ExpectedCounts(self.root.copy(), self.child.copy(), self.decision.copy())


@dataclass
class JointCounts:
    lexical: ExpectedCounts
    structural: ExpectedCounts


# -- model plumbing ---------------------------------------------------------


def _structure(model, kind: ModelKind) -> tuple[ModelKind, list[RuleTables]]:
    """Chart shape and the list of scoring tables, after consistency checks."""
    if kind is ModelKind.JOINT:
        if not isinstance(model, JointTables):
            raise GrammarError("JOINT kind requires JointTables")
        if model.lexical.order is not Order.FIRST:
            raise GrammarError("the lexical model of a joint pair must be first-order")
        for t in (model.lexical, model.structural):
            t.check_shapes()
        return _ORDER_KIND[model.structural.order], [model.lexical, model.structural]
    if not isinstance(model, RuleTables):
        raise GrammarError(f"{kind.value} kind requires RuleTables")
    if model.order is not _KIND_ORDER[kind]:
        raise GrammarError(f"kind {kind.value} does not match {model.order.value}-order tables")
    model.check_shapes()
    return kind, [model]


def _ids(sentences: Sequence[Sentence], tables: RuleTables) -> np.ndarray:
    ids = np.stack([s.ids(tables.lexical) for s in sentences])
    if ids.min() < 0 or ids.max() >= tables.vocab_size:
        raise GrammarError(f"token id out of vocab range (vocab size {tables.vocab_size})")
    return ids


def _extra_ids(ids: np.ndarray, order: Order) -> np.ndarray:
    if order is Order.FIRST:
        return np.zeros((ids.shape[0], 1), dtype=np.int64)
    return np.concatenate([np.zeros((ids.shape[0], 1), dtype=np.int64), ids + 1], axis=1)


@dataclass
class _Gathered:
    """Log rule scores laid out by sentence position."""

    root: np.ndarray  # [b, c]
    dec: np.ndarray  # [b, h, x, d, v, a]
    child: np.ndarray  # [b, h, c, x, d, v]


def _gather(tables: RuleTables, ids: np.ndarray) -> _Gathered:
    xid = _extra_ids(ids, tables.order)
    root = tables.root[ids]
    dec = tables.decision[ids[:, :, None], xid[:, None, :]]
    child = tables.child[ids[:, :, None, None], xid[:, None, None, :], :, :, ids[:, None, :, None]]
    return _Gathered(root, dec, child)


def _scatter(tables: RuleTables, ids: np.ndarray, g: _Gathered) -> ExpectedCounts:
    """Sum position-level gradients into table-shaped counts (inverse of ``_gather``)."""
    V = tables.vocab_size
    xid = _extra_ids(ids, tables.order)
    X = tables.decision.shape[1]
    dec = g.dec
    child = g.child
    if xid.shape[1] == 1 and dec.shape[2] != 1:
        dec = dec.sum(axis=2, keepdims=True)
        child = child.sum(axis=3, keepdims=True)
    B, n = ids.shape
    root = np.bincount(ids.ravel(), weights=g.root.ravel(), minlength=V).astype(np.float64)

    base = (ids[:, :, None] * X + xid[:, None, :]) * 8  # [b, h, x]
    flat = base[..., None, None, None] + np.arange(8).reshape(2, 2, 2)
    decision = np.bincount(flat.ravel(), weights=dec.ravel(), minlength=V * X * 8).reshape(V, X, 2, 2, 2)

    px = ids[:, :, None, None] * X + xid[:, None, None, :]  # [b, h, 1, x]
    dv = np.arange(4).reshape(2, 2)
    flat = (px[..., None, None] * 4 + dv) * V + ids[:, None, :, None, None, None]
    flat = np.broadcast_to(flat, child.shape)
    child_counts = np.bincount(flat.ravel(), weights=child.ravel(), minlength=V * X * 4 * V).reshape(V, X, 2, 2, V)
    return ExpectedCounts(root, child_counts, decision)


def _combined_scores(tables_list: list[RuleTables], ids_list: list[np.ndarray]) -> _Gathered:
    parts = [_gather(t, i) for t, i in zip(tables_list, ids_list)]
    out = parts[-1]
    for p in parts[:-1]:
        out = _Gathered(out.root + p.root, out.dec + p.dec, out.child + p.child)
    return out


# -- validity masks and operation counts ---------------------------------------


def _masks(kind: ModelKind, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Valid (extra, valence) combinations for right and left spans: [x, h, e, v]."""
    X = 1 if kind is ModelKind.FIRST else n + 1
    pos = np.arange(n)
    h = pos[:, None]
    e = pos[None, :]
    xp = (np.arange(X) - 1)[:, None, None]  # position of the extra token, -1 for NULL/ROOT
    if kind is ModelKind.FIRST:
        m = np.ones((1, n, n, 2), dtype=bool)
        return m, m.copy()
    if kind is ModelKind.GRAND:
        lo, hi = np.minimum(h, e), np.maximum(h, e)
        ok = (xp < 0) | (xp < lo) | (xp > hi)
        m = np.repeat(ok[..., None], 2, axis=-1)
        return m, m.copy()
    is_null = np.broadcast_to(xp < 0, (X, n, n))
    right = np.stack([~is_null & (xp > e), is_null], axis=-1)  # v = HAS, NOCH
    left = np.stack([~is_null & (xp < e), is_null], axis=-1)
    return right, left


def dp_update_count(n: int, kind: ModelKind | str, structural: ModelKind | str = ModelKind.SIBLING) -> int:
    """Binary combination steps performed by the inside recursion for length ``n``.

    Each valid chart cell of width ``w`` combines ``w`` pairs of sub-spans.
    ``structural`` picks the chart shape for JOINT (sibling by default).
    """
    kind = ModelKind(kind)
    if n < 1:
        raise GrammarError("n must be >= 1")
    if kind is ModelKind.JOINT:
        kind = ModelKind(structural)
    if kind is ModelKind.FIRST:
        return 4 * n * (n * n - 1) // 3
    if kind is ModelKind.GRAND:
        return 2 * n * n * (n * n - 1) // 3
    return n * (n * n - 1) * (n + 2) // 6


# -- semirings ------------------------------------------------------------------


def _aggregate(terms: np.ndarray, axis: int, semiring: str) -> np.ndarray:
    if semiring == "max":
        return terms.max(axis=axis)
    m = terms.max(axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.exp(terms - m).sum(axis=axis))


def _weights(terms: np.ndarray, out: np.ndarray, axis: int, semiring: str) -> np.ndarray:
    """d out / d terms for an aggregation along ``axis``."""
    if semiring == "max":
        idx = np.expand_dims(np.argmax(terms, axis=axis), axis)
        w = np.zeros_like(terms)
        np.put_along_axis(w, idx, 1.0, axis=axis)
        return w
    return np.exp(terms - np.expand_dims(out, axis))


class _Chart:
    """Batched chart over sentences of equal length ``n``."""

    def __init__(self, scores: _Gathered, kind: ModelKind, semiring: str = "log"):
        self.s = scores
        self.kind = kind
        self.semiring = semiring
        B, n = scores.root.shape
        self.B, self.n = B, n
        self.X = 1 if kind is ModelKind.FIRST else n + 1
        if scores.dec.shape[2] != self.X:
            # first-order tables in a second-order chart
            self.s = _Gathered(
                scores.root,
                np.broadcast_to(scores.dec, (B, n, self.X, 2, 2, 2)),
                np.broadcast_to(scores.child, (B, n, n, self.X, 2, 2)),
            )
        # per-direction views with plain slicing: [b, h, x, v] and [b, h, c, x, v]
        self.stop = [self.s.dec[:, :, :, d, :, STOP] for d in (L, R)]
        self.cont = [self.s.dec[:, :, :, d, :, CONT] for d in (L, R)]
        self.arc = [self.s.child[:, :, :, :, d, :] for d in (L, R)]
        self.mask_r, self.mask_l = _masks(kind, n)
        shape = (B, self.X, n, n, 2)
        self.CR = np.full(shape, NEG_INF)
        self.CL = np.full(shape, NEG_INF)
        self.IR = np.full(shape, NEG_INF)
        self.IL = np.full(shape, NEG_INF)
        self.steps = 0
        self.log_z = None

    # index helpers: which extra slot the remaining inner span and a new child's span use
    def _inner_x(self, c):
        if self.kind is ModelKind.SIBLING:
            return c + 1
        return None  # same as the cell (GRAND) or slot 0 (FIRST)

    def _child_x(self, h):
        return h + 1 if self.kind is ModelKind.GRAND else 0

    def _inner(self, arr, head, r, c):
        """Remaining span of ``head`` at valence HASCHILD: [b, x|1, H, K]."""
        if self.kind is ModelKind.SIBLING:
            return arr[:, c + 1, head, r, HAS][:, None]
        if self.kind is ModelKind.GRAND:
            return arr[:, :, head, r, HAS]
        return arr[:, 0:1, head, r, HAS]

    def _inner_add(self, garr, head, r, c, g):
        if self.kind is ModelKind.SIBLING:
            garr[:, c + 1, head, r, HAS] += g[:, 0]
        elif self.kind is ModelKind.GRAND:
            garr[:, :, head, r, HAS] += g
        else:
            garr[:, 0:1, head, r, HAS] += g

    # -- forward -------------------------------------------------------------
    def forward(self) -> np.ndarray:
        s, n = self.s, self.n
        ar = np.arange(n)
        for arr, d, mask in ((self.CR, R, self.mask_r), (self.CL, L, self.mask_l)):
            base = np.moveaxis(self.stop[d], 1, 2)  # [b, x, h, v]
            arr[:, :, ar, ar, :] = np.where(mask[:, ar, ar, :], base, NEG_INF)
        for w in range(1, n):
            self._incomplete(w, R)
            self._incomplete(w, L)
            self._complete(w, R)
            self._complete(w, L)
        self.log_z = self._root_terms_aggregate()
        return self.log_z

    def _incomplete_terms(self, w: int, d: int):
        n = self.n
        k = np.arange(w)
        if d == R:
            head = np.arange(n - w)
            dep = head + w
            r = head[:, None] + k
            hh, cc = head[:, None], dep[:, None]
            inner = self._inner(self.CR, hh, r, cc)
            chx = hh + 1 if self.kind is ModelKind.GRAND else 0
            kid = self.CL[:, chx, cc, r + 1, NOCH][:, None]
            return head, dep, r, inner + kid
        dep = np.arange(n - w)
        head = dep + w
        r = dep[:, None] + k
        hh, cc = head[:, None], dep[:, None]
        chx = hh + 1 if self.kind is ModelKind.GRAND else 0
        kid = self.CR[:, chx, cc, r, NOCH][:, None]
        inner = self._inner(self.CL, hh, r + 1, cc)
        return head, dep, r, inner + kid

    def _incomplete(self, w: int, d: int) -> None:
        head, dep, r, terms = self._incomplete_terms(w, d)
        agg = _aggregate(terms, 3, self.semiring)  # [b, x|1, H]
        rule = np.moveaxis(self.cont[d][:, head] + self.arc[d][:, head, dep], 1, 2)
        mask = (self.mask_r if d == R else self.mask_l)[:, head, dep, :]
        out = self.IR if d == R else self.IL
        out[:, :, head, dep, :] = np.where(mask, agg[..., None] + rule, NEG_INF)
        self.steps += int(mask.sum()) * w

    def _complete_terms(self, w: int, d: int):
        n = self.n
        k = np.arange(w)
        if d == R:
            head = np.arange(n - w)
            end = head + w
            dep = head[:, None] + 1 + k
            inc, comp = self.IR, self.CR
        else:
            end = np.arange(n - w)
            head = end + w
            dep = end[:, None] + k
            inc, comp = self.IL, self.CL
        hh, ee = head[:, None], end[:, None]
        chx = hh + 1 if self.kind is ModelKind.GRAND else 0
        kid = comp[:, chx, dep, ee, NOCH]  # [b, H, K]
        terms = inc[:, :, hh, dep, :] + kid[:, None, :, :, None]
        return head, end, dep, chx, terms

    def _complete(self, w: int, d: int) -> None:
        head, end, dep, chx, terms = self._complete_terms(w, d)
        agg = _aggregate(terms, 3, self.semiring)  # [b, x, H, v]
        mask = (self.mask_r if d == R else self.mask_l)[:, head, end, :]
        out = self.CR if d == R else self.CL
        out[:, :, head, end, :] = np.where(mask, agg, NEG_INF)
        self.steps += int(mask.sum()) * w

    def _root_terms(self) -> np.ndarray:
        n = self.n
        ar = np.arange(n)
        return self.s.root + self.CL[:, 0, ar, 0, NOCH] + self.CR[:, 0, ar, n - 1, NOCH]

    def _root_terms_aggregate(self) -> np.ndarray:
        return _aggregate(self._root_terms(), 1, self.semiring)

    # -- backward ------------------------------------------------------------
    def backward(self, grad_out: np.ndarray | None = None) -> _Gathered:
        """Gradient of sum_b grad_out[b] * log_z[b] w.r.t. the gathered rule scores."""
        n = self.n
        grad_out = np.ones(self.B) if grad_out is None else np.asarray(grad_out, dtype=np.float64)
        self.gCR = np.zeros_like(self.CR)
        self.gCL = np.zeros_like(self.CL)
        self.gIR = np.zeros_like(self.IR)
        self.gIL = np.zeros_like(self.IL)
        self.g_stop = [np.zeros((self.B, n, self.X, 2)) for _ in (L, R)]
        self.g_cont = [np.zeros((self.B, n, self.X, 2)) for _ in (L, R)]
        self.g_arc = [np.zeros((self.B, n, n, self.X, 2)) for _ in (L, R)]

        terms = self._root_terms()
        wts = _weights(terms, self.log_z, 1, self.semiring) * grad_out[:, None]
        g_root = wts
        ar = np.arange(n)
        self.gCL[:, 0, ar, 0, NOCH] += wts
        self.gCR[:, 0, ar, n - 1, NOCH] += wts

        for w in range(n - 1, 0, -1):
            self._complete_back(w, L)
            self._complete_back(w, R)
            self._incomplete_back(w, L)
            self._incomplete_back(w, R)

        for garr, d, mask in ((self.gCR, R, self.mask_r), (self.gCL, L, self.mask_l)):
            g = np.where(mask[:, ar, ar, :], garr[:, :, ar, ar, :], 0.0)
            self.g_stop[d][:, ar] += np.moveaxis(g, 2, 1)
        g_dec = np.stack([np.stack([self.g_stop[d], self.g_cont[d]], axis=-1) for d in (L, R)], axis=3)
        g_child = np.stack(self.g_arc, axis=4)
        return _Gathered(g_root, g_dec, g_child)

    def _complete_back(self, w: int, d: int) -> None:
        head, end, dep, chx, terms = self._complete_terms(w, d)
        gcomp, ginc = (self.gCR, self.gIR) if d == R else (self.gCL, self.gIL)
        mask = (self.mask_r if d == R else self.mask_l)[:, head, end, :]
        g = np.where(mask, gcomp[:, :, head, end, :], 0.0)  # [b, x, H, v]
        gt = _weights(terms, _aggregate(terms, 3, self.semiring), 3, self.semiring) * g[:, :, :, None, :]
        hh, ee = head[:, None], end[:, None]
        ginc[:, :, hh, dep, :] += gt
        gcomp[:, chx, dep, ee, NOCH] += gt.sum(axis=(1, 4))

    def _incomplete_back(self, w: int, d: int) -> None:
        head, dep, r, terms = self._incomplete_terms(w, d)
        ginc = self.gIR if d == R else self.gIL
        mask = (self.mask_r if d == R else self.mask_l)[:, head, dep, :]
        g = np.where(mask, ginc[:, :, head, dep, :], 0.0)  # [b, x, H, v]
        self.g_cont[d][:, head] += np.moveaxis(g, 1, 2)
        self.g_arc[d][:, head, dep] += np.moveaxis(g, 1, 2)
        g_agg = g.sum(axis=-1)  # [b, x, H]
        if terms.shape[1] == 1:
            g_agg = g_agg.sum(axis=1, keepdims=True)
        agg = _aggregate(terms, 3, self.semiring)
        gt = _weights(terms, agg, 3, self.semiring) * g_agg[..., None]  # [b, x|1, H, K]
        hh, cc = head[:, None], dep[:, None]
        chx = hh + 1 if self.kind is ModelKind.GRAND else 0
        if d == R:
            self._inner_add(self.gCR, hh, r, cc, gt)
            self.gCL[:, chx, cc, r + 1, NOCH] += gt.sum(axis=1)
        else:
            self.gCR[:, chx, cc, r, NOCH] += gt.sum(axis=1)
            self._inner_add(self.gCL, hh, r + 1, cc, gt)


# -- public operations ------------------------------------------------------------


def _groups(sentences: Sequence[Sentence]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(sentences):
        groups.setdefault(len(s), []).append(i)
    return dict(sorted(groups.items()))


def _run(sentences, model, kind, semiring, want_grad, grad_weights=None):
    kind = ModelKind(kind)
    chart_kind, tables_list = _structure(model, kind)
    results = []
    for n, idx in _groups(sentences).items():
        group = [sentences[i] for i in idx]
        ids_list = [_ids(group, t) for t in tables_list]
        chart = _Chart(_combined_scores(tables_list, ids_list), chart_kind, semiring)
        log_z = chart.forward()
        grads = None
        if want_grad:
            gw = None if grad_weights is None else np.asarray(grad_weights, dtype=np.float64)[idx]
            grads = chart.backward(gw)
        results.append((idx, ids_list, chart, log_z, grads))
    return tables_list, results


def inside_batch(sentences: Sequence[Sentence], model, kind: ModelKind | str) -> np.ndarray:
    """log p(x) for each sentence (log of the summed tree-product score for JOINT)."""
    _, results = _run(sentences, model, kind, "log", False)
    out = np.zeros(len(sentences))
    for idx, _, _, log_z, _ in results:
        out[idx] = log_z
    return out


def inside(sentence: Sentence, model, kind: ModelKind | str) -> float:
    return float(inside_batch([sentence], model, kind)[0])


def expected_counts_batch(
    sentences: Sequence[Sentence], model, kind: ModelKind | str, weights: Sequence[float] | None = None
):
    """Per-sentence log-likelihoods and the (optionally weighted) sum of expected rule counts.

    For JOINT the counts come back as :class:`JointCounts`, both halves taken
    from the shared product posterior.
    """
    tables_list, results = _run(sentences, model, kind, "log", True, weights)
    totals = [ExpectedCounts.zeros_like(t) for t in tables_list]
    log_z_all = np.zeros(len(sentences))
    for idx, ids_list, _, log_z, grads in results:
        log_z_all[idx] = log_z
        for total, t, ids in zip(totals, tables_list, ids_list):
            c = _scatter(t, ids, grads)
            total.root += c.root
            total.child += c.child
            total.decision += c.decision
    if ModelKind(kind) is ModelKind.JOINT:
        return log_z_all, JointCounts(totals[0], totals[1])
    return log_z_all, totals[0]


def expected_counts(sentence: Sentence, model, kind: ModelKind | str):
    log_z, counts = expected_counts_batch([sentence], model, kind)
    return float(log_z[0]), counts


def viterbi_batch(sentences: Sequence[Sentence], model, kind: ModelKind | str) -> list[ParseTree]:
    """Highest-scoring trees; the arcs are read off the gradient of the max score."""
    _, results = _run(sentences, model, kind, "max", True)
    trees: list[ParseTree | None] = [None] * len(sentences)
    for idx, _, chart, log_z, grads in results:
        n = chart.n
        used = grads.child.sum(axis=(3, 4, 5))  # [b, h, c]
        for b, i in enumerate(idx):
            heads = np.zeros(n, dtype=np.int64)
            hs, cs = np.nonzero(used[b] > 0.5)
            heads[cs] = hs + 1
            heads[int(np.argmax(grads.root[b]))] = 0
            trees[i] = ParseTree(heads, float(log_z[b]))
    return trees


def viterbi_parse(sentence: Sentence, model, kind: ModelKind | str) -> ParseTree:
    return viterbi_batch([sentence], model, kind)[0]


def instrumented_steps(n: int, kind: ModelKind | str) -> int:
    """Run the recursion on a dummy length-``n`` sentence and return its step counter."""
    kind = ModelKind(kind)
    chart_kind = ModelKind.SIBLING if kind is ModelKind.JOINT else kind
    X = 1 if chart_kind is ModelKind.FIRST else n + 1
    scores = _Gathered(np.zeros((1, n)), np.zeros((1, n, X, 2, 2, 2)), np.zeros((1, n, n, X, 2, 2)))
    chart = _Chart(scores, chart_kind)
    chart.forward()
    return chart.steps
