"""Neural computation of rule tables, with a hand-written backward pass.

Every token is embedded, projected into a parent / child / extra-token role,
passed through a valence MLP and a direction MLP (both with skip connections
from the role embedding) and a final output MLP. Rule scores are decomposed
trilinear products of the three hidden vectors; a softmax over the outcome
axis gives each conditional distribution.

Decision outcomes (STOP, CONTINUE) and the root symbol have their own input
embeddings and run through the same MLP stack. The root rule and first-order
models fill the extra-token slot of the trilinear product with a learned
constant hidden vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grammar import GrammarError, Order, RuleTables, Vocab, extra_size, log_normalize

VALENCES = (0, 1)
DIRECTIONS = (0, 1)
ROOT_BRANCH = (1, 1)  # (NOCHILD, RIGHT): the root's only child


@dataclass(frozen=True)
class DimConfig:
    d_pos: int = 100
    d_word: int = 0
    d_hidden: int = 100
    q_child: int = 30
    q_decision: int = 10
    dropout: float = 0.0
    use_skip_connections: bool = True
    deep_output_mlp: bool = False
    init_range: float = 0.1
    embedding_range: float = 1.0

    @classmethod
    def unlexicalized(cls, **kw) -> "DimConfig":
        return cls(**kw)

    @classmethod
    def lexicalized(cls, **kw) -> "DimConfig":
        base = dict(d_pos=100, d_word=100, d_hidden=200, q_child=150, q_decision=50, dropout=0.5)
        base.update(kw)
        return cls(**base)

    @property
    def d_emb(self) -> int:
        return self.d_pos + self.d_word

    def validate(self) -> None:
        if min(self.d_pos, self.d_hidden, self.q_child, self.q_decision) <= 0 or self.d_word < 0:
            raise GrammarError("all dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise GrammarError("dropout must lie in [0, 1)")


@dataclass
class NeuralParams:
    dims: DimConfig
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def use_skip_connections(self) -> bool:
        return self.dims.use_skip_connections

    @property
    def deep_output_mlp(self) -> bool:
        return self.dims.deep_output_mlp

    @property
    def dropout_rate(self) -> float:
        return self.dims.dropout

    def copy(self) -> "NeuralParams":
        return NeuralParams(self.dims, {k: v.copy() for k, v in self.weights.items()})

    def with_dims(self, **kw) -> "NeuralParams":
        return NeuralParams(replace(self.dims, **kw), self.weights)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.weights[name]


def _shapes(dims: DimConfig, vocab: Vocab) -> dict[str, tuple]:
    d, e = dims.d_hidden, dims.d_emb
    shapes = {
        "pos_embedding": (len(vocab.pos_symbols), dims.d_pos),
        "null_embedding": (e,),
        "W_c": (d, e),
        "W_p": (d, e),
        "W_s": (d, e),
        "W_val": (2, d, d),
        "W_1": (d, d),
        "W_dir": (2, d, d),
        "W_2": (d, d),
        "W_3": (d, d),
        "W_4": (d, d),
        "x_dec": (2, e),
        "W_dec": (d, e),
        "x_root": (e,),
        "W_root": (d, e),
        "slot": (d,),
    }
    if dims.d_word:
        if not vocab.lexicalized:
            raise GrammarError("word embeddings need a lexicalized vocabulary")
        shapes["word_embedding"] = (vocab.size, dims.d_word)
    if dims.deep_output_mlp:
        shapes["W_5"] = (d, d)
        shapes["W_6"] = (d, d)
    for rule, q in (("child", dims.q_child), ("root", dims.q_child), ("dec", dims.q_decision)):
        for role in ("p", "s", "c"):
            shapes[f"C{role}_{rule}"] = (q, d)
    return shapes


def init_params(seed: int, dims: DimConfig, vocab: Vocab) -> NeuralParams:
    """Uniform initialization; embeddings in +-embedding_range, everything else in +-init_range."""
    dims.validate()
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in _shapes(dims, vocab).items():
        r = dims.embedding_range if name.endswith("embedding") or name.startswith("x_") else dims.init_range
        weights[name] = rng.uniform(-r, r, size=shape)
    return NeuralParams(dims, weights)


def check_params(params: NeuralParams, vocab: Vocab) -> None:
    expected = _shapes(params.dims, vocab)
    if set(expected) != set(params.weights):
        raise GrammarError(f"parameter names differ: {sorted(set(expected) ^ set(params.weights))}")
    for name, shape in expected.items():
        if params.weights[name].shape != shape:
            raise GrammarError(f"dimension mismatch for {name}: {params.weights[name].shape} != {shape}")


def load_pretrained(params: NeuralParams, vocab: Vocab, path: str, target: str = "word_embedding") -> int:
    """Copy vectors from a text file (``symbol v1 ... vd`` per line) into matching rows.

    Returns the number of rows replaced.
    """
    table = params.weights[target]
    symbols = vocab.symbols if target == "word_embedding" else vocab.pos_symbols
    index = {s: i for i, s in enumerate(symbols)}
    hits = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != table.shape[1] + 1:
                raise GrammarError(f"{path}:{lineno}: expected {table.shape[1]} values")
            row = index.get(parts[0])
            if row is not None:
                table[row] = np.array(parts[1:], dtype=np.float64)
                hits += 1
    return hits


# -- forward --------------------------------------------------------------------


def _relu(a):
    return np.maximum(a, 0.0)


def _mlp(w, E: np.ndarray, val: int, dr: int, skip: bool, deep: bool):
    cache = {"E": E}
    a1 = E @ w["W_val"][val].T
    if skip:
        a1 = a1 + E
    z1 = _relu(a1)
    a2 = z1 @ w["W_1"].T
    v = _relu(a2)
    a3 = v @ w["W_dir"][dr].T
    if skip:
        a3 = a3 + E
    a4 = a3 @ w["W_2"].T
    z4 = _relu(a4)
    dd = z4 @ w["W_3"].T
    a5 = dd @ w["W_4"].T
    cache.update(a1=a1, z1=z1, a2=a2, v=v, a3=a3, a4=a4, z4=z4, dd=dd)
    if deep:
        if skip:
            a5 = a5 + E
        z5 = _relu(a5)
        a6 = z5 @ w["W_5"].T
        z6 = _relu(a6)
        a7 = z6 @ w["W_6"].T
        h = _relu(a7)
        cache.update(a5=a5, z5=z5, a6=a6, z6=z6, a7=a7)
    else:
        h = _relu(a5)
        cache.update(a5=a5)
    return h, cache


def _mlp_backward(w, g, cache, gh: np.ndarray, val: int, dr: int, skip: bool, deep: bool) -> np.ndarray:
    E = cache["E"]
    if deep:
        ga7 = gh * (cache["a7"] > 0)
        g["W_6"] += ga7.T @ cache["z6"]
        ga6 = (ga7 @ w["W_6"]) * (cache["a6"] > 0)
        g["W_5"] += ga6.T @ cache["z5"]
        ga5 = (ga6 @ w["W_5"]) * (cache["a5"] > 0)
    else:
        ga5 = gh * (cache["a5"] > 0)
    gE = ga5.copy() if (deep and skip) else np.zeros_like(E)
    g["W_4"] += ga5.T @ cache["dd"]
    gdd = ga5 @ w["W_4"]
    g["W_3"] += gdd.T @ cache["z4"]
    ga4 = (gdd @ w["W_3"]) * (cache["a4"] > 0)
    g["W_2"] += ga4.T @ cache["a3"]
    ga3 = ga4 @ w["W_2"]
    if skip:
        gE += ga3
    g["W_dir"][dr] += ga3.T @ cache["v"]
    ga2 = (ga3 @ w["W_dir"][dr]) * (cache["a2"] > 0)
    g["W_1"] += ga2.T @ cache["z1"]
    ga1 = (ga2 @ w["W_1"]) * (cache["a1"] > 0)
    if skip:
        gE += ga1
    g["W_val"][val] += ga1.T @ E
    gE += ga1 @ w["W_val"][val]
    return gE


@dataclass
class Tape:
    """Everything ``backward_params`` needs from one forward pass."""

    params: NeuralParams
    vocab: Vocab
    order: Order
    tables: RuleTables
    X_tok: np.ndarray
    dropout_mask: np.ndarray | None
    X_extra: np.ndarray | None
    blocks: dict
    caches: dict
    hidden: dict
    factors: dict


def _token_inputs(params: NeuralParams, vocab: Vocab) -> np.ndarray:
    w = params.weights
    if vocab.lexicalized:
        pos = w["pos_embedding"][np.asarray(vocab.lex_pos, dtype=np.int64)]
        if params.dims.d_word:
            return np.concatenate([pos, w["word_embedding"]], axis=1)
        return pos
    return w["pos_embedding"]


def forward_tables(
    params: NeuralParams,
    vocab: Vocab,
    order: Order,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[RuleTables, Tape]:
    check_params(params, vocab)
    w = params.weights
    dims = params.dims
    skip, deep = dims.use_skip_connections, dims.deep_output_mlp
    V = vocab.size

    X_tok = _token_inputs(params, vocab)
    mask = None
    if train_mode and vocab.lexicalized and dims.dropout > 0:
        rng = np.random.default_rng() if rng is None else rng
        keep = 1.0 - dims.dropout
        mask = (rng.random(X_tok.shape) < keep) / keep
        X_tok = X_tok * mask
    X_extra = np.vstack([w["null_embedding"][None], X_tok]) if order.second else None

    blocks = {
        "p": X_tok @ w["W_p"].T,
        "c": X_tok @ w["W_c"].T,
        "dec": w["x_dec"] @ w["W_dec"].T,
        "root": (w["x_root"] @ w["W_root"].T)[None],
    }
    if order.second:
        blocks["s"] = X_extra @ w["W_s"].T
    names = list(blocks)
    sizes = [blocks[k].shape[0] for k in names]
    E = np.vstack([blocks[k] for k in names])

    caches, hidden = {}, {}
    for val in VALENCES:
        for dr in DIRECTIONS:
            h, cache = _mlp(w, E, val, dr, skip, deep)
            caches[val, dr] = cache
            parts = np.split(h, np.cumsum(sizes)[:-1])
            hidden[val, dr] = dict(zip(names, parts))

    X = extra_size(order, V)
    child = np.empty((V, X, 2, 2, V))
    decision = np.empty((V, X, 2, 2, 2))
    factors = {}
    for val in VALENCES:
        for dr in DIRECTIONS:
            hb = hidden[val, dr]
            hs_child = hb["s"] if order.second else w["slot"][None]
            P = hb["p"] @ w["Cp_child"].T
            S = hs_child @ w["Cs_child"].T
            C = hb["c"] @ w["Cc_child"].T
            child[:, :, dr, val, :] = np.einsum("pq,xq,cq->pxc", P, S, C, optimize=True)
            Pd = hb["p"] @ w["Cp_dec"].T
            Sd = hs_child @ w["Cs_dec"].T
            Ad = hb["dec"] @ w["Cc_dec"].T
            decision[:, :, dr, val, :] = np.einsum("pq,xq,aq->pxa", Pd, Sd, Ad, optimize=True)
            factors[val, dr] = dict(P=P, S=S, C=C, Pd=Pd, Sd=Sd, Ad=Ad, hs=hs_child)
    hb = hidden[ROOT_BRANCH]
    Pr = hb["root"] @ w["Cp_root"].T  # [1, q]
    Sr = w["slot"][None] @ w["Cs_root"].T  # [1, q]
    Cr = hb["c"] @ w["Cc_root"].T  # [V, q]
    root = Cr @ (Pr[0] * Sr[0])
    factors["root"] = dict(P=Pr, S=Sr, C=Cr)

    tables = RuleTables(order, log_normalize(root), log_normalize(child), log_normalize(decision), vocab.lexicalized)
    tape = Tape(params, vocab, order, tables, X_tok, mask, X_extra, dict(zip(names, sizes)), caches, hidden, factors)
    return tables, tape


# -- backward -------------------------------------------------------------------


def _softmax_backward(G: np.ndarray, logp: np.ndarray) -> np.ndarray:
    return G - np.exp(logp) * G.sum(axis=-1, keepdims=True)


def backward_params(tape: Tape, grad_root, grad_child, grad_decision) -> dict[str, np.ndarray]:
    """Gradient of sum_r grad[r] * log p(r) with respect to every weight."""
    t = tape.tables
    if np.shape(grad_root) != t.root.shape or np.shape(grad_child) != t.child.shape or np.shape(grad_decision) != t.decision.shape:
        raise GrammarError("gradient shape does not match the rule tables")
    params, order = tape.params, tape.order
    w = params.weights
    dims = params.dims
    skip, deep = dims.use_skip_connections, dims.deep_output_mlp
    g = {k: np.zeros_like(v) for k, v in w.items()}

    gS_child = _softmax_backward(np.asarray(grad_child, dtype=np.float64), t.child)
    gS_dec = _softmax_backward(np.asarray(grad_decision, dtype=np.float64), t.decision)
    gS_root = _softmax_backward(np.asarray(grad_root, dtype=np.float64), t.root)

    gh = {key: {k: np.zeros_like(v) for k, v in blocks.items()} for key, blocks in tape.hidden.items()}
    for val in VALENCES:
        for dr in DIRECTIONS:
            f = tape.factors[val, dr]
            hb = tape.hidden[val, dr]
            acc = gh[val, dr]
            g_hs = np.zeros_like(f["hs"])
            for gs, Pk, Sk, Ck, prefix, out_key in (
                (gS_child[:, :, dr, val, :], "P", "S", "C", "child", "c"),
                (gS_dec[:, :, dr, val, :], "Pd", "Sd", "Ad", "dec", "dec"),
            ):
                P, S, C = f[Pk], f[Sk], f[Ck]
                T = np.einsum("pxc,cq->pxq", gs, C, optimize=True)
                gP = np.einsum("pxq,xq->pq", T, S, optimize=True)
                gSx = np.einsum("pxq,pq->xq", T, P, optimize=True)
                gC = np.einsum("pxc,pq,xq->cq", gs, P, S, optimize=True)
                Cp, Cs, Cc = w[f"Cp_{prefix}"], w[f"Cs_{prefix}"], w[f"Cc_{prefix}"]
                g[f"Cp_{prefix}"] += gP.T @ hb["p"]
                g[f"Cs_{prefix}"] += gSx.T @ f["hs"]
                g[f"Cc_{prefix}"] += gC.T @ hb[out_key]
                acc["p"] += gP @ Cp
                g_hs += gSx @ Cs
                acc[out_key] += gC @ Cc
            if order.second:
                acc["s"] += g_hs
            else:
                g["slot"] += g_hs[0]

    f = tape.factors["root"]
    hb = tape.hidden[ROOT_BRANCH]
    P, S, C = f["P"][0], f["S"][0], f["C"]
    gC = np.outer(gS_root, P * S)  # [V, q]
    gPS = gS_root @ C  # [q]
    gP, gS = gPS * S, gPS * P
    g["Cc_root"] += gC.T @ hb["c"]
    g["Cp_root"] += np.outer(gP, hb["root"][0])
    g["Cs_root"] += np.outer(gS, w["slot"])
    gh[ROOT_BRANCH]["c"] += gC @ w["Cc_root"]
    gh[ROOT_BRANCH]["root"] += (gP @ w["Cp_root"])[None]
    g["slot"] += gS @ w["Cs_root"]

    names = list(tape.blocks)
    gE = 0.0
    for val in VALENCES:
        for dr in DIRECTIONS:
            gH = np.vstack([gh[val, dr][k] for k in names])
            gE = gE + _mlp_backward(w, g, tape.caches[val, dr], gH, val, dr, skip, deep)
    parts = dict(zip(names, np.split(gE, np.cumsum([tape.blocks[k] for k in names])[:-1])))

    gX = parts["p"] @ w["W_p"] + parts["c"] @ w["W_c"]
    g["W_p"] += parts["p"].T @ tape.X_tok
    g["W_c"] += parts["c"].T @ tape.X_tok
    if order.second:
        g["W_s"] += parts["s"].T @ tape.X_extra
        gXe = parts["s"] @ w["W_s"]
        g["null_embedding"] += gXe[0]
        gX = gX + gXe[1:]
    g["W_dec"] += parts["dec"].T @ w["x_dec"]
    g["x_dec"] += parts["dec"] @ w["W_dec"]
    g["W_root"] += np.outer(parts["root"][0], w["x_root"])
    g["x_root"] += parts["root"][0] @ w["W_root"]

    if tape.dropout_mask is not None:
        gX = gX * tape.dropout_mask
    vocab = tape.vocab
    if vocab.lexicalized:
        dp = dims.d_pos
        np.add.at(g["pos_embedding"], np.asarray(vocab.lex_pos, dtype=np.int64), gX[:, :dp])
        if dims.d_word:
            g["word_embedding"] += gX[:, dp:]
    else:
        g["pos_embedding"] += gX
    return g


def backward_from_tables(tape: Tape, grads: RuleTables | object) -> dict[str, np.ndarray]:
    """Convenience wrapper taking any object with ``root``/``child``/``decision`` arrays."""
    return backward_params(tape, grads.root, grads.child, grads.decision)
