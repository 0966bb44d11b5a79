"""Learning: EM, direct marginal-likelihood optimization, agreement training.

All steps minimise a negative objective with Adam. Gradients with respect to
log rule probabilities are the (scaled) expected counts from the chart; they
are pushed through the model's own backward pass.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .chart import (
    ExpectedCounts,
    JointTables,
    ModelKind,
    expected_counts_batch,
    inside_batch,
    kind_for_order,
    viterbi_batch,
)
from .grammar import (
    Decision,
    Direction,
    GrammarError,
    Order,
    RuleTables,
    Sentence,
    Valence,
    Vocab,
    extra_size,
    log_normalize,
)
from .neural import DimConfig, NeuralParams, backward_params, forward_tables, init_params
from .trees import add_tree_counts, is_projective_single_root


class TrainingError(RuntimeError):
    pass


class Method(enum.Enum):
    EM = "em"
    DMO = "dmo"
    PRODUCT_EM = "product-em"
    JOINT_DMO = "joint-dmo"

    @property
    def joint(self) -> bool:
        return self in (Method.PRODUCT_EM, Method.JOINT_DMO)


class Init(enum.Enum):
    KM = "km"
    UNIFORM = "uniform"
    SUPERVISED_WARMUP = "warmup"


MODEL_NAMES = ("dmv", "ndmv", "sibling", "grand", "joint")


@dataclass(frozen=True)
class TrainConfig:
    method: Method = Method.DMO
    model: str = "sibling"
    lexicalized: bool = False
    batch_size: int = 100
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    max_epochs: int = 50
    patience: int = 5
    m_steps_per_e_step: int = 1
    seed: int = 0
    init: Init = Init.KM
    km_epochs: int = 100
    km_learning_rate: float = 0.01
    warmup_epochs: int = 10
    max_train_length: int | None = 10
    restarts: int = 1
    dims: DimConfig | None = None
    lex_dims: DimConfig | None = None
    use_skip_connections: bool = True
    deep_output_mlp: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "init", Init(self.init))

    def validate(self) -> None:
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise TrainingError("learning_rate must be > 0")
        if self.patience < 1:
            raise TrainingError("patience must be >= 1")
        if self.m_steps_per_e_step < 1:
            raise TrainingError("m_steps_per_e_step must be >= 1")
        if self.restarts < 1:
            raise TrainingError("restarts must be >= 1")
        if self.model not in MODEL_NAMES:
            raise TrainingError(f"unknown model {self.model!r}; choose from {', '.join(MODEL_NAMES)}")
        if self.method.joint != (self.model == "joint"):
            raise TrainingError(f"method {self.method.value} does not fit model {self.model}")


# -- Adam -----------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, weights: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(w) for k, w in weights.items()}, {k: np.zeros_like(w) for k, w in weights.items()})

    def copy(self) -> "AdamState":
        return AdamState({k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()}, self.step)


def adam_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam descent step. Inputs are left untouched."""
    if set(params) != set(grads):
        raise TrainingError("gradient keys differ from parameter keys")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise TrainingError(f"gradient shape mismatch for {k}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {k}")
    b1, b2 = betas
    t = state.step + 1
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m[k] = b1 * state.m[k] + (1 - b1) * g
        v[k] = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m[k] / (1 - b1**t)
        v_hat = v[k] / (1 - b2**t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v, t)


# -- models ---------------------------------------------------------------------


@dataclass
class NeuralModel:
    """Neural rule scorer bound to a vocabulary and a model order."""

    params: NeuralParams
    vocab: Vocab
    order: Order

    @property
    def weights(self) -> dict[str, np.ndarray]:
        return self.params.weights

    @weights.setter
    def weights(self, value: dict[str, np.ndarray]) -> None:
        self.params = NeuralParams(self.params.dims, value)

    @property
    def kind(self) -> ModelKind:
        return kind_for_order(self.order)

    @property
    def lexical(self) -> bool:
        return self.vocab.lexicalized

    def forward(self, train_mode: bool = False, rng: np.random.Generator | None = None):
        return forward_tables(self.params, self.vocab, self.order, train_mode, rng)

    def tables(self) -> RuleTables:
        return self.forward()[0]

    def backward(self, tape, grad) -> dict[str, np.ndarray]:
        return backward_params(tape, grad.root, grad.child, grad.decision)

    def copy(self) -> "NeuralModel":
        return NeuralModel(self.params.copy(), self.vocab, self.order)


@dataclass
class TableModel:
    """Classic DMV: one free logit per rule, normalised by a softmax."""

    logits: dict[str, np.ndarray]
    vocab: Vocab
    order: Order = Order.FIRST

    @classmethod
    def uniform(cls, vocab: Vocab, order: Order = Order.FIRST) -> "TableModel":
        V, X = vocab.size, extra_size(order, vocab.size)
        logits = {"root": np.zeros(V), "child": np.zeros((V, X, 2, 2, V)), "decision": np.zeros((V, X, 2, 2, 2))}
        return cls(logits, vocab, order)

    @property
    def weights(self) -> dict[str, np.ndarray]:
        return self.logits

    @weights.setter
    def weights(self, value: dict[str, np.ndarray]) -> None:
        self.logits = value

    @property
    def kind(self) -> ModelKind:
        return kind_for_order(self.order)

    @property
    def lexical(self) -> bool:
        return self.vocab.lexicalized

    def forward(self, train_mode: bool = False, rng=None):
        w = self.logits
        t = RuleTables(
            self.order, log_normalize(w["root"]), log_normalize(w["child"]), log_normalize(w["decision"]), self.lexical
        )
        return t, t

    def tables(self) -> RuleTables:
        return self.forward()[0]

    def backward(self, tape: RuleTables, grad) -> dict[str, np.ndarray]:
        out = {}
        for name in ("root", "child", "decision"):
            G = getattr(grad, name)
            out[name] = G - np.exp(getattr(tape, name)) * G.sum(axis=-1, keepdims=True)
        return out

    def copy(self) -> "TableModel":
        return TableModel({k: v.copy() for k, v in self.logits.items()}, self.vocab, self.order)


Model = NeuralModel | TableModel


@dataclass
class JointModel:
    """Agreement pair: first-order lexicalized model and second-order POS model."""

    lexical: Model
    structural: Model

    def __post_init__(self):
        if self.lexical.order is not Order.FIRST:
            raise GrammarError("the lexical half of a joint model must be first-order")
        if not self.structural.order.second:
            raise GrammarError("the structural half of a joint model must be second-order")
        if self.structural.lexical:
            raise GrammarError("the structural half of a joint model uses the POS vocabulary")

    @property
    def kind(self) -> ModelKind:
        return ModelKind.JOINT

    @property
    def members(self) -> tuple[Model, Model]:
        return self.lexical, self.structural

    def tables(self) -> JointTables:
        return JointTables(self.lexical.tables(), self.structural.tables())

    def copy(self) -> "JointModel":
        return JointModel(self.lexical.copy(), self.structural.copy())


def model_tables(model):
    """Scoring tables for charts: RuleTables, or JointTables for a joint pair."""
    return model.tables()


# -- steps ----------------------------------------------------------------------


@dataclass
class StepResult:
    objective: float
    counts: object
    grads: list[dict[str, np.ndarray]]
    inner_objectives: list[float] = field(default_factory=list)


def _check_finite(log_z: np.ndarray, where: str = "") -> None:
    bad = np.flatnonzero(~np.isfinite(log_z) | (log_z <= -1e8))
    if bad.size:
        raise TrainingError(f"non-finite log-likelihood{where} at batch sentence {int(bad[0])}")


def _freeze(counts: ExpectedCounts) -> ExpectedCounts:
    for a in counts.arrays():
        a.setflags(write=False)
    return counts


def _apply(model: Model, opt: AdamState, grads: dict, cfg: TrainConfig) -> AdamState:
    model.weights, opt = adam_update(model.weights, grads, opt, cfg.learning_rate, cfg.betas, cfg.eps)
    return opt


def dmo_gradient(batch: Sequence[Sentence], model: Model, rng=None):
    """(mean NLL, parameter gradient, summed counts) without touching the model."""
    tables, tape = model.forward(train_mode=True, rng=rng)
    log_z, counts = expected_counts_batch(batch, tables, model.kind)
    _check_finite(log_z)
    grads = model.backward(tape, counts.scaled(-1.0 / len(batch)))
    return -float(log_z.mean()), grads, counts


def dmo_step(batch: Sequence[Sentence], model: Model, opt: AdamState, cfg: TrainConfig, rng=None) -> tuple[float, AdamState, StepResult]:
    """One Adam step on the batch mean negative log-likelihood.

    The model is updated in place; the returned loss is the pre-update value.
    """
    loss, grads, counts = dmo_gradient(batch, model, rng)
    opt = _apply(model, opt, grads, cfg)
    return loss, opt, StepResult(loss, counts, [grads])


def e_step(batch: Sequence[Sentence], model: Model, rng=None):
    """Frozen posterior counts for the batch plus the tables/tape they came from."""
    tables, tape = model.forward(train_mode=True, rng=rng)
    log_z, counts = expected_counts_batch(batch, tables, model.kind)
    _check_finite(log_z)
    return _freeze(counts), tables, tape


def em_step(batch: Sequence[Sentence], model: Model, opt: AdamState, cfg: TrainConfig, rng=None) -> tuple[float, AdamState, StepResult]:
    """E-step then ``cfg.m_steps_per_e_step`` Adam updates of Q with the counts held fixed.

    Returns the mean per-sentence Q before the first update.
    """
    counts, tables, tape = e_step(batch, model, rng)
    B = len(batch)
    upstream = counts.scaled(-1.0 / B)
    result = StepResult(counts.dot(tables) / B, counts, [])
    for k in range(cfg.m_steps_per_e_step):
        if k:
            tables, tape = model.forward(train_mode=True, rng=rng)
        result.inner_objectives.append(counts.dot(tables) / B)
        grads = model.backward(tape, upstream)
        result.grads.append(grads)
        opt = _apply(model, opt, grads, cfg)
    return result.objective, opt, result


def joint_step(
    batch: Sequence[Sentence],
    model: JointModel,
    opts: tuple[AdamState, AdamState],
    cfg: TrainConfig,
    rng=None,
) -> tuple[float, tuple[AdamState, AdamState], StepResult]:
    """Agreement update: both models learn from the shared product posterior.

    JOINT_DMO recomputes counts at every update; PRODUCT_EM keeps them fixed for
    ``m_steps_per_e_step`` updates. Returns the mean agreement log-likelihood.
    """
    members = model.members
    for s in batch:
        if s.lex_ids is None:
            raise GrammarError("joint training needs sentences with a lexical view")
    fwd = [m.forward(train_mode=True, rng=rng) for m in members]
    log_z, jc = expected_counts_batch(batch, JointTables(fwd[0][0], fwd[1][0]), ModelKind.JOINT)
    _check_finite(log_z, " (joint)")
    counts = (_freeze(jc.lexical), _freeze(jc.structural))
    B = len(batch)
    objective = float(log_z.mean())
    inner = cfg.m_steps_per_e_step if cfg.method is Method.PRODUCT_EM else 1
    result = StepResult(objective, jc, [])
    opts = list(opts)
    for k in range(inner):
        if k:
            fwd = [m.forward(train_mode=True, rng=rng) for m in members]
        result.inner_objectives.append(sum(c.dot(t) for c, (t, _) in zip(counts, fwd)) / B)
        for i, (m, c, (_, tape)) in enumerate(zip(members, counts, fwd)):
            grads = m.backward(tape, c.scaled(-1.0 / B))
            result.grads.append(grads)
            opts[i] = _apply(m, opts[i], grads, cfg)
    return objective, tuple(opts), result


# -- initialisation ---------------------------------------------------------------


def km_targets(sentences: Sequence[Sentence], vocab_size: int, order: Order, lexical: bool, smoothing: float = 0.1) -> RuleTables:
    """Harmonic pseudo-count tables.

    Attachment mass between positions i and j is proportional to 1/|i-j|; root
    mass is uniform over positions; CONTINUE mass follows the expected number
    of children per side under those attachments. Everything gets add-``smoothing``.
    """
    V = vocab_size
    root = np.zeros(V)
    child = np.zeros((V, 2, V))  # [parent, dir, child]
    decision = np.zeros((V, 2, 2, 2))  # [parent, dir, val, dec]
    for s in sentences:
        ids = s.ids(lexical)
        n = len(ids)
        np.add.at(root, ids, 1.0 / n)
        if n == 1:
            decision[ids[0], :, Valence.NOCHILD, Decision.STOP] += 1.0
            continue
        pos = np.arange(n)
        dist = np.abs(pos[:, None] - pos[None, :]).astype(float)
        np.fill_diagonal(dist, np.inf)
        w = 1.0 / dist  # [head, dep]
        attach = w / w.sum(axis=0, keepdims=True)
        for d, side in ((Direction.LEFT, pos[None, :] < pos[:, None]), (Direction.RIGHT, pos[None, :] > pos[:, None])):
            wd = np.where(side, w, 0.0)
            np.add.at(child, (ids[:, None], int(d), ids[None, :]), wd)
            fan = np.where(side, attach, 0.0).sum(axis=1)
            first = np.minimum(fan, 1.0)
            np.add.at(decision, (ids, int(d), Valence.NOCHILD, Decision.CONTINUE), first)
            np.add.at(decision, (ids, int(d), Valence.NOCHILD, Decision.STOP), 1.0 - first)
            np.add.at(decision, (ids, int(d), Valence.HASCHILD, Decision.CONTINUE), np.maximum(fan - 1.0, 0.0))
            np.add.at(decision, (ids, int(d), Valence.HASCHILD, Decision.STOP), first)
    root += smoothing
    child += smoothing
    decision += smoothing
    X = extra_size(order, V)
    child5 = np.broadcast_to(child[:, None, :, None, :], (V, X, 2, 2, V))
    dec5 = np.broadcast_to(decision[:, None], (V, X, 2, 2, 2))
    return RuleTables(
        order,
        np.log(root / root.sum()),
        np.log(child5 / child5.sum(-1, keepdims=True)),
        np.log(dec5 / dec5.sum(-1, keepdims=True)),
        lexical,
    )


def _slice_weights(t: RuleTables) -> ExpectedCounts:
    """Target probabilities scaled so each table contributes its mean per-slice term."""
    out = []
    for a in (t.root, t.child, t.decision):
        n_slices = a.size // a.shape[-1]
        out.append(np.exp(a) / n_slices)
    return ExpectedCounts(*out)


def cross_entropy(target: RuleTables, tables: RuleTables) -> float:
    """Mean per-slice cross-entropy, summed over the three rule types."""
    return -_slice_weights(target).dot(tables)


def fit_tables(
    model: Model, target: RuleTables, epochs: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8
) -> list[float]:
    """Minimise cross-entropy to ``target`` with full-table Adam steps. Returns per-epoch losses."""
    weight = _slice_weights(target)
    upstream = weight.scaled(-1.0)
    opt = AdamState.zeros(model.weights)
    history = []
    for _ in range(epochs):
        tables, tape = model.forward()
        history.append(-weight.dot(tables))
        model.weights, opt = adam_update(model.weights, model.backward(tape, upstream), opt, lr, betas, eps)
    if epochs:
        history.append(-weight.dot(model.tables()))
    return history


def km_initialize(sentences: Sequence[Sentence], model: Model, epochs: int, cfg: TrainConfig | None = None) -> list[float]:
    """Fit ``model`` in place to harmonic targets built from ``sentences``."""
    if not sentences:
        raise GrammarError("empty corpus")
    cfg = cfg or TrainConfig()
    target = km_targets(sentences, model.vocab.size, model.order, model.lexical)
    return fit_tables(model, target, epochs, cfg.km_learning_rate, cfg.betas, cfg.eps)


def tree_counts(pairs: Sequence[tuple[Sentence, Sequence[int]]], tables: RuleTables) -> ExpectedCounts:
    """Rule usage counts c(r, x, z) summed over given trees."""
    counts = ExpectedCounts.zeros_like(tables)
    for k, (s, heads) in enumerate(pairs):
        if len(heads) != len(s) or not is_projective_single_root(heads):
            raise GrammarError(f"warm-up tree {k} is not projective with a single root child")
        add_tree_counts(counts, tables.order, s.ids(tables.lexical), heads)
    return counts


def supervised_warmup(
    pairs: Sequence[tuple[Sentence, Sequence[int]]],
    model: Model,
    epochs: int,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
) -> list[float]:
    """Maximise log p(x, z) of the given trees; returns mean log p per epoch (before each epoch, then final)."""
    tables = model.tables()
    counts = tree_counts(pairs, tables)  # validates every tree up front
    rng = rng or np.random.default_rng(cfg.seed)
    per_tree = [tree_counts([p], tables) for p in pairs]
    opt = AdamState.zeros(model.weights)
    N = len(pairs)
    history = [counts.dot(tables) / N]
    for _ in range(epochs):
        order = rng.permutation(N)
        for start in range(0, N, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = ExpectedCounts.zeros_like(tables)
            for i in idx:
                for a, b in zip(batch.arrays(), per_tree[i].arrays()):
                    a += b
            _, tape = model.forward(train_mode=True, rng=rng)
            grads = model.backward(tape, batch.scaled(-1.0 / len(idx)))
            model.weights, opt = adam_update(model.weights, grads, opt, cfg.learning_rate, cfg.betas, cfg.eps)
        history.append(counts.dot(model.tables()) / N)
    return history


# -- model construction -----------------------------------------------------------


_ORDERS = {"dmv": Order.FIRST, "ndmv": Order.FIRST, "sibling": Order.SECOND_SIBLING, "grand": Order.SECOND_GRAND}


def _dims(cfg: TrainConfig, lexical: bool, override: DimConfig | None) -> DimConfig:
    if override is not None:
        return override
    base = DimConfig.lexicalized() if lexical else DimConfig.unlexicalized()
    return replace(base, use_skip_connections=cfg.use_skip_connections, deep_output_mlp=cfg.deep_output_mlp)


def build_model(cfg: TrainConfig, pos_vocab: Vocab, lex_vocab: Vocab | None = None, seed: int | None = None):
    """Fresh model for ``cfg.model``. ``lex_vocab`` is needed for lexicalized and joint models."""
    seed = cfg.seed if seed is None else seed
    if cfg.model == "joint":
        if lex_vocab is None:
            raise GrammarError("joint model needs a lexicalized vocabulary")
        lexical = NeuralModel(init_params(seed, _dims(cfg, True, cfg.lex_dims), lex_vocab), lex_vocab, Order.FIRST)
        structural = NeuralModel(
            init_params(seed + 1, _dims(cfg, False, cfg.dims), pos_vocab), pos_vocab, Order.SECOND_SIBLING
        )
        return JointModel(lexical, structural)
    vocab = pos_vocab
    if cfg.lexicalized:
        if lex_vocab is None:
            raise GrammarError("lexicalized model needs a lexicalized vocabulary")
        vocab = lex_vocab
    order = _ORDERS[cfg.model]
    if cfg.model == "dmv":
        return TableModel.uniform(vocab, order)
    return NeuralModel(init_params(seed, _dims(cfg, cfg.lexicalized, cfg.dims), vocab), vocab, order)


# -- evaluation helpers -------------------------------------------------------------


def mean_log_likelihood(sentences: Sequence[Sentence], model) -> float:
    """Mean per-sentence log p(x) (agreement objective for joint models)."""
    if not sentences:
        return float("nan")
    return float(inside_batch(sentences, model_tables(model), model.kind).mean())


def parse(sentences: Sequence[Sentence], model, batch_size: int = 256):
    """Viterbi trees (joint decoding for a joint pair)."""
    tables, kind = model_tables(model), model.kind
    out = []
    for start in range(0, len(sentences), batch_size):
        out.extend(viterbi_batch(sentences[start : start + batch_size], tables, kind))
    return out


# -- training loop --------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_ll: float
    seconds: float

    def tsv(self) -> str:
        return f"{self.epoch}\t{self.train_loss:.10f}\t{self.dev_ll:.10f}\t{self.seconds:.3f}"


@dataclass
class TrainResult:
    model: object
    log: list[EpochRecord]
    best_epoch: int
    seed: int

    def log_tsv(self) -> str:
        header = "epoch\ttrain_loss\tdev_ll\tseconds"
        return "\n".join([header] + [r.tsv() for r in self.log]) + "\n"


def _step_fn(cfg: TrainConfig) -> Callable:
    if cfg.method.joint:
        return joint_step
    return em_step if cfg.method is Method.EM else dmo_step


def _sign(cfg: TrainConfig) -> float:
    # steps report objectives to maximise (EM's Q, the agreement likelihood) or a loss
    return 1.0 if cfg.method is Method.DMO else -1.0


def initialize(model, sentences: Sequence[Sentence], cfg: TrainConfig, warmup_trees=None, rng=None) -> None:
    members = model.members if isinstance(model, JointModel) else (model,)
    if cfg.init is Init.KM:
        for m in members:
            km_initialize(sentences, m, cfg.km_epochs, cfg)
    elif cfg.init is Init.SUPERVISED_WARMUP:
        if warmup_trees is None:
            warmup_trees = [(s, s.gold_heads) for s in sentences if s.gold_is_model_tree]
        if not warmup_trees:
            raise GrammarError("supervised warm-up needs at least one projective single-root tree")
        for m in members:
            supervised_warmup(warmup_trees, m, cfg.warmup_epochs, cfg, rng)


def train(
    train_sentences: Sequence[Sentence],
    dev_sentences: Sequence[Sentence],
    cfg: TrainConfig,
    pos_vocab: Vocab,
    lex_vocab: Vocab | None = None,
    model=None,
    warmup_trees=None,
    seed: int | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Initialise, then run epochs over seeded shuffles with dev-likelihood early stopping.

    Returns the checkpoint with the best dev log-likelihood (the last one when
    there is no dev data).
    """
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    data = [s for s in train_sentences if cfg.max_train_length is None or len(s) <= cfg.max_train_length]
    if not data:
        raise TrainingError("no training sentences within the length limit")
    rng = np.random.default_rng(seed)
    if model is None:
        model = build_model(cfg, pos_vocab, lex_vocab, seed)
        initialize(model, data, cfg, warmup_trees, rng)
    joint = isinstance(model, JointModel)
    opt = tuple(AdamState.zeros(m.weights) for m in model.members) if joint else AdamState.zeros(model.weights)
    step, sign = _step_fn(cfg), _sign(cfg)

    log: list[EpochRecord] = []
    best_ll, best_epoch, best_model, stale = -np.inf, 0, model.copy(), 0
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(data))
        total = 0.0
        for b, lo in enumerate(range(0, len(data), cfg.batch_size)):
            batch = [data[i] for i in order[lo : lo + cfg.batch_size]]
            try:
                value, opt, _ = step(batch, model, opt, cfg, rng)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            total += sign * value * len(batch)
        dev_ll = mean_log_likelihood(dev_sentences, model) if dev_sentences else float("nan")
        rec = EpochRecord(epoch, total / len(data), dev_ll, time.perf_counter() - start)
        log.append(rec)
        if on_epoch:
            on_epoch(rec)
        if not dev_sentences:
            best_epoch, best_model = epoch, model.copy()
            continue
        if dev_ll > best_ll:
            best_ll, best_epoch, best_model, stale = dev_ll, epoch, model.copy(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(best_model, log, best_epoch, seed)


def train_restarts(train_sentences, dev_sentences, cfg: TrainConfig, pos_vocab, lex_vocab=None, warmup_trees=None):
    """``cfg.restarts`` independent runs with seeds ``cfg.seed + k``."""
    return [
        train(train_sentences, dev_sentences, cfg, pos_vocab, lex_vocab, warmup_trees=warmup_trees, seed=cfg.seed + k)
        for k in range(cfg.restarts)
    ]
