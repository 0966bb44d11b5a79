"""Vocabularies, rule tables and the small enumerations shared by every module."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

NEG_INF = -1e9
ROOT_ID = 0
NULL_SIBLING_ID = 0


class Direction(enum.IntEnum):
    LEFT = 0
    RIGHT = 1


class Valence(enum.IntEnum):
    HASCHILD = 0
    NOCHILD = 1


class Decision(enum.IntEnum):
    STOP = 0
    CONTINUE = 1


class Order(enum.Enum):
    FIRST = "first"
    SECOND_SIBLING = "sibling"
    SECOND_GRAND = "grand"

    @property
    def second(self) -> bool:
        return self is not Order.FIRST


class VocabMode(enum.Enum):
    UNLEXICALIZED = "unlexicalized"
    LEXICALIZED = "lexicalized"


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    """Symbol inventory of a model.

    In lexicalized mode the model's symbols are ``lex_symbols``: ``word/POS``
    pairs frequent enough to keep, plus one bare POS symbol per tag that rare
    words fall back to. ``lex_pos[k]`` is the POS id of lexical symbol ``k``.
    """

    mode: VocabMode
    pos_symbols: tuple[str, ...]
    lex_symbols: tuple[str, ...] = ()
    lex_pos: tuple[int, ...] = ()
    min_freq: int = 1
    _pos_index: dict = field(default=None, repr=False, compare=False)
    _lex_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        pos_index = {s: i for i, s in enumerate(self.pos_symbols)}
        lex_index = {s: i for i, s in enumerate(self.lex_symbols)}
        if len(pos_index) != len(self.pos_symbols) or len(lex_index) != len(self.lex_symbols):
            raise GrammarError("duplicate vocabulary symbol")
        object.__setattr__(self, "_pos_index", pos_index)
        object.__setattr__(self, "_lex_index", lex_index)

    @property
    def lexicalized(self) -> bool:
        return self.mode is VocabMode.LEXICALIZED

    @property
    def symbols(self) -> tuple[str, ...]:
        return self.lex_symbols if self.lexicalized else self.pos_symbols

    @property
    def size(self) -> int:
        return len(self.symbols)

    def __len__(self) -> int:
        return self.size

    def pos_id(self, tag: str) -> int:
        try:
            return self._pos_index[tag]
        except KeyError:
            raise GrammarError(f"unknown POS tag {tag!r}") from None

    def lex_id(self, form: str, tag: str) -> int:
        """Id of ``form/tag``, or of the bare ``tag`` fallback when the pair is rare."""
        idx = self._lex_index.get(lex_symbol(form, tag))
        if idx is None:
            idx = self._lex_index.get(tag)
        if idx is None:
            raise GrammarError(f"unknown POS tag {tag!r}")
        return idx

    def token_id(self, form: str, tag: str) -> int:
        return self.lex_id(form, tag) if self.lexicalized else self.pos_id(tag)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "pos_symbols": list(self.pos_symbols),
            "lex_symbols": list(self.lex_symbols),
            "lex_pos": list(self.lex_pos),
            "min_freq": self.min_freq,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(
            mode=VocabMode(d["mode"]),
            pos_symbols=tuple(d["pos_symbols"]),
            lex_symbols=tuple(d["lex_symbols"]),
            lex_pos=tuple(d["lex_pos"]),
            min_freq=int(d["min_freq"]),
        )


def lex_symbol(form: str, tag: str) -> str:
    return f"{form}/{tag}"


def _ranked(counts: Counter) -> list[str]:
    return [s for s, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]


def build_vocab(corpus: Iterable, mode: VocabMode | str = VocabMode.UNLEXICALIZED, min_freq: int = 2) -> Vocab:
    """Build a vocabulary from sentences exposing ``forms`` and ``tags``.

    Ids are assigned by descending frequency, ties broken lexicographically.
    """
    mode = VocabMode(mode)
    if min_freq < 1:
        raise GrammarError("min_freq must be >= 1")
    sentences = list(corpus)
    if not sentences or not any(len(s.tags) for s in sentences):
        raise GrammarError("empty corpus")

    tag_counts = Counter(t for s in sentences for t in s.tags)
    pos_symbols = tuple(_ranked(tag_counts))
    if mode is VocabMode.UNLEXICALIZED:
        return Vocab(mode, pos_symbols, min_freq=min_freq)

    pair_counts = Counter((f, t) for s in sentences for f, t in zip(s.forms, s.tags))
    counts: Counter = Counter()
    pos_of: dict[str, str] = {}
    for (form, tag), c in pair_counts.items():
        if c >= min_freq:
            sym = lex_symbol(form, tag)
            counts[sym] += c
            pos_of[sym] = tag
    # every tag gets a fallback entry so unseen words stay representable
    for tag in pos_symbols:
        rare = sum(c for (f, t), c in pair_counts.items() if t == tag and c < min_freq)
        counts[tag] += rare
        pos_of[tag] = tag
    lex_symbols = tuple(_ranked(counts))
    pos_index = {t: i for i, t in enumerate(pos_symbols)}
    lex_pos = tuple(pos_index[pos_of[s]] for s in lex_symbols)
    return Vocab(mode, pos_symbols, lex_symbols, lex_pos, min_freq)


def extra_size(order: Order, vocab_size: int) -> int:
    return vocab_size + 1 if order.second else 1


@dataclass(frozen=True)
class RuleTables:
    """Log-probabilities of ROOT, CHILD and DECISION rules.

    child:    [parent, extra, dir, val, child]
    decision: [parent, extra, dir, val, decision]

    The extra axis holds NULL/ROOT at index 0 and symbol ``k`` at ``k + 1``
    for second-order models; first-order tables keep a single slot.
    ``lexical`` marks tables indexed by a sentence's lexical ids.
    """

    order: Order
    root: np.ndarray
    child: np.ndarray
    decision: np.ndarray
    lexical: bool = False

    @property
    def vocab_size(self) -> int:
        return self.root.shape[0]

    def check_shapes(self) -> None:
        v = self.vocab_size
        x = extra_size(self.order, v)
        if self.root.shape != (v,):
            raise GrammarError(f"root table shape {self.root.shape} != ({v},)")
        if self.child.shape != (v, x, 2, 2, v):
            raise GrammarError(f"child table shape {self.child.shape} != {(v, x, 2, 2, v)} for {self.order.value} order")
        if self.decision.shape != (v, x, 2, 2, 2):
            raise GrammarError(
                f"decision table shape {self.decision.shape} != {(v, x, 2, 2, 2)} for {self.order.value} order"
            )

    def allocated_entries(self) -> int:
        return self.root.size + self.child.size + self.decision.size

    @classmethod
    def uniform(cls, vocab_size: int, order: Order = Order.FIRST, lexical: bool = False) -> "RuleTables":
        x = extra_size(order, vocab_size)
        return cls(
            order,
            np.full(vocab_size, -np.log(vocab_size)),
            np.full((vocab_size, x, 2, 2, vocab_size), -np.log(vocab_size)),
            np.full((vocab_size, x, 2, 2, 2), -np.log(2.0)),
            lexical,
        )

    @classmethod
    def from_logits(cls, order: Order, root, child, decision, lexical: bool = False) -> "RuleTables":
        return cls(order, log_normalize(root), log_normalize(child), log_normalize(decision), lexical)

    @classmethod
    def random(
        cls,
        vocab_size: int,
        order: Order = Order.FIRST,
        rng: np.random.Generator | None = None,
        temperature: float = 1.0,
        lexical: bool = False,
    ) -> "RuleTables":
        """Tables with standard-normal logits divided by ``temperature``."""
        rng = np.random.default_rng() if rng is None else rng
        x = extra_size(order, vocab_size)
        root = rng.standard_normal(vocab_size) / temperature
        child = rng.standard_normal((vocab_size, x, 2, 2, vocab_size)) / temperature
        decision = rng.standard_normal((vocab_size, x, 2, 2, 2)) / temperature
        return cls.from_logits(order, root, child, decision, lexical)

    def collapse_extra(self) -> "RuleTables":
        """First-order view of tables that are constant along the extra axis (slot 0 is kept)."""
        return RuleTables(Order.FIRST, self.root, self.child[:, :1], self.decision[:, :1], self.lexical)

    def broadcast_extra(self, order: Order) -> "RuleTables":
        """Second-order tables that ignore the extra token."""
        if self.order is not Order.FIRST:
            raise GrammarError("only first-order tables can be broadcast")
        x = extra_size(order, self.vocab_size)
        return RuleTables(
            order,
            self.root,
            np.repeat(self.child, x, axis=1),
            np.repeat(self.decision, x, axis=1),
            self.lexical,
        )

    def probabilities(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.exp(self.root), np.exp(self.child), np.exp(self.decision)


def log_normalize(logits) -> np.ndarray:
    """Log-softmax over the last axis."""
    a = np.asarray(logits, dtype=np.float64)
    m = a.max(axis=-1, keepdims=True)
    return a - (m + np.log(np.exp(a - m).sum(axis=-1, keepdims=True)))


@dataclass
class ValidationReport:
    passed: bool
    max_deviation: float
    worst_slice: tuple | None
    has_nan: bool
    has_positive: bool

    def __bool__(self) -> bool:
        return self.passed


def validate_rule_tables(tables: RuleTables, tol: float = 1e-6) -> ValidationReport:
    """Check that every conditional slice sums to one in probability space.

    ``worst_slice`` names the table and conditioning index with the largest
    deviation, e.g. ``("child", (p, x, dir, val))``.
    """
    tables.check_shapes()
    worst = 0.0
    worst_slice = None
    has_nan = False
    has_positive = False
    for name, arr in (("root", tables.root), ("child", tables.child), ("decision", tables.decision)):
        if np.isnan(arr).any():
            has_nan = True
        if (arr > 1e-12).any():
            has_positive = True
        dev = np.abs(np.exp(arr).sum(axis=-1) - 1.0)
        if np.isnan(dev).any():
            has_nan = True
            continue
        idx = np.unravel_index(int(np.argmax(dev)), dev.shape) if dev.ndim else ()
        if dev.max() > worst or worst_slice is None:
            worst = float(dev.max())
            worst_slice = (name, tuple(int(i) for i in idx))
    passed = (not has_nan) and (not has_positive) and worst <= tol
    return ValidationReport(passed, worst, worst_slice, has_nan, has_positive)


def rule_count(vocab_size: int, order: Order) -> int:
    """Number of grammar rules: 4|V|^3 + 4|V|^2 + |V| for second-order models.

    The middle term counts DECISION contexts, not DECISION outcomes; the same
    bookkeeping is applied to first-order models with the extra token removed.
    """
    v = vocab_size
    if v < 1:
        raise GrammarError("vocab_size must be >= 1")
    if order.second:
        return 4 * v**3 + 4 * v**2 + v
    return 4 * v**2 + 4 * v + v


@dataclass
class Sentence:
    """One sentence as id sequences.

    ``gold_heads`` uses 0 for the imaginary root and 1-based token positions.
    """

    pos_ids: np.ndarray
    lex_ids: np.ndarray | None = None
    gold_heads: np.ndarray | None = None
    forms: Sequence[str] = ()
    tags: Sequence[str] = ()
    is_punct: np.ndarray | None = None

    def __post_init__(self):
        self.pos_ids = np.asarray(self.pos_ids, dtype=np.int64)
        if self.pos_ids.ndim != 1 or len(self.pos_ids) < 1:
            raise GrammarError("sentence must contain at least one token")
        n = len(self.pos_ids)
        if self.lex_ids is not None:
            self.lex_ids = np.asarray(self.lex_ids, dtype=np.int64)
            if len(self.lex_ids) != n:
                raise GrammarError("lexical ids misaligned with POS ids")
        if self.gold_heads is not None:
            self.gold_heads = np.asarray(self.gold_heads, dtype=np.int64)
            if len(self.gold_heads) != n:
                raise GrammarError("gold heads misaligned with tokens")
        if self.is_punct is None:
            self.is_punct = np.zeros(n, dtype=bool)
        else:
            self.is_punct = np.asarray(self.is_punct, dtype=bool)
        if not self.forms:
            self.forms = tuple(str(i) for i in self.pos_ids)
        if not self.tags:
            self.tags = tuple(self.forms)

    def __len__(self) -> int:
        return len(self.pos_ids)

    def ids(self, lexical: bool) -> np.ndarray:
        if lexical:
            if self.lex_ids is None:
                raise GrammarError("sentence has no lexical view")
            return self.lex_ids
        return self.pos_ids

    @property
    def gold_is_model_tree(self) -> bool:
        """True when the gold tree is projective with exactly one root child."""
        from .trees import is_projective_single_root

        return self.gold_heads is not None and is_projective_single_root(self.gold_heads)
