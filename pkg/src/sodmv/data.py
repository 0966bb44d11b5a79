"""Treebank input/output and synthetic corpora."""

from __future__ import annotations

import io
import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .grammar import (
    Decision,
    Direction,
    NEG_INF,
    GrammarError,
    Order,
    RuleTables,
    Sentence,
    Valence,
    Vocab,
    VocabMode,
    build_vocab,
    validate_rule_tables,
)


class ConlluError(ValueError):
    pass


@dataclass
class RawSentence:
    forms: tuple[str, ...]
    tags: tuple[str, ...]
    gold_heads: np.ndarray
    is_punct: np.ndarray
    rows: tuple[tuple[str, ...], ...] = ()  # original 10-column token lines, for rewriting

    def __len__(self) -> int:
        return len(self.forms)


@dataclass
class RawCorpus:
    sentences: list[RawSentence]
    source: str
    max_len: int | None = None
    dropped: int = 0


@dataclass
class Corpus:
    """Sentences with ids under ``vocab``.

    ``lex_vocab`` is set when the sentences also carry a lexicalized view.
    """

    sentences: list[Sentence]
    vocab: Vocab
    provenance: str
    lex_vocab: Vocab | None = None
    max_len: int | None = None
    sample_log_probs: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sentences)


# -- CoNLL-U -----------------------------------------------------------------------

POS_COLUMNS = {"upos": 3, "xpos": 4}


def _parse_conllu(lines: Iterable[str], source: str, max_len: int | None, pos_column: str) -> RawCorpus:
    col = POS_COLUMNS[pos_column.lower()]
    out = RawCorpus([], source, max_len)
    rows: list[tuple[str, ...]] = []

    def flush():
        if not rows:
            return
        if max_len is not None and len(rows) > max_len:
            out.dropped += 1
        else:
            heads = np.array([int(r[6]) for r in rows], dtype=np.int64)
            tags = tuple(r[col] if r[col] != "_" else r[3] for r in rows)
            punct = np.array([r[3] == "PUNCT" for r in rows], dtype=bool)
            out.sentences.append(RawSentence(tuple(r[1] for r in rows), tags, heads, punct, tuple(rows)))
        rows.clear()

    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluError(f"{source}:{lineno}: expected 10 tab-separated columns, found {len(cols)}")
        if "-" in cols[0] or "." in cols[0]:
            continue
        try:
            int(cols[6])
        except ValueError:
            raise ConlluError(f"{source}:{lineno}: HEAD {cols[6]!r} is not an integer") from None
        rows.append(tuple(cols))
    flush()
    return out


def read_conllu(path: str | Path, max_len: int | None = None, pos_column: str = "upos") -> RawCorpus:
    """Read a CoNLL-U file; sentences longer than ``max_len`` tokens are dropped."""
    with open(path, encoding="utf-8") as f:
        return _parse_conllu(f, str(path), max_len, pos_column)


def read_conllu_string(text: str, max_len: int | None = None, pos_column: str = "upos") -> RawCorpus:
    return _parse_conllu(io.StringIO(text), "<string>", max_len, pos_column)


def _sentence_rows(sent, heads) -> list[list[str]]:
    heads = [int(h) for h in heads]
    rows = []
    original = getattr(sent, "rows", ())
    for i, h in enumerate(heads):
        if original:
            cols = list(original[i])
        else:
            tag = sent.tags[i]
            upos = "PUNCT" if sent.is_punct is not None and sent.is_punct[i] else tag
            cols = [str(i + 1), sent.forms[i], "_", upos, tag, "_", "_", "_", "_", "_"]
        cols[6] = str(h)
        cols[7] = "root" if h == 0 else "dep"
        cols[8] = "_"
        rows.append(cols)
    return rows


def format_conllu(sentences: Sequence, heads: Sequence[Sequence[int]] | None = None) -> str:
    """CoNLL-U text for sentences (raw or id-level) with their gold or the given heads."""
    buf = []
    for k, s in enumerate(sentences):
        h = s.gold_heads if heads is None else heads[k]
        if h is None:
            raise ConlluError(f"sentence {k} has no heads to write")
        if len(h) != len(s):
            raise ConlluError(f"sentence {k}: {len(h)} heads for {len(s)} tokens")
        buf.extend("\t".join(r) for r in _sentence_rows(s, h))
        buf.append("")
    return "\n".join(buf) + ("\n" if buf else "")


def write_conllu(path: str | Path | TextIO, sentences: Sequence, heads=None) -> None:
    text = format_conllu(sentences, heads)
    if hasattr(path, "write"):
        path.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


# -- corpora -----------------------------------------------------------------------


def to_sentences(raw: Sequence[RawSentence], pos_vocab: Vocab, lex_vocab: Vocab | None = None) -> list[Sentence]:
    """Map raw sentences to ids; unknown POS tags raise, rare or unseen words back off to their tag."""
    out = []
    for s in raw:
        pos = [pos_vocab.pos_id(t) for t in s.tags]
        lex = [lex_vocab.lex_id(f, t) for f, t in zip(s.forms, s.tags)] if lex_vocab is not None else None
        out.append(Sentence(pos, lex, s.gold_heads, s.forms, s.tags, s.is_punct))
    return out


def build_parallel_views(raw: RawCorpus | Sequence, min_freq: int = 2) -> tuple[Corpus, Corpus]:
    """POS view and word/POS view over the same sentences, aligned token by token.

    Both corpora hold the same :class:`Sentence` objects, each carrying POS ids
    and lexical ids; they differ in which vocabulary they expose.
    """
    sents = raw.sentences if isinstance(raw, RawCorpus) else list(raw)
    source = raw.source if isinstance(raw, RawCorpus) else "<memory>"
    max_len = raw.max_len if isinstance(raw, RawCorpus) else None
    pos_vocab = build_vocab(sents, VocabMode.UNLEXICALIZED)
    lex_vocab = build_vocab(sents, VocabMode.LEXICALIZED, min_freq)
    sentences = to_sentences(sents, pos_vocab, lex_vocab)
    pos_corpus = Corpus(sentences, pos_vocab, source, lex_vocab, max_len)
    lex_corpus = Corpus(sentences, lex_vocab, source, None, max_len)
    return pos_corpus, lex_corpus


# -- grammars ----------------------------------------------------------------------


def save_grammar(path: str | Path, tables: RuleTables, vocab: Vocab) -> None:
    doc = {
        "order": tables.order.value,
        "vocab": vocab.to_dict(),
        "root": tables.root.tolist(),
        "child": tables.child.tolist(),
        "decision": tables.decision.tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_grammar(path: str | Path) -> tuple[RuleTables, Vocab]:
    """Read a grammar saved by :func:`save_grammar` (log-probabilities)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        vocab = Vocab.from_dict(doc["vocab"])
        tables = RuleTables(
            Order(doc["order"]),
            np.asarray(doc["root"], dtype=np.float64),
            np.asarray(doc["child"], dtype=np.float64),
            np.asarray(doc["decision"], dtype=np.float64),
            vocab.lexicalized,
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise GrammarError(f"{path}: not a grammar file ({exc})") from None
    tables.check_shapes()
    if tables.vocab_size != vocab.size:
        raise GrammarError(f"{path}: tables cover {tables.vocab_size} symbols, vocabulary has {vocab.size}")
    return tables, vocab


def random_grammar(
    n_tags: int,
    seed: int,
    order: Order = Order.FIRST,
    temperature: float = 0.3,
    first_continue: tuple[float, float] = (0.2, 0.6),
    next_continue: tuple[float, float] = (0.0, 0.3),
) -> tuple[RuleTables, Vocab]:
    """Random grammar over tags ``t0 .. t{K-1}``.

    ROOT and CHILD logits are standard normal divided by ``temperature``.
    CONTINUE probabilities are drawn uniformly from ``first_continue`` for the
    first child in a direction and from ``next_continue`` afterwards, which
    keeps sampled sentences away from both length 1 and runaway growth.
    """
    if n_tags < 1:
        raise GrammarError("need at least one tag")
    vocab = Vocab(VocabMode.UNLEXICALIZED, tuple(f"t{k}" for k in range(n_tags)))
    rng = np.random.default_rng(seed)
    shaped = RuleTables.random(n_tags, order, rng, temperature=temperature)
    X = shaped.decision.shape[1]
    cont = np.empty((n_tags, X, 2, 2))
    cont[..., int(Valence.NOCHILD)] = rng.uniform(*first_continue, size=(n_tags, X, 2))
    cont[..., int(Valence.HASCHILD)] = rng.uniform(*next_continue, size=(n_tags, X, 2))
    decision = np.empty((n_tags, X, 2, 2, 2))
    decision[..., int(Decision.CONTINUE)] = cont
    decision[..., int(Decision.STOP)] = 1.0 - cont
    with np.errstate(divide="ignore"):
        log_dec = np.maximum(np.log(decision), NEG_INF)
    return RuleTables(order, shaped.root, shaped.child, log_dec, False), vocab


# -- sampling ----------------------------------------------------------------------


class _TooLong(Exception):
    pass


class _Sampler:
    def __init__(self, tables: RuleTables, rng: np.random.Generator, max_len: int):
        self.t = tables
        self.rng = rng
        self.max_len = max_len
        self.p_root, self.p_child, self.p_dec = tables.probabilities()
        self.cum_root = np.cumsum(self.p_root)
        self.cum_child = np.cumsum(self.p_child, axis=-1)
        self.cum_dec = np.cumsum(self.p_dec, axis=-1)

    def _draw(self, cum: np.ndarray) -> int:
        u = self.rng.random() * cum[-1]
        k = 0
        while k < len(cum) - 1 and u >= cum[k]:
            k += 1
        return k

    def _extra(self, parent_tok: int, sib_tok: int) -> int:
        # token ids here are already offset by one; 0 means NULL or ROOT
        order = self.t.order
        if order is Order.SECOND_SIBLING:
            return sib_tok
        if order is Order.SECOND_GRAND:
            return parent_tok
        return 0

    def sample(self):
        """Return (ids, heads, log_prob) or raise _TooLong."""
        self.size = 1
        self.logp = 0.0
        c = self._draw(self.cum_root)
        self.logp += self.t.root[c]
        tree = self._expand(c, 0)
        flat: list[tuple[int, int, int]] = []  # (node, token, head node) in sentence order
        self._linearise(tree, 0, itertools.count(1), flat)
        position = {node: i + 1 for i, (node, _, _) in enumerate(flat)}
        ids = np.array([tok for _, tok, _ in flat], dtype=np.int64)
        heads = np.array([position[h] if h else 0 for _, _, h in flat], dtype=np.int64)
        return ids, heads, self.logp

    def _expand(self, tok: int, parent_extra: int):
        kids = {}
        for d in (Direction.LEFT, Direction.RIGHT):
            sib, val, gen = 0, Valence.NOCHILD, []
            while True:
                x = self._extra(parent_extra, sib)
                a = self._draw(self.cum_dec[tok, x, d, val])
                self.logp += self.t.decision[tok, x, d, val, a]
                if a == Decision.STOP:
                    break
                c = self._draw(self.cum_child[tok, x, d, val])
                self.logp += self.t.child[tok, x, d, val, c]
                self.size += 1
                if self.size > self.max_len:
                    raise _TooLong
                gen.append(c)
                sib, val = c + 1, Valence.HASCHILD
            kids[d] = gen
        left = [self._expand(c, tok + 1) for c in kids[Direction.LEFT]]
        right = [self._expand(c, tok + 1) for c in kids[Direction.RIGHT]]
        # outside-in: left kids already run left to right, right kids need reversing
        return tok, left, right[::-1]

    def _linearise(self, tree, head, counter, flat) -> None:
        tok, left, right = tree
        node = next(counter)
        for sub in left:
            self._linearise(sub, node, counter, flat)
        flat.append((node, tok, head))
        for sub in right:
            self._linearise(sub, node, counter, flat)

    def draw(self):
        """One (ids, heads, log_prob) draw, or ``None`` if it grew past ``max_len``."""
        try:
            return self.sample()
        except _TooLong:
            return None


def sample_tree(tables: RuleTables, rng: np.random.Generator, max_len: int):
    """One (ids, heads, log_prob) draw, or ``None`` if it grew past ``max_len``."""
    return _Sampler(tables, rng, max_len).draw()


def generate_synthetic(
    tables: RuleTables,
    vocab: Vocab,
    n_sentences: int,
    max_len: int,
    seed: int,
    window: int = 1000,
    max_reject_rate: float = 0.99,
) -> Corpus:
    """Sample (sentence, tree) pairs by running the generative story.

    Draws longer than ``max_len`` are rejected; if more than 99% of the last
    ``window`` draws were rejected the grammar is deemed too verbose.
    """
    report = validate_rule_tables(tables)
    if not report:
        raise GrammarError(f"grammar tables are not normalised: {report}")
    if tables.vocab_size != vocab.size:
        raise GrammarError("grammar and vocabulary sizes differ")
    rng = np.random.default_rng(seed)
    recent: deque[bool] = deque(maxlen=window)
    sentences, log_probs = [], []
    symbols = vocab.symbols
    sampler = _Sampler(tables, rng, max_len)
    while len(sentences) < n_sentences:
        draw = sampler.draw()
        recent.append(draw is None)
        if draw is None:
            if len(recent) == window and sum(recent) > max_reject_rate * window:
                raise GrammarError("grammar too verbose: almost every sample exceeds max_len")
            continue
        ids, heads, logp = draw
        forms = tuple(symbols[i] for i in ids)
        sentences.append(Sentence(ids, None, heads, forms, forms))
        log_probs.append(float(logp))
    return Corpus(sentences, vocab, f"synthetic:seed={seed}", None, max_len, log_probs)
