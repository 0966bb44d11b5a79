"""Unlabeled attachment scoring."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grammar import GrammarError

BUCKETS = (10, 15, 40, None)  # None: every length


class PunctPolicy(enum.Enum):
    INCLUDE = "include"
    EXCLUDE = "exclude"


def bucket_name(limit: int | None) -> str:
    return "all" if limit is None else f"<={limit}"


@dataclass
class EvalReport:
    uas: float
    correct: int
    scored: int
    punct_policy: PunctPolicy
    buckets: dict[str, tuple[float, int, int]] = field(default_factory=dict)  # name -> (uas, correct, scored)

    def lines(self) -> list[str]:
        out = [f"uas {self.uas:.4f}", f"tokens {self.correct}/{self.scored}", f"punct {self.punct_policy.value}"]
        for name, (u, c, n) in self.buckets.items():
            out.append(f"bucket {name} uas {u:.4f} tokens {c}/{n}")
        return out


def _heads(x) -> np.ndarray:
    h = getattr(x, "heads", None)
    if h is None:
        h = getattr(x, "gold_heads", x)
    return np.asarray(h, dtype=np.int64)


def evaluate_uas(predicted: Sequence, gold: Sequence, punct_policy: PunctPolicy | str = PunctPolicy.EXCLUDE) -> EvalReport:
    """Directed UAS. ``predicted`` holds trees or head arrays; ``gold`` holds sentences with gold heads."""
    policy = PunctPolicy(punct_policy)
    if len(predicted) != len(gold):
        raise GrammarError(f"alignment mismatch: {len(predicted)} predicted vs {len(gold)} gold sentences")
    tallies = {b: [0, 0] for b in BUCKETS}
    for k, (p, g) in enumerate(zip(predicted, gold)):
        ph, gh = _heads(p), _heads(g)
        if ph.shape != gh.shape:
            raise GrammarError(f"alignment mismatch in sentence {k}: {len(ph)} vs {len(gh)} tokens")
        keep = np.ones(len(gh), dtype=bool)
        if policy is PunctPolicy.EXCLUDE and getattr(g, "is_punct", None) is not None:
            keep = ~np.asarray(g.is_punct, dtype=bool)
        c, n = int(np.sum((ph == gh) & keep)), int(keep.sum())
        for b in BUCKETS:
            if b is None or len(gh) <= b:
                tallies[b][0] += c
                tallies[b][1] += n
    correct, scored = tallies[None]
    if scored == 0:
        raise GrammarError("no tokens to score")
    buckets = {bucket_name(b): (c / n if n else float("nan"), c, n) for b, (c, n) in tallies.items()}
    return EvalReport(correct / scored, correct, scored, policy, buckets)


def random_projective_baseline(gold: Sequence, seed: int = 0, samples: int = 1) -> float:
    """UAS of uniformly drawn projective single-root-child trees (mean over ``samples`` draws)."""
    from .trees import random_projective_tree

    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(samples):
        pred = [random_projective_tree(len(_heads(g)), rng) for g in gold]
        scores.append(evaluate_uas(pred, gold, PunctPolicy.INCLUDE).uas)
    return float(np.mean(scores))
