import numpy as np
import pytest

from sodmv.data import read_conllu_string
from sodmv.evaluate import PunctPolicy, evaluate_uas, random_projective_baseline
from sodmv.grammar import GrammarError, Sentence

TEXT = """1\tThe\tthe\tDET\t_\t_\t2\tdet\t_\t_
2\tdog\tdog\tNOUN\t_\t_\t3\tnsubj\t_\t_
3\tbarks\tbark\tVERB\t_\t_\t0\troot\t_\t_
4\t.\t.\tPUNCT\t_\t_\t3\tpunct\t_\t_

"""


def test_identity_scores_one():
    gold = read_conllu_string(TEXT).sentences
    rep = evaluate_uas([s.gold_heads for s in gold], gold)
    assert rep.uas == 1.0
    assert rep.lines()[0] == "uas 1.0000"


def test_half_correct():
    gold = [Sentence([0, 0, 0, 0], gold_heads=[2, 0, 2, 3])]
    rep = evaluate_uas([[2, 0, 1, 1]], gold, PunctPolicy.INCLUDE)
    assert rep.uas == 0.5 and (rep.correct, rep.scored) == (2, 4)


def test_punctuation_policy():
    gold = read_conllu_string(TEXT).sentences
    pred = [[2, 3, 0, 1]]  # only the punctuation head is wrong
    assert evaluate_uas(pred, gold, "exclude").uas == 1.0
    assert evaluate_uas(pred, gold, "include").uas == 0.75


def test_alignment_errors():
    gold = read_conllu_string(TEXT).sentences
    with pytest.raises(GrammarError, match="alignment mismatch"):
        evaluate_uas([[0, 1, 1]], gold)
    with pytest.raises(GrammarError, match="alignment mismatch"):
        evaluate_uas([], gold)


def test_length_buckets():
    short = Sentence([0] * 3, gold_heads=[0, 1, 1])
    long = Sentence([0] * 12, gold_heads=[0] + [1] * 11)
    rep = evaluate_uas([[0, 1, 1], [0] + [3] + [2] * 10], [short, long], "include")
    assert rep.buckets["<=10"][1:] == (3, 3)
    assert rep.buckets["<=15"][1:] == (4, 15)
    assert rep.buckets["all"][0] == pytest.approx(4 / 15)
    assert any(line.startswith("bucket <=40") for line in rep.lines())


def test_random_baseline_is_in_range():
    gold = [Sentence([0] * n, gold_heads=[0] + list(range(1, n))) for n in (3, 5, 8)]
    b = random_projective_baseline(gold, seed=1, samples=20)
    assert 0.0 < b < 1.0
    assert b == random_projective_baseline(gold, seed=1, samples=20)
