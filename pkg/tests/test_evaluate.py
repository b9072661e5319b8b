import math

import pytest

from multislt.evaluate import bleu, classify_language, language_audit


def test_bleu_perfect_match():
    assert bleu(["a b c d"], ["a b c d"]) == pytest.approx(100.0)


def test_bleu_empty_hypothesis_scores_zero():
    assert bleu([""], ["a b c"]) == 0.0


def test_bleu_hand_oracle():
    # hyp "a b c d" vs ref "a b c e":
    #   p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 = (0+1)/(1+1) smoothed
    expected = 100.0 * math.exp(
        (math.log(3 / 4) + math.log(2 / 3) + math.log(1 / 2) + math.log(1 / 2)) / 4)
    assert bleu(["a b c d"], ["a b c e"]) == pytest.approx(expected, abs=1e-9)


def test_bleu_brevity_penalty():
    # hyp shorter than ref: BP = exp(1 - 4/2)
    score = bleu(["a b"], ["a b c d"])
    no_bp = 100.0 * math.exp(
        (math.log(2 / 2) + math.log(1 / 1) + math.log(1 / 1) + math.log(1 / 1)) / 4)
    assert score == pytest.approx(no_bp * math.exp(-1.0), abs=1e-9)


def test_bleu_permutation_invariant():
    hyps = ["a b c", "d e f", "g h"]
    refs = ["a b x", "d e f", "g y"]
    a = bleu(hyps, refs)
    b = bleu(hyps[::-1], refs[::-1])
    assert a == pytest.approx(b, abs=1e-12)


def test_bleu_100_iff_all_equal():
    assert bleu(["a b", "c d"], ["a b", "c d"]) == pytest.approx(100.0)
    assert bleu(["a b", "c x"], ["a b", "c d"]) < 100.0


def test_bleu_errors():
    with pytest.raises(ValueError, match="empty"):
        bleu([], [])
    with pytest.raises(ValueError, match="mismatch"):
        bleu(["a"], ["a", "b"])


ALPHABETS = {"A": set("abc"), "B": set("xyz")}


def test_classify_majority_membership():
    assert classify_language("aabx", ALPHABETS) == "A"
    assert classify_language("xyz", ALPHABETS) == "B"
    assert classify_language("", ALPHABETS) is None
    assert classify_language("ax", ALPHABETS) is None  # tie


def test_audit_all_correct():
    hyps = [("A", "abc"), ("A", "cab"), ("B", "xyz")]
    assert language_audit(hyps, ALPHABETS) == {"A": 1.0, "B": 1.0}


def test_audit_half_wrong_language():
    hyps = [("A", "abc"), ("A", "xyz"), ("A", "aa"), ("A", "zz")]
    assert language_audit(hyps, ALPHABETS)["A"] == 0.5


def test_audit_empty_hypothesis_counts_wrong():
    assert language_audit([("A", "")], ALPHABETS)["A"] == 0.0
