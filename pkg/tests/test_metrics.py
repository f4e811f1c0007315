import itertools
import math

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from lexmtl.errors import AlignmentError, UndefinedMetricError
from lexmtl.metrics import (LabelConfusion, MetricReport, bleu, corpus_bleu, evaluate_task,
                            f1_score, lcs_length, micro_confusion, prf, reports_to_csv, rouge_l,
                            rouge_n, summary_table, token_accuracy)

W = str.split


def brute_force_lcs(a, b):
    """Longest subsequence of ``a`` that is also a subsequence of ``b``, by enumeration."""
    def is_subsequence(sub, seq):
        it = iter(seq)
        return all(x in it for x in sub)

    for k in range(len(a), 0, -1):
        if any(is_subsequence(c, b) for c in itertools.combinations(a, k)):
            return k
    return 0


# -- BLEU ---------------------------------------------------------------------------------

def test_bleu_literal_brevity_example():
    assert bleu(W("a b c d"), W("a b c d e")) == pytest.approx(0.8, abs=1e-9)


def test_bleu_standard_brevity_is_exponential():
    assert bleu(W("a b c d"), W("a b c d e"), brevity="standard") == pytest.approx(math.exp(1 - 5 / 4))


def test_bleu_identity_and_empty():
    lines = [W("the council adopted it"), W("article one"), W("x")]
    assert corpus_bleu(lines, lines) == 1.0
    assert all(bleu(line, line) == 1.0 for line in lines)
    assert bleu([], W("a b")) == 0.0
    with pytest.raises(UndefinedMetricError):
        bleu(W("a"), [])


def test_bleu_no_unigram_overlap_is_zero():
    assert bleu(W("x y z"), W("a b c")) == 0.0


def test_corpus_bleu_pools_statistics():
    hyps, refs = [W("a b c"), W("d e")], [W("a b c"), W("d f")]
    # pooled: unigrams 4/5, bigrams 2/3, trigrams 1/1; no 4-grams
    assert corpus_bleu(hyps, refs) == pytest.approx((4 / 5 * 2 / 3) ** (1 / 3))
    sentence_mean = (bleu(hyps[0], refs[0]) + bleu(hyps[1], refs[1])) / 2
    assert sentence_mean == pytest.approx(0.75)
    with pytest.raises(AlignmentError):
        corpus_bleu(hyps, refs[:1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=2, max_size=8, unique=True), st.randoms())
def test_bleu_reordering_lowers_score(tokens, rnd):
    shuffled = tokens[:]
    rnd.shuffle(shuffled)
    assume(shuffled != tokens)
    assert bleu(shuffled, tokens) < bleu(tokens, tokens)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 5), max_size=10), st.lists(st.integers(0, 5), min_size=1, max_size=10))
def test_bleu_in_unit_interval(h, r):
    assert 0.0 <= bleu(h, r) <= 1.0


# -- ROUGE ---------------------------------------------------------------------------------

def test_rouge_1_example():
    assert rouge_n(W("a b c"), W("a b d"), 1) == pytest.approx(2 / 3, abs=1e-9)


def test_rouge_n_identity_disjoint_and_multi_reference():
    assert rouge_n(W("a b c"), W("a b c"), 2) == 1.0
    assert rouge_n(W("a b"), W("c d"), 1) == 0.0
    assert rouge_n(W("a b"), [W("a c"), W("b d e")], 1) == pytest.approx(2 / 5)


def test_rouge_n_reference_too_short():
    with pytest.raises(UndefinedMetricError):
        rouge_n(W("a b"), [W("a")], 2)


def test_rouge_l_examples():
    assert rouge_l(W("a c"), W("a b c")) == pytest.approx(0.8)
    assert rouge_l(W("a b c"), W("a b c")) == 1.0
    assert lcs_length(list("abcdef"), list("fedcba")) == 1
    with pytest.raises(UndefinedMetricError):
        rouge_l(W("a"), [])


def test_lcs_matches_brute_force_exhaustively_on_short_binary_strings():
    seqs = [s for n in range(0, 6) for s in itertools.product("ab", repeat=n)]
    for a in seqs:
        for b in seqs:
            assert lcs_length(a, b) == brute_force_lcs(a, b)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=8), st.lists(st.integers(0, 3), max_size=8))
def test_lcs_matches_brute_force(a, b):
    assert lcs_length(a, b) == brute_force_lcs(a, b)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=2, max_size=8), st.lists(st.integers(0, 6), min_size=2, max_size=8),
       st.integers(0, 6))
def test_rouge_n_monotone_in_matching_ngrams(hyp, ref, extra):
    # appending a reference unigram to the hypothesis never lowers recall
    for n in (1, 2):
        before = rouge_n(hyp, ref, n)
        assert rouge_n(hyp + [ref[extra % len(ref)]], ref, n) >= before


# -- precision / recall / F1 -----------------------------------------------------------------

def test_f1_from_reported_precision_and_recall():
    assert f1_score(0.67, 0.63) == pytest.approx(0.6494, abs=1e-4)
    assert f1_score(0.67, 0.63) == pytest.approx(0.65, abs=5e-3)
    # without the factor 2 the reported value is unreachable
    assert f1_score(0.67, 0.63, literal=True) == pytest.approx(0.3247, abs=1e-4)


def test_prf_from_counts_hitting_reported_precision_and_recall():
    p, r, f = prf(LabelConfusion(tp=4221, fp=2079, fn=2479))
    assert (p, r) == (pytest.approx(0.67), pytest.approx(0.63))
    assert f == pytest.approx(0.6494, abs=1e-4)


def test_prf_hand_example_and_perfect():
    p, r, f = prf(LabelConfusion(tp=2, fp=1, fn=3))
    assert (p, r, f) == (pytest.approx(2 / 3), pytest.approx(2 / 5), pytest.approx(1 / 2))
    assert prf(LabelConfusion(tp=4)) == (1.0, 1.0, 1.0)


def test_prf_undefined_components():
    with pytest.raises(UndefinedMetricError, match="precision"):
        prf(LabelConfusion(fn=3))
    p, r, f = prf(LabelConfusion(fn=3), strict=False)
    assert math.isnan(p) and r == 0.0 and f == 0.0
    assert prf(LabelConfusion(fp=1, fn=1)) == (0.0, 0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 50), st.integers(0, 50), st.integers(0, 50))
def test_f1_lies_between_precision_and_recall(tp, fp, fn):
    p, r, f = prf(LabelConfusion(tp, fp, fn))
    assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12


# -- evaluate_task ------------------------------------------------------------------------------

label_sets = st.lists(st.frozensets(st.integers(0, 6), max_size=4), min_size=1, max_size=8)


@settings(max_examples=60, deadline=None)
@given(label_sets, st.data())
def test_micro_average_matches_per_sample_brute_force(gold, data):
    pred = data.draw(st.lists(st.frozensets(st.integers(0, 6), max_size=4),
                              min_size=len(gold), max_size=len(gold)))
    tp = sum(1 for p, g in zip(pred, gold) for c in p if c in g)
    fp = sum(1 for p, g in zip(pred, gold) for c in p if c not in g)
    fn = sum(1 for p, g in zip(pred, gold) for c in g if c not in p)
    conf = micro_confusion(pred, gold)
    assert (conf.tp, conf.fp, conf.fn) == (tp, fp, fn)
    values = evaluate_task("classification", pred, gold).values
    if tp + fp:
        assert values["precision"] == pytest.approx(tp / (tp + fp))
    if tp + fn:
        assert values["recall"] == pytest.approx(tp / (tp + fn))


def test_evaluate_identity_scores_one():
    seqs = [W("a b c d"), W("e f g")]
    assert evaluate_task("translation", seqs, seqs).values == {"bleu": 1.0}
    assert set(evaluate_task("summarization", seqs, seqs).values.values()) == {1.0}
    sets = [{1, 2}, {3}]
    assert evaluate_task("classification", sets, sets).values == {"precision": 1.0, "recall": 1.0,
                                                                   "f1": 1.0}


def test_evaluate_empty_classification_prediction():
    values = evaluate_task("classification", [set(), set()], [{1}, {2, 3}]).values
    assert math.isnan(values["precision"])
    assert values["recall"] == 0.0 and values["f1"] == 0.0


def test_evaluate_summarization_is_mean_over_samples():
    hyps, refs = [W("a b"), W("c d e")], [W("a x"), W("c d e")]
    values = evaluate_task("summarization", hyps, refs).values
    assert values["rouge_1"] == pytest.approx((0.5 + 1.0) / 2)
    assert values["rouge_2"] == pytest.approx((0.0 + 1.0) / 2)


def test_evaluate_alignment_error():
    with pytest.raises(AlignmentError):
        evaluate_task("translation", [W("a")], [])


def test_token_accuracy():
    assert token_accuracy([[1, 2, 3]], [[1, 2, 4]]) == pytest.approx(2 / 3)
    assert token_accuracy([[1, 2]], [[1, 2]], eos=0) == 1.0
    assert token_accuracy([[1, 2, 5]], [[1, 2]], eos=0) == pytest.approx(2 / 3)


def test_report_rendering():
    rep = MetricReport("de-en", "test", {"bleu": 0.25}, 3)
    assert reports_to_csv([rep]) == "task,dataset,metric,value,n_samples\nde-en,test,bleu,0.25,3\n"
    table = summary_table([rep]).splitlines()
    assert table[0].split() == ["task", "dataset", "metric", "value", "n"]
    assert table[2].split() == ["de-en", "test", "bleu", "0.2500", "3"]
