"""Metric oracles and evaluation reports."""

import functools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cofact import CorpusSpec, FactTriple, fact_precision, generate_corpus, rouge_l
from cofact.errors import MetricError
from cofact.evaluation import evaluate_decoder, render_table, rouge_l_prf, spearman


@functools.lru_cache(maxsize=None)
def _lcs_oracle(a: tuple, b: tuple) -> int:
    if not a or not b:
        return 0
    if a[-1] == b[-1]:
        return _lcs_oracle(a[:-1], b[:-1]) + 1
    return max(_lcs_oracle(a[:-1], b), _lcs_oracle(a, b[:-1]))


def _rouge_oracle(cand, ref):
    lcs = _lcs_oracle(tuple(cand), tuple(ref))
    p, r = lcs / len(cand), lcs / len(ref)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


class TestRougeL:
    def test_identical(self):
        assert rouge_l(["a", "b"], ["a", "b"]) == 1.0

    def test_disjoint(self):
        assert rouge_l(["a", "b"], ["c", "d"]) == 0.0

    def test_worked_example(self):
        # LCS("the cat sat", "the cat") = 2; P = 2/3, R = 1, F1 = 0.8
        assert rouge_l(["the", "cat", "sat"], ["the", "cat"]) == pytest.approx(0.8)

    def test_empty_raises(self):
        with pytest.raises(MetricError):
            rouge_l([], ["a"])
        with pytest.raises(MetricError):
            rouge_l(["a"], [])

    def test_against_brute_force_on_random_pairs(self):
        rng = np.random.default_rng(17)
        alphabet = list("abcdef")
        for _ in range(100):
            cand = [alphabet[i] for i in rng.integers(0, len(alphabet), rng.integers(1, 10))]
            ref = [alphabet[i] for i in rng.integers(0, len(alphabet), rng.integers(1, 10))]
            assert rouge_l(cand, ref) == pytest.approx(_rouge_oracle(cand, ref), abs=1e-12)

    @given(
        cand=st.lists(st.sampled_from("abcd"), min_size=1, max_size=8),
        ref=st.lists(st.sampled_from("abcd"), min_size=1, max_size=8),
    )
    @settings(max_examples=100, deadline=None)
    def test_f1_swap_symmetric_pr_swapped(self, cand, ref):
        p1, r1, f1 = rouge_l_prf(cand, ref)
        p2, r2, f2 = rouge_l_prf(ref, cand)
        assert f1 == pytest.approx(f2, abs=1e-12)
        assert (p1, r1) == pytest.approx((r2, p2), abs=1e-12)

    @given(cand=st.lists(st.sampled_from("abcd"), min_size=1, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_bounded(self, cand):
        assert 0.0 <= rouge_l(cand, ["a", "c"]) <= 1.0


class TestFactPrecision:
    t1 = FactTriple("tigers", "scored", "seven")
    t2 = FactTriple("sharks", "scored", "three")

    def test_all_gold(self):
        assert fact_precision(frozenset({self.t1}), frozenset({self.t1})) == 1.0

    def test_half(self):
        assert fact_precision(frozenset({self.t1, self.t2}), frozenset({self.t1})) == 0.5

    def test_vacuous(self):
        assert fact_precision(frozenset(), frozenset({self.t1})) == 1.0

    def test_removing_distractor_never_decreases(self):
        with_distractor = fact_precision(frozenset({self.t1, self.t2}), frozenset({self.t1}))
        without = fact_precision(frozenset({self.t1}), frozenset({self.t1}))
        assert without >= with_distractor


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(CorpusSpec(n_train=10, n_test=12, seed=4))


class TestEvaluateDecoder:

    def test_gold_outputs_score_perfectly(self, corpus):
        _train, test, vocab, grammar, _card = corpus
        by_doc = {tuple(vocab.encode(ex.document, frame=True)): ex for ex in test}

        def oracle_decode(source_ids):
            ex = by_doc[tuple(source_ids)]
            return vocab.encode(ex.summary, frame=True)[1:]

        report = evaluate_decoder(oracle_decode, test, grammar, vocab, label="gold")
        assert report.rouge_l == 1.0
        assert report.fact_precision == 1.0
        assert report.vacuous_count == 0

    def test_repeat_identical(self, corpus):
        _train, test, vocab, grammar, _card = corpus

        def fixed_decode(source_ids):
            return vocab.encode(["the", "tigers", "scored", "seven", "points", "."]) + [vocab.eos_id]

        a = evaluate_decoder(fixed_decode, test, grammar, vocab, label="fixed")
        b = evaluate_decoder(fixed_decode, test, grammar, vocab, label="fixed")
        assert a.to_record() == b.to_record()

    def test_empty_decode_counts_vacuous(self, corpus):
        _train, test, vocab, grammar, _card = corpus

        def empty_decode(source_ids):
            return [vocab.eos_id]

        report = evaluate_decoder(empty_decode, test, grammar, vocab, label="empty")
        assert report.vacuous_count == len(test)
        assert report.fact_precision == 1.0
        assert report.rouge_l == 0.0

    def test_table_layout(self, corpus):
        _train, test, vocab, grammar, _card = corpus

        def fixed_decode(source_ids):
            return [vocab.eos_id]

        report = evaluate_decoder(fixed_decode, test[:2], grammar, vocab, label="w/o all")
        table = render_table([report])
        lines = table.strip().splitlines()
        assert lines[0].split("\t") == ["label", "rouge_l", "fact_precision", "vacuous", "n"]
        assert lines[1].startswith("w/o all\t")


class TestSpearman:
    def test_perfect_positive(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)

    def test_perfect_negative(self):
        assert spearman([1, 2, 3], [5, 4, 3]) == pytest.approx(-1.0)

    def test_constant_input(self):
        assert spearman([1, 2, 3], [7, 7, 7]) == 0.0

    def test_tied_ranks(self):
        rho = spearman([1, 2, 3, 4], [1, 1, 2, 2])
        assert 0.0 < rho <= 1.0

    def test_bad_input(self):
        with pytest.raises(MetricError):
            spearman([1], [2])
