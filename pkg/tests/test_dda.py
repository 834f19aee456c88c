"""Corruption, LCS labeling, the consistency predictor, and smoothing."""

import functools
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cofact import (
    CorpusSpec,
    DDAConfig,
    PredictorHead,
    corrupt_summary,
    dda_teacher_pass,
    generate_corpus,
    label_tokens,
    predict_scores,
    predictor_features,
    smooth,
    train_predictor,
)
from cofact.attention import important_count
from cofact.dda import CONSISTENT, INCONSISTENT, build_labeled_dataset, gold_labeled, score_step
from cofact.errors import ConfigurationError
from cofact.ict import content_mask


@functools.lru_cache(maxsize=None)
def _lcs_recursive(a: tuple, b: tuple) -> int:
    """Independent LCS oracle: plain memoized recursion."""
    if not a or not b:
        return 0
    if a[-1] == b[-1]:
        return _lcs_recursive(a[:-1], b[:-1]) + 1
    return max(_lcs_recursive(a[:-1], b), _lcs_recursive(a, b[:-1]))


def _is_subsequence(sub: list, seq: list) -> bool:
    it = iter(seq)
    return all(tok in it for tok in sub)


token_lists = st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), min_size=1, max_size=8)


class TestLabelTokens:
    def test_identical_all_consistent(self):
        assert label_tokens(["a", "b"], ["a", "b"]) == [CONSISTENT, CONSISTENT]

    def test_disjoint_all_inconsistent(self):
        assert label_tokens(["a", "b"], ["c", "d"]) == [INCONSISTENT, INCONSISTENT]

    def test_known_alignment(self):
        assert label_tokens(list("abXd"), list("abcd")) == [0, 0, 1, 0]

    def test_all_consistent_iff_identical(self):
        assert label_tokens(["a", "b", "c"], ["a", "c"]) != [0, 0, 0]

    @given(corrupted=token_lists, gold=token_lists)
    @settings(max_examples=150, deadline=None)
    def test_matches_lcs_oracle(self, corrupted, gold):
        labels = label_tokens(corrupted, gold)
        consistent = [tok for tok, lab in zip(corrupted, labels) if lab == CONSISTENT]
        # consistent tokens form a common subsequence of maximal length
        assert _is_subsequence(consistent, corrupted)
        assert _is_subsequence(consistent, gold)
        assert len(consistent) == _lcs_recursive(tuple(corrupted), tuple(gold))


@pytest.fixture(scope="module")
def corpus():
    spec = CorpusSpec(n_train=60, n_test=10, seed=21)
    return generate_corpus(spec)


class TestCorruptSummary:
    def test_seeded_corruption_is_deterministic(self, corpus):
        train, _test, _vocab, grammar, _card = corpus
        ex = train[0]
        a = corrupt_summary(ex, grammar, random.Random(5))
        b = corrupt_summary(ex, grammar, random.Random(5))
        assert a.tokens == b.tokens and a.labels == b.labels

    def test_corruption_differs_from_gold(self, corpus):
        train, _test, _vocab, grammar, _card = corpus
        rng = random.Random(0)
        for ex in train[:30]:
            out = corrupt_summary(ex, grammar, rng)
            if out is None:
                continue
            assert out.tokens != ex.summary
            assert INCONSISTENT in out.labels
            assert len(out.labels) == len(out.tokens)

    def test_swapped_token_labeled_inconsistent(self, corpus):
        train, _test, _vocab, grammar, _card = corpus
        rng = random.Random(1)
        out = corrupt_summary(train[0], grammar, rng)
        diffs = [i for i, (a, b) in enumerate(zip(out.tokens, train[0].summary)) if a != b]
        assert diffs
        for i in diffs:
            assert out.labels[i] == INCONSISTENT

    def test_no_distractors_skips(self, corpus):
        train, _test, _vocab, grammar, _card = corpus
        ex = train[0]
        bare = type(ex)(
            example_id=ex.example_id,
            document=ex.document,
            summary=ex.summary,
            gold_facts=ex.gold_facts,
            distractor_facts=(),
            entity_spans=ex.entity_spans,
        )
        assert corrupt_summary(bare, grammar, random.Random(0)) is None

    def test_build_labeled_dataset_mix(self, corpus):
        train, _test, _vocab, grammar, _card = corpus
        labeled, skipped = build_labeled_dataset(train, grammar, seed=0)
        origins = {ls.origin for ls in labeled}
        assert origins == {"gold", "corrupted"}
        assert skipped == 0
        gold = [ls for ls in labeled if ls.origin == "gold"]
        assert all(set(ls.labels) == {CONSISTENT} for ls in gold)


class TestPredictorFeatures:
    def test_equal_states_zero_difference_block(self):
        h = np.array([1.0, -2.0])
        z = predictor_features(h, h)
        np.testing.assert_array_equal(z[6:], np.zeros(2))

    def test_zero_counterfactual(self):
        h = np.array([1.0, 2.0])
        z = predictor_features(h, np.zeros(2))
        np.testing.assert_array_equal(z, [1, 2, 0, 0, 0, 0, 1, 2])

    def test_exact_arithmetic(self):
        z = predictor_features(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        np.testing.assert_array_equal(z, [1, 2, 3, 4, 3, 8, -2, -2])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            predictor_features(np.zeros(2), np.zeros(3))

    def test_norm_zero_iff_both_zero(self):
        assert np.linalg.norm(predictor_features(np.zeros(3), np.zeros(3))) == 0.0
        assert np.linalg.norm(predictor_features(np.ones(3), np.zeros(3))) > 0.0


class TestPredictScores:
    def test_zero_head_is_uniform(self):
        head = PredictorHead.zeros(4)
        s_c, s_ic = predict_scores(np.ones(16), head)
        assert (s_c, s_ic) == (0.5, 0.5)

    def test_bias_saturation(self):
        head = PredictorHead(np.zeros((2, 8)), np.array([0.0, 10.0]))
        _s_c, s_ic = predict_scores(np.zeros(8), head)
        assert s_ic > 0.9999

    @given(z=st.lists(st.floats(-5, 5), min_size=8, max_size=8), seed=st.integers(0, 100))
    @settings(max_examples=60, deadline=None)
    def test_always_a_distribution(self, z, seed):
        rng = np.random.default_rng(seed)
        head = PredictorHead(rng.normal(size=(2, 8)), rng.normal(size=2))
        s_c, s_ic = predict_scores(np.array(z), head)
        assert 0.0 <= s_c <= 1.0 and 0.0 <= s_ic <= 1.0
        assert s_c + s_ic == pytest.approx(1.0, abs=1e-6)

    def test_feature_length_checked(self):
        with pytest.raises(ValueError):
            predict_scores(np.zeros(7), PredictorHead.zeros(2))


class TestSmooth:
    @pytest.mark.parametrize(
        "s_ic,expected",
        [(0.0, 0.0), (0.25, 0.75), (0.5, 1.0), (0.8, 1.0), (1.0, 1.0)],
    )
    def test_values(self, s_ic, expected):
        assert smooth(s_ic) == pytest.approx(expected, abs=1e-12)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            smooth(-0.1)
        with pytest.raises(ValueError):
            smooth(1.1)

    @given(s=st.floats(0, 1))
    @settings(max_examples=100, deadline=None)
    def test_range(self, s):
        assert 0.0 <= smooth(s) <= 1.0

    @given(a=st.floats(0, 0.5), b=st.floats(0, 0.5))
    @settings(max_examples=60, deadline=None)
    def test_monotone_below_half(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert smooth(lo) <= smooth(hi) + 1e-12

    def test_continuous_at_half(self):
        assert smooth(0.5 - 1e-9) == pytest.approx(smooth(0.5), abs=1e-6)


class TestTeacherPass:
    def test_masked_count_per_step(self, corpus, small_base_model, small_corpus):
        vocab = small_corpus["vocab"]
        ex = small_corpus["train"][0]
        src = vocab.encode(ex.document, frame=True)
        tgt = vocab.encode(ex.summary, frame=True)
        rho = 0.5
        steps = dda_teacher_pass(small_base_model, src, tgt, rho)
        n_content = int(content_mask(src, vocab).sum())
        expected = important_count(n_content, rho)
        assert all(len(s.masked_positions) == expected for s in steps)
        assert len(steps) == len(tgt) - 1

    def test_deterministic(self, small_base_model, small_corpus):
        vocab = small_corpus["vocab"]
        ex = small_corpus["train"][1]
        src = vocab.encode(ex.document, frame=True)
        tgt = vocab.encode(ex.summary, frame=True)
        a = dda_teacher_pass(small_base_model, src, tgt, 0.5)
        b = dda_teacher_pass(small_base_model, src, tgt, 0.5)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.hidden, sb.hidden)
            np.testing.assert_array_equal(sa.hidden_masked, sb.hidden_masked)

    def test_masked_states_differ_somewhere(self, small_base_model, small_corpus):
        vocab = small_corpus["vocab"]
        hit = False
        for ex in small_corpus["train"][:5]:
            src = vocab.encode(ex.document, frame=True)
            tgt = vocab.encode(ex.summary, frame=True)
            for step in dda_teacher_pass(small_base_model, src, tgt, 0.5):
                if not np.allclose(step.hidden, step.hidden_masked):
                    hit = True
        assert hit


class TestTrainPredictor:
    def _pairs(self, corpus, model, vocab):
        train, _test, _v, grammar, _card = corpus
        labeled, _ = build_labeled_dataset(train[:40], grammar, seed=0)
        by_id = {ex.example_id: ex for ex in train}
        return [
            (vocab.encode(by_id[ls.doc_id].document, frame=True), ls)
            for ls in labeled
        ]

    def test_zero_steps_head_unchanged(self, small_corpus, small_base_model):
        pairs = self._pairs(
            (small_corpus["train"], None, None, small_corpus["grammar"], None),
            small_base_model,
            small_corpus["vocab"],
        )
        head, report = train_predictor(small_base_model, pairs, DDAConfig(steps=0, seed=0))
        assert np.all(head.weight == 0) and np.all(head.bias == 0)
        assert "heldout_accuracy" in report

    def test_model_untouched(self, small_corpus, small_base_model):
        pairs = self._pairs(
            (small_corpus["train"], None, None, small_corpus["grammar"], None),
            small_base_model,
            small_corpus["vocab"],
        )
        before = small_base_model.parameter_checksums()
        train_predictor(small_base_model, pairs, DDAConfig(steps=30, seed=0))
        assert small_base_model.parameter_checksums() == before

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            DDAConfig(rho=0.0)
        with pytest.raises(ConfigurationError):
            DDAConfig(heldout_fraction=1.5)


class TestScoreStep:
    def test_uses_smooth(self):
        head = PredictorHead(np.zeros((2, 8)), np.array([10.0, 0.0]))  # s_ic ~ 0
        score = score_step(np.zeros(2), np.zeros(2), head)
        assert score.s_ic < 1e-4
        assert score.s_tilde == pytest.approx(smooth(score.s_ic), abs=1e-12)
