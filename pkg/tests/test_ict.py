"""Counterfactual training losses and the training loop contracts."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cofact import ICTConfig, ModelConfig, build_model, train_ict
from cofact.errors import ConfigurationError
from cofact.ict import (
    content_mask,
    ict_batch_graph,
    ict_step_losses,
    kl_loss,
    total_loss,
    unlikelihood_loss,
    xent_loss,
)
from cofact.attention import partition, partition_to_masks

from conftest import encode_examples

EPS = 1e-9


def distributions(n_steps=3, width=4):
    return st.lists(
        st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=width, max_size=width).map(
            lambda row: [x / sum(row) for x in row]
        ),
        min_size=n_steps,
        max_size=n_steps,
    )


class TestUnlikelihoodLoss:
    def test_all_zero_probs(self):
        loss = float(unlikelihood_loss([0.0, 0.0, 0.0], EPS))
        assert loss == pytest.approx(-3 * math.log1p(-EPS), abs=1e-12)
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_log_identity(self):
        assert float(unlikelihood_loss([1.0 - 1.0 / math.e], EPS)) == pytest.approx(1.0, abs=1e-9)

    def test_clamp_at_one(self):
        assert float(unlikelihood_loss([1.0], EPS)) == pytest.approx(-math.log(EPS), rel=1e-6)

    @given(probs=st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_nonnegative(self, probs):
        assert float(unlikelihood_loss(probs, EPS)) >= 0.0

    def test_increasing_in_each_probability(self):
        low = float(unlikelihood_loss([0.2, 0.5], EPS))
        high = float(unlikelihood_loss([0.3, 0.5], EPS))
        assert high > low


class TestXentLoss:
    def test_perfect_probs(self):
        assert float(xent_loss([1.0, 1.0], EPS)) == pytest.approx(0.0, abs=1e-6)

    def test_log_identity(self):
        assert float(xent_loss([1.0 / math.e], EPS)) == pytest.approx(1.0, abs=1e-9)

    def test_uniform_distribution(self):
        vocab_size = 12
        steps = 5
        loss = float(xent_loss([1.0 / vocab_size] * steps, EPS))
        assert loss == pytest.approx(steps * math.log(vocab_size), rel=1e-9)

    @given(probs=st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_nonnegative(self, probs):
        assert float(xent_loss(probs, EPS)) >= 0.0


class TestKLLoss:
    def test_identical_distributions(self):
        dist = [[0.25, 0.25, 0.25, 0.25], [0.7, 0.1, 0.1, 0.1]]
        assert float(kl_loss(dist, dist, EPS)) == pytest.approx(0.0, abs=1e-12)

    def test_point_mass_versus_uniform(self):
        loss = float(kl_loss([[1.0, 0.0]], [[0.5, 0.5]], EPS))
        assert loss == pytest.approx(-math.log(2.0), abs=1e-12)

    @given(p=distributions(), q=distributions())
    @settings(max_examples=60, deadline=None)
    def test_nonpositive(self, p, q):
        assert float(kl_loss(p, q, EPS)) <= 1e-12

    @given(p=distributions())
    @settings(max_examples=30, deadline=None)
    def test_zero_iff_equal(self, p):
        assert float(kl_loss(p, p, EPS)) == pytest.approx(0.0, abs=1e-9)


class TestLossAssembly:
    def test_total_reduction_gamma_lambda_zero(self):
        l_unl, l_xent, l_kl = torch.tensor(1.5), torch.tensor(2.0), torch.tensor(-0.3)
        assert float(total_loss(l_unl, l_xent, l_kl, 0.0, 0.0)) == 1.5

    def test_total_matches_components(self, small_corpus, small_base_model):
        vocab = small_corpus["vocab"]
        example = encode_examples(small_corpus["train"][:1], vocab)[0]
        breakdown = ict_step_losses(small_base_model, small_base_model, example, rho=0.5,
                                    gamma=0.7, lambda_kl=0.05)
        assert breakdown.total == pytest.approx(
            breakdown.l_unl + 0.7 * breakdown.l_xent + 0.05 * breakdown.l_kl, abs=1e-6
        )
        assert breakdown.l_unl >= 0 and breakdown.l_xent >= 0 and breakdown.l_kl <= 1e-12

    def test_gamma_lambda_zero_on_real_example(self, small_corpus, small_base_model):
        vocab = small_corpus["vocab"]
        example = encode_examples(small_corpus["train"][:1], vocab)[0]
        breakdown = ict_step_losses(small_base_model, small_base_model, example, rho=0.5,
                                    gamma=0.0, lambda_kl=0.0)
        assert breakdown.total == pytest.approx(breakdown.l_unl, abs=1e-9)


class TestHandRolledOracle:
    def test_components_match_recomputation(self, small_corpus, small_base_model):
        """Capture the per-step branch probabilities the trainer sees, then
        recompute the three loss sums with plain python arithmetic."""
        vocab = small_corpus["vocab"]
        base = small_base_model
        example = encode_examples(small_corpus["train"][:1], vocab)[0]
        source, target = example
        rho, gamma, lam = 0.5, 1.0, 0.01

        steps = base.forward_teacher_forced(source, target)
        valid = content_mask(source, vocab)
        n_steps = len(steps)
        mask_u_rows = np.zeros((n_steps, len(source)), dtype=bool)
        mask_r_rows = np.zeros((n_steps, len(source)), dtype=bool)
        for t, step in enumerate(steps):
            part = partition(step.cross_attention, rho, valid_mask=valid)
            mask_u_rows[t], mask_r_rows[t] = partition_to_masks(part, len(source))
        steps_u = base.forward_teacher_forced(source, target, attend_mask=mask_u_rows)
        steps_r = base.forward_teacher_forced(source, target, attend_mask=mask_r_rows)

        l_unl = l_xent = l_kl = 0.0
        for t in range(n_steps):
            dist_u = steps_u[t].distribution
            dist_r = steps_r[t].distribution
            gold = target[t + 1]
            p_u = min(max(dist_u[gold], EPS), 1 - EPS)
            p_r = min(max(dist_r[gold], EPS), 1 - EPS)
            l_unl += -math.log(1 - p_u)
            l_xent += -math.log(p_r)
            kl = sum(
                pu * math.log(pu / min(max(qv, EPS), 1.0))
                for pu, qv in zip(dist_u, dist_r)
                if pu > 0
            )
            l_kl += -kl

        breakdown = ict_step_losses(base, base, example, rho=rho, gamma=gamma, lambda_kl=lam)
        assert breakdown.l_unl == pytest.approx(l_unl, rel=1e-5, abs=1e-7)
        assert breakdown.l_xent == pytest.approx(l_xent, rel=1e-5, abs=1e-7)
        assert breakdown.l_kl == pytest.approx(l_kl, rel=1e-5, abs=1e-7)
        assert breakdown.total == pytest.approx(l_unl + gamma * l_xent + lam * l_kl, rel=1e-5, abs=1e-7)


class TestTrainICT:
    def _base(self, small_corpus):
        vocab = small_corpus["vocab"]
        cfg = ModelConfig(vocab_size=vocab.size, d_model=16, n_heads=2,
                          n_encoder_layers=1, n_decoder_layers=1,
                          max_source_len=64, max_target_len=20, seed=2)
        model = build_model(cfg, vocab)
        model.stage = "base"
        return model

    def test_zero_steps_identity(self, small_corpus):
        base = self._base(small_corpus)
        dataset = encode_examples(small_corpus["train"][:30], small_corpus["vocab"])
        cf, _ = train_ict(base, dataset, ICTConfig(steps=0, batch_size=4, seed=0))
        assert cf.parameter_checksums() == base.parameter_checksums()
        assert cf.stage == "ict"

    def test_determinism(self, small_corpus):
        dataset = encode_examples(small_corpus["train"][:30], small_corpus["vocab"])
        cfg = ICTConfig(steps=4, batch_size=4, seed=3)
        cf1, _ = train_ict(self._base(small_corpus), dataset, cfg)
        cf2, _ = train_ict(self._base(small_corpus), dataset, cfg)
        assert cf1.parameter_checksums() == cf2.parameter_checksums()

    def test_log_records_every_step(self, small_corpus, tmp_path):
        import json

        dataset = encode_examples(small_corpus["train"][:30], small_corpus["vocab"])
        log = tmp_path / "log.jsonl"
        train_ict(self._base(small_corpus), dataset, ICTConfig(steps=5, batch_size=4, seed=0), log_path=log)
        records = [json.loads(line) for line in log.read_text().splitlines()]
        assert [r["step"] for r in records] == list(range(5))
        assert all({"l_unl", "l_xent", "l_kl", "total"} <= set(r) for r in records)

    def test_dataset_too_small(self, small_corpus):
        dataset = encode_examples(small_corpus["train"][:4], small_corpus["vocab"])
        with pytest.raises(ConfigurationError):
            train_ict(self._base(small_corpus), dataset, ICTConfig(steps=1, batch_size=8))

    def test_static_strategy_training(self, small_corpus):
        from cofact.attention import static_partition

        vocab = small_corpus["vocab"]
        examples = small_corpus["train"][:30]
        dataset = encode_examples(examples, vocab)
        partitions = []
        for ex in examples:
            src = vocab.encode(ex.document, frame=True)
            positions = [start + 1 for start, _ in ex.entity_spans]
            partitions.append(static_partition(src, "token", positions, vocab))
        cfg = ICTConfig(steps=3, batch_size=4, seed=0, strategy="token")
        cf, report = train_ict(self._base(small_corpus), dataset, cfg, static_partitions=partitions)
        assert cf.stage == "ict"
        assert report["heldout_end"]["l_unl"] >= 0.0

    def test_static_strategy_requires_partitions(self, small_corpus):
        dataset = encode_examples(small_corpus["train"][:30], small_corpus["vocab"])
        with pytest.raises(ConfigurationError):
            train_ict(self._base(small_corpus), dataset, ICTConfig(steps=1, batch_size=4, strategy="token"))

    def test_training_moves_losses_directionally(self, small_corpus, small_base_model):
        """On a trained base model, an ICT run lowers held-out unlikelihood
        and widens the branch divergence versus step 0. The divergence term
        carries a small weight, so it needs a few hundred steps to move."""
        vocab = small_corpus["vocab"]
        dataset = encode_examples(small_corpus["train"][:60], vocab)
        cfg = ICTConfig(steps=200, batch_size=8, seed=1, learning_rate=1e-3)
        _cf, report = train_ict(small_base_model, dataset, cfg)
        assert report["heldout_end"]["l_unl"] < report["heldout_start"]["l_unl"]
        assert report["heldout_end"]["kl_gap"] > report["heldout_start"]["kl_gap"]


class TestICTConfig:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            ICTConfig(gamma=-1)
        with pytest.raises(ConfigurationError):
            ICTConfig(prob_floor=0.0)
        with pytest.raises(ConfigurationError):
            ICTConfig(prob_floor=0.1)
        with pytest.raises(ConfigurationError):
            ICTConfig(proportion=1.0)
