"""Selection, masking, and partition properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cofact import Vocabulary, mask_document, partition, partition_to_masks, select_important, static_partition
from cofact.attention import important_count, select_top_k
from cofact.errors import PartitionError


@pytest.fixture(scope="module")
def vocab():
    return Vocabulary.from_content(["w0", "w1", "w2", "w3", "w4", "w5"])


attn_vectors = st.lists(
    st.floats(min_value=0.0, max_value=1.0, allow_nan=False), min_size=2, max_size=12
)
proportions = st.floats(min_value=0.01, max_value=0.99)


class TestSelectImportant:
    def test_direct_top_k(self):
        assert select_important([0.5, 0.3, 0.2], 0.5) == (0, 1)

    def test_tie_break_by_index(self):
        assert select_important([0.25, 0.25, 0.25, 0.25], 0.5) == (0, 1)

    def test_clamp_to_n_minus_one(self):
        assert select_important([0.1, 0.9], 0.9) == (1,)

    def test_too_few_positions(self):
        with pytest.raises(PartitionError):
            select_important([1.0], 0.5)
        with pytest.raises(PartitionError):
            select_important([0.2, 0.3, 0.5], 0.5, valid_mask=[True, False, False])

    def test_valid_mask_respected(self):
        selected = select_important([0.9, 0.8, 0.1, 0.05], 0.5, valid_mask=[False, True, True, True])
        assert selected == (1, 2)

    def test_bad_proportion(self):
        with pytest.raises(ValueError):
            select_important([0.5, 0.5], 0.0)
        with pytest.raises(ValueError):
            select_important([0.5, 0.5], 1.0)

    @given(attn=attn_vectors, rho=proportions)
    @settings(max_examples=120, deadline=None)
    def test_cardinality_clamp(self, attn, rho):
        n = len(attn)
        selected = select_important(attn, rho)
        expected = max(1, min(math.ceil(rho * n), n - 1))
        assert len(selected) == expected

    @given(attn=attn_vectors, rho=proportions, seed=st.integers(0, 999))
    @settings(max_examples=80, deadline=None)
    def test_permutation_consistency(self, attn, rho, seed):
        # distinct scores so the tie rule cannot interfere with the permutation
        attn = [a + i * 1e-6 for i, a in enumerate(attn)]
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(attn))
        selected = set(select_important(attn, rho))
        permuted = [attn[i] for i in perm]
        selected_perm = set(select_important(permuted, rho))
        assert selected_perm == {int(np.where(perm == i)[0][0]) for i in selected}

    @given(attn=attn_vectors, rho=proportions)
    @settings(max_examples=80, deadline=None)
    def test_monotonicity(self, attn, rho):
        selected = select_important(attn, rho)
        kth_largest = sorted((a for a in attn), reverse=True)[len(selected) - 1]
        outside = [i for i in range(len(attn)) if i not in selected]
        if not outside:
            return
        boosted = list(attn)
        boosted[outside[0]] = kth_largest + 1.0
        assert outside[0] in select_important(boosted, rho)


class TestMaskDocument:
    def test_empty_positions_identity(self, vocab):
        src = vocab.encode(["w0", "w1"], frame=True)
        md = mask_document(src, [], vocab)
        assert md.tokens == tuple(src)
        assert md.masked_positions == ()

    def test_masks_requested_positions(self, vocab):
        src = vocab.encode(["w0", "w1", "w2", "w3"], frame=True)
        md = mask_document(src, [2, 4], vocab)
        assert md.tokens[2] == vocab.mask_id and md.tokens[4] == vocab.mask_id
        assert md.masked_positions == (2, 4)
        untouched = [i for i in range(len(src)) if i not in (2, 4)]
        assert all(md.tokens[i] == src[i] for i in untouched)

    def test_special_positions_skipped(self, vocab):
        src = vocab.encode(["w0"], frame=True)  # BOS w0 EOS
        md = mask_document(src, [0, 1, 2], vocab)
        assert md.masked_positions == (1,)
        assert md.excluded_positions == (0, 2)
        assert md.tokens[0] == vocab.bos_id and md.tokens[2] == vocab.eos_id

    def test_out_of_range(self, vocab):
        with pytest.raises(IndexError):
            mask_document([vocab.bos_id, vocab.eos_id], [5], vocab)

    @given(positions=st.sets(st.integers(0, 5), max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_idempotence(self, vocab, positions):
        src = vocab.encode(["w0", "w1", "w2", "w3"], frame=True)
        once = mask_document(src, positions, vocab)
        twice = mask_document(once.tokens, positions, vocab)
        assert twice.tokens == once.tokens


class TestPartition:
    def test_example(self):
        part = partition([0.5, 0.3, 0.2], 0.5)
        assert part.important == (0, 1)
        assert part.irrelevant == (2,)

    def test_small_proportion(self):
        part = partition([0.1] * 10, 0.1)
        assert len(part.important) == 1

    @given(attn=attn_vectors, rho=proportions)
    @settings(max_examples=120, deadline=None)
    def test_disjoint_cover(self, attn, rho):
        part = partition(attn, rho)
        assert set(part.important) & set(part.irrelevant) == set()
        assert sorted(part.important + part.irrelevant) == list(range(len(attn)))
        assert part.important and part.irrelevant

    def test_masks(self):
        part = partition([0.5, 0.3, 0.2], 0.5)
        mask_u, mask_r = partition_to_masks(part, 3)
        assert mask_u.tolist() == [True, True, False]
        assert mask_r.tolist() == [False, False, True]
        assert np.array_equal(mask_u, ~mask_r)

    def test_mask_feeds_decode_step(self, tiny_model, tiny_vocab):
        src = tiny_vocab.encode(["alpha", "bravo", "carol"], frame=True)
        enc = tiny_model.encode(src)
        out_full = tiny_model.decode_step(enc, [tiny_vocab.bos_id])
        part = partition(out_full.cross_attention, 0.4, valid_mask=[False, True, True, True, False])
        mask_u, _ = partition_to_masks(part, len(src))
        out = tiny_model.decode_step(enc, [tiny_vocab.bos_id], attend_mask=mask_u)
        support = set(np.nonzero(out.cross_attention)[0].tolist())
        assert support <= set(part.important)


class TestStaticPartition:
    def test_document_strategy(self, vocab):
        src = vocab.encode(["w0", "w1", "w2"], frame=True)
        part = static_partition(src, "document", [1, 2], vocab)
        assert part.important == tuple(range(len(src)))
        assert part.irrelevant_attends_all
        mask_u, mask_r = partition_to_masks(part, len(src))
        assert mask_u.all() and mask_r.all()

    def test_token_strategy(self, vocab):
        src = vocab.encode(["w0", "w1", "w2", "w3", "w4", "w5"], frame=True)
        part = static_partition(src, "token", [3, 4], vocab)
        assert part.important == (3, 4)
        assert 3 not in part.irrelevant and 4 not in part.irrelevant

    def test_sentence_strategy(self, vocab):
        period = vocab.id_of("w5")  # stand-in separator token
        src = vocab.encode(["w0", "w5", "w2", "w5"], frame=True)
        part = static_partition(src, "sentence", [3], vocab, period_id=period)
        assert part.important == (3, 4)

    def test_no_entities_falls_back(self, vocab):
        src = vocab.encode(["w0", "w1"], frame=True)
        part = static_partition(src, "token", [], vocab)
        assert part.fallback
        assert part.important == tuple(range(len(src)))

    def test_repeated_calls_identical(self, vocab):
        src = vocab.encode(["w0", "w1", "w2"], frame=True)
        a = static_partition(src, "token", [1], vocab)
        b = static_partition(src, "token", [1], vocab)
        assert a == b


class TestHelpers:
    def test_important_count_bounds(self):
        assert important_count(10, 0.1) == 1
        assert important_count(10, 0.99) == 9
        assert important_count(2, 0.9) == 1

    def test_select_top_k(self):
        assert select_top_k([0.1, 0.9, 0.5], 2) == (1, 2)
        assert select_top_k([0.5, 0.5, 0.1], 1) == (0,)
