"""Importance selection, explicit masking, and important/irrelevant partitions.

All selection is driven by a per-step cross-attention vector. Ties break
toward the lower index so every operation is reproducible. The caller chooses
the valid position set; pipeline callers pass content positions (non-pad,
non-special), so special tokens are never selected or masked.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np

from .errors import PartitionError
from .vocab import Vocabulary

STATIC_STRATEGIES = ("token", "sentence", "document")


@dataclasses.dataclass(frozen=True)
class AttentionPartition:
    important: tuple[int, ...]
    irrelevant: tuple[int, ...]
    proportion: float
    # Document-level static strategy: the irrelevant branch attends to the
    # whole document instead of the (empty) complement.
    irrelevant_attends_all: bool = False
    fallback: bool = False


@dataclasses.dataclass(frozen=True)
class MaskedDocument:
    tokens: tuple[int, ...]
    masked_positions: tuple[int, ...]
    excluded_positions: tuple[int, ...] = ()


def _valid_positions(n: int, valid_mask: Sequence[bool] | None) -> list[int]:
    if valid_mask is None:
        return list(range(n))
    valid = np.asarray(valid_mask, dtype=bool)
    if valid.shape != (n,):
        raise ValueError(f"valid mask length {valid.shape} != attention length {n}")
    return [i for i in range(n) if valid[i]]


def select_top_k(attn: Sequence[float], k: int, valid_mask: Sequence[bool] | None = None) -> tuple[int, ...]:
    """The k valid positions with the largest scores, lower index first on ties."""
    attn = np.asarray(attn, dtype=np.float64)
    positions = _valid_positions(attn.shape[0], valid_mask)
    ranked = sorted(positions, key=lambda i: (-attn[i], i))
    return tuple(sorted(ranked[:k]))


def important_count(n_valid: int, proportion: float) -> int:
    """ceil(rho * n) clamped so both partition sides stay non-empty."""
    k = math.ceil(proportion * n_valid)
    return max(1, min(k, n_valid - 1))


def select_important(
    attn: Sequence[float], proportion: float, valid_mask: Sequence[bool] | None = None
) -> tuple[int, ...]:
    if not 0.0 < proportion < 1.0:
        raise ValueError(f"proportion must lie in (0, 1), got {proportion}")
    attn = np.asarray(attn, dtype=np.float64)
    positions = _valid_positions(attn.shape[0], valid_mask)
    if len(positions) < 2:
        raise PartitionError(f"need at least 2 valid positions, found {len(positions)}")
    k = important_count(len(positions), proportion)
    return select_top_k(attn, k, valid_mask)


def mask_document(
    source: Sequence[int], positions: Sequence[int], vocab: Vocabulary
) -> MaskedDocument:
    """Replace the given positions with the mask token, skipping specials."""
    tokens = [int(t) for t in source]
    masked, excluded = [], []
    for pos in sorted(set(int(p) for p in positions)):
        if pos < 0 or pos >= len(tokens):
            raise IndexError(f"mask position {pos} out of range for length {len(tokens)}")
        if tokens[pos] in (vocab.pad_id, vocab.bos_id, vocab.eos_id):
            excluded.append(pos)
            continue
        tokens[pos] = vocab.mask_id
        masked.append(pos)
    return MaskedDocument(tuple(tokens), tuple(masked), tuple(excluded))


def partition(
    attn: Sequence[float], proportion: float, valid_mask: Sequence[bool] | None = None
) -> AttentionPartition:
    important = select_important(attn, proportion, valid_mask)
    positions = _valid_positions(np.asarray(attn).shape[0], valid_mask)
    irrelevant = tuple(i for i in positions if i not in set(important))
    return AttentionPartition(important, irrelevant, proportion)


def partition_to_masks(p: AttentionPartition, source_len: int) -> tuple[np.ndarray, np.ndarray]:
    mask_u = np.zeros(source_len, dtype=bool)
    mask_r = np.zeros(source_len, dtype=bool)
    mask_u[list(p.important)] = True
    if p.irrelevant_attends_all:
        mask_r[list(p.important)] = True
    mask_r[list(p.irrelevant)] = True
    return mask_u, mask_r


def sentence_spans(source: Sequence[int], period_id: int, valid: Sequence[int]) -> list[list[int]]:
    """Split the valid positions into sentences at the period token (inclusive)."""
    spans, current = [], []
    for pos in valid:
        current.append(pos)
        if source[pos] == period_id:
            spans.append(current)
            current = []
    if current:
        spans.append(current)
    return spans


def static_partition(
    source: Sequence[int],
    strategy: str,
    entity_positions: Sequence[int],
    vocab: Vocabulary,
    period_id: int | None = None,
) -> AttentionPartition:
    """Position-fixed alternative to attention-driven partitioning.

    token: entity token positions; sentence: every position of sentences
    containing an entity; document: all non-pad positions (with the
    irrelevant branch degenerating to attend-all). Entity-free documents
    fall back to the document strategy with the fallback flag set.
    """
    if strategy not in STATIC_STRATEGIES:
        raise ValueError(f"unknown static strategy {strategy!r}")
    source = [int(t) for t in source]
    non_pad = [i for i, t in enumerate(source) if t != vocab.pad_id]
    entities = sorted(set(int(p) for p in entity_positions if 0 <= int(p) < len(source)))

    def _document(fallback: bool) -> AttentionPartition:
        return AttentionPartition(
            tuple(non_pad), (), 1.0, irrelevant_attends_all=True, fallback=fallback
        )

    if strategy == "document":
        return _document(False)
    if not entities:
        return _document(True)
    if strategy == "token":
        important = tuple(entities)
    else:
        if period_id is None:
            raise ValueError("sentence strategy needs the period token id")
        content = [i for i in non_pad if source[i] not in (vocab.bos_id, vocab.eos_id)]
        spans = sentence_spans(source, period_id, content)
        entity_set = set(entities)
        important = tuple(
            sorted(pos for span in spans if entity_set & set(span) for pos in span)
        )
    irrelevant = tuple(i for i in non_pad if i not in set(important))
    if not irrelevant:
        return _document(False)
    return AttentionPartition(important, irrelevant, len(important) / max(1, len(non_pad)))
