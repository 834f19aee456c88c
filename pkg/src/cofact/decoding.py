"""Debiased decoding: masked and counterfactual score subtraction with a
per-step gate, in greedy and beam variants.

Score arithmetic is kept in float64 and never renormalized; debiased values
act as ranking scores. Beam search accumulates log(max(score, floor)) with a
raw-score tie-break so that beam size 1 reproduces greedy decoding exactly.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from .attention import mask_document, select_important, select_top_k, important_count
from .dda import PredictorHead, score_step
from .errors import ConfigurationError, PartitionError
from .ict import content_mask
from .model import Seq2SeqModel

PROFILES = {
    "conservative": {"alpha": 0.05, "beta": 0.01, "rho": 0.5, "beam_size": 20},
    "aggressive": {"alpha": 0.15, "beta": 0.15, "rho": 0.1, "beam_size": 12},
}


@dataclasses.dataclass(frozen=True)
class DebiasConfig:
    alpha: float = 0.05
    beta: float = 0.01
    rho: float = 0.5
    beam_size: int = 20
    use_dda: bool = True
    score_floor: float = 1e-12
    max_steps: int = 0  # 0 means model.max_target_len - 1
    per_hypothesis_mask: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError("alpha and beta must lie in [0, 1]")
        if not 0.0 < self.rho < 1.0:
            raise ConfigurationError("rho must lie in (0, 1)")
        if self.beam_size < 1:
            raise ConfigurationError("beam_size must be >= 1")
        if self.score_floor <= 0:
            raise ConfigurationError("score_floor must be positive")
        if self.max_steps < 0:
            raise ConfigurationError("max_steps must be >= 0")

    @classmethod
    def from_profile(cls, name: str, **overrides) -> "DebiasConfig":
        if name not in PROFILES:
            raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
        params = dict(PROFILES[name])
        params.update(overrides)
        return cls(**params)


@dataclasses.dataclass
class StepScores:
    p_full: np.ndarray
    p_masked: np.ndarray
    p_cf: np.ndarray
    s_tilde: float
    debiased: np.ndarray


@dataclasses.dataclass
class TraceStep:
    t: int
    chosen: int
    scores: StepScores
    masked_positions: tuple[int, ...]
    degenerate: bool


def ecm_score(p_full: np.ndarray, p_masked: np.ndarray, alpha: float) -> np.ndarray:
    return np.asarray(p_full, dtype=np.float64) - alpha * np.asarray(p_masked, dtype=np.float64)


def ict_score(p_full: np.ndarray, p_cf: np.ndarray, beta: float) -> np.ndarray:
    return np.asarray(p_full, dtype=np.float64) - beta * np.asarray(p_cf, dtype=np.float64)


def combined_score(s: StepScores, alpha: float, beta: float) -> np.ndarray:
    return np.asarray(s.p_full, dtype=np.float64) - s.s_tilde * (
        alpha * np.asarray(s.p_masked, dtype=np.float64)
        + beta * np.asarray(s.p_cf, dtype=np.float64)
    )


class _DocState:
    """Per-document context shared by every step and hypothesis."""

    def __init__(self, base, cf, head, source_ids, cfg: DebiasConfig, fixed_important=None):
        self.base = base
        self.cf = cf
        self.head = head
        self.cfg = cfg
        self.source_ids = tuple(int(t) for t in source_ids)
        self.enc = base.encode(self.source_ids)
        self.enc_cf = cf.encode(self.source_ids) if (cf is not None and cfg.beta > 0) else None
        self.content = content_mask(self.source_ids, base.vocab)
        self.fixed_important = tuple(fixed_important) if fixed_important is not None else None
        if cfg.use_dda and head is None:
            raise ConfigurationError("use_dda requires a predictor head")
        if cfg.beta > 0 and cf is None:
            raise ConfigurationError("beta > 0 requires a counterfactual model")

    def step(self, prefix: Sequence[int], shared_important=None):
        cfg = self.cfg
        base = self.base
        full = base.decode_step(self.enc, prefix)
        vocab_size = full.distribution.shape[0]
        p_masked = np.zeros(vocab_size)
        h_prime = full.hidden
        masked_positions: tuple[int, ...] = ()
        degenerate = False
        selected = None
        if cfg.alpha > 0 or cfg.use_dda:
            if shared_important is not None:
                selected = shared_important
            elif self.fixed_important is not None:
                selected = self.fixed_important
            else:
                try:
                    selected = select_important(full.cross_attention, cfg.rho, valid_mask=self.content)
                except PartitionError:
                    degenerate = True
            if selected:
                md = mask_document(self.source_ids, selected, base.vocab)
                masked_positions = md.masked_positions
                masked = base.decode_step(base.encode(md.tokens), prefix)
                p_masked = masked.distribution
                h_prime = masked.hidden
        p_cf = (
            self.cf.decode_step(self.enc_cf, prefix).distribution
            if cfg.beta > 0
            else np.zeros(vocab_size)
        )
        s_tilde = 1.0
        if cfg.use_dda:
            s_tilde = score_step(full.hidden, h_prime, self.head).s_tilde
        scores = StepScores(
            p_full=full.distribution,
            p_masked=p_masked,
            p_cf=p_cf,
            s_tilde=s_tilde,
            debiased=full.distribution - s_tilde * (cfg.alpha * p_masked + cfg.beta * p_cf),
        )
        return scores, masked_positions, degenerate, selected


def _max_steps(model, cfg: DebiasConfig) -> int:
    limit = model.config.max_target_len - 1
    return min(cfg.max_steps, limit) if cfg.max_steps else limit


def decode_trace(
    base: Seq2SeqModel,
    cf: Seq2SeqModel | None,
    head: PredictorHead | None,
    source_ids: Sequence[int],
    cfg: DebiasConfig,
    fixed_important=None,
) -> tuple[list[int], list[TraceStep]]:
    """Greedy debiased decoding with a full per-step record."""
    state = _DocState(base, cf, head, source_ids, cfg, fixed_important)
    eos = base.vocab.eos_id
    prefix = [base.vocab.bos_id]
    trace: list[TraceStep] = []
    for t in range(1, _max_steps(base, cfg) + 1):
        scores, masked_positions, degenerate, _ = state.step(prefix)
        chosen = int(np.argmax(scores.debiased))
        trace.append(TraceStep(t, chosen, scores, masked_positions, degenerate))
        prefix.append(chosen)
        if chosen == eos:
            break
    return prefix[1:], trace


def decode_greedy(
    base: Seq2SeqModel,
    cf: Seq2SeqModel | None,
    head: PredictorHead | None,
    source_ids: Sequence[int],
    cfg: DebiasConfig,
    fixed_important=None,
) -> list[int]:
    tokens, _ = decode_trace(base, cf, head, source_ids, cfg, fixed_important)
    return tokens


def decode_beam(
    base: Seq2SeqModel,
    cf: Seq2SeqModel | None,
    head: PredictorHead | None,
    source_ids: Sequence[int],
    cfg: DebiasConfig,
    fixed_important=None,
) -> list[int]:
    """Beam search over accumulated log of floored debiased scores.

    Each hypothesis owns its attention and hence its own masked document per
    step unless per_hypothesis_mask is off, in which case the top hypothesis's
    selection is shared. Finished hypotheses keep their score; there is no
    length normalization.
    """
    state = _DocState(base, cf, head, source_ids, cfg, fixed_important)
    eos = base.vocab.eos_id
    live: list[tuple[list[int], float]] = [([base.vocab.bos_id], 0.0)]
    finished: list[tuple[list[int], float]] = []
    for _t in range(1, _max_steps(base, cfg) + 1):
        if not live:
            break
        shared = None
        candidates = []
        for h_idx, (prefix, acc) in enumerate(live):
            scores, _, _, selected = state.step(prefix, shared_important=shared)
            if not cfg.per_hypothesis_mask and h_idx == 0:
                shared = selected
            deb = scores.debiased
            floored = np.log(np.maximum(deb, cfg.score_floor))
            for v in range(deb.shape[0]):
                candidates.append((acc + floored[v], h_idx, deb[v], v))
        candidates.sort(key=lambda c: (-c[0], c[1], -c[2], c[3]))
        next_live = []
        for acc, h_idx, _raw, v in candidates[: cfg.beam_size]:
            tokens = live[h_idx][0] + [v]
            if v == eos:
                finished.append((tokens, acc))
            else:
                next_live.append((tokens, acc))
        live = next_live
    pool = finished + live
    best = max(range(len(pool)), key=lambda i: (pool[i][1], -i))
    return pool[best][0][1:]


# ----------------------------------------------------------------------
# plain decoding of the base model (the reduction anchor) and the forced
# irrelevant-attention probe


def decode_standard_greedy(model: Seq2SeqModel, source_ids: Sequence[int], max_steps: int = 0) -> list[int]:
    enc = model.encode(source_ids)
    eos = model.vocab.eos_id
    limit = min(max_steps, model.config.max_target_len - 1) if max_steps else model.config.max_target_len - 1
    prefix = [model.vocab.bos_id]
    for _ in range(limit):
        dist = model.decode_step(enc, prefix).distribution
        chosen = int(np.argmax(dist))
        prefix.append(chosen)
        if chosen == eos:
            break
    return prefix[1:]


def decode_standard_beam(
    model: Seq2SeqModel,
    source_ids: Sequence[int],
    beam_size: int,
    max_steps: int = 0,
    score_floor: float = 1e-12,
) -> list[int]:
    enc = model.encode(source_ids)
    eos = model.vocab.eos_id
    limit = min(max_steps, model.config.max_target_len - 1) if max_steps else model.config.max_target_len - 1
    live: list[tuple[list[int], float]] = [([model.vocab.bos_id], 0.0)]
    finished: list[tuple[list[int], float]] = []
    for _t in range(limit):
        if not live:
            break
        candidates = []
        for h_idx, (prefix, acc) in enumerate(live):
            dist = model.decode_step(enc, prefix).distribution
            floored = np.log(np.maximum(dist, score_floor))
            for v in range(dist.shape[0]):
                candidates.append((acc + floored[v], h_idx, dist[v], v))
        candidates.sort(key=lambda c: (-c[0], c[1], -c[2], c[3]))
        next_live = []
        for acc, h_idx, _raw, v in candidates[:beam_size]:
            tokens = live[h_idx][0] + [v]
            if v == eos:
                finished.append((tokens, acc))
            else:
                next_live.append((tokens, acc))
        live = next_live
    pool = finished + live
    best = max(range(len(pool)), key=lambda i: (pool[i][1], -i))
    return pool[best][0][1:]


def decode_forced_irrelevant(
    model: Seq2SeqModel, source_ids: Sequence[int], irrelevant_proportion: float, max_steps: int = 0
) -> list[int]:
    """Greedy decoding with attention restricted, per step, to the positions
    outside the top (1 - q) fraction by cross-attention. q = 0 leaves decoding
    unrestricted; q = 1 still excludes only the single most attended position."""
    if not 0.0 <= irrelevant_proportion <= 1.0:
        raise ConfigurationError("irrelevant proportion must lie in [0, 1]")
    if irrelevant_proportion == 0.0:
        return decode_standard_greedy(model, source_ids, max_steps)
    enc = model.encode(source_ids)
    vocab = model.vocab
    content = content_mask(source_ids, vocab)
    n_content = int(content.sum())
    if n_content < 2:
        raise PartitionError("document too short for a forced-attention probe")
    k = important_count(n_content, 1.0 - irrelevant_proportion) if irrelevant_proportion < 1.0 else 1
    limit = min(max_steps, model.config.max_target_len - 1) if max_steps else model.config.max_target_len - 1
    prefix = [vocab.bos_id]
    for _ in range(limit):
        full = model.decode_step(enc, prefix)
        important = select_top_k(full.cross_attention, k, valid_mask=content)
        restricted = content.copy()
        restricted[list(important)] = False
        step = model.decode_step(enc, prefix, attend_mask=restricted)
        chosen = int(np.argmax(step.distribution))
        prefix.append(chosen)
        if chosen == vocab.eos_id:
            break
    return prefix[1:]
