"""Counterfactual decoder training.

A copy of the base model learns to generate from the irrelevant part of the
source while being penalized for generating from the important part, with a
KL term pushing the two branch distributions apart. Only the decoder group is
updated; embeddings and encoder stay bit-identical to the base model.
"""

from __future__ import annotations

import dataclasses
import json
import random
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .attention import STATIC_STRATEGIES, AttentionPartition, partition, partition_to_masks
from .errors import ConfigurationError, NumericError
from .model import Seq2SeqModel
from .vocab import Vocabulary

Example = tuple[Sequence[int], Sequence[int]]  # framed (source_ids, target_ids)


@dataclasses.dataclass(frozen=True)
class ICTConfig:
    gamma: float = 1.0
    lambda_kl: float = 0.01
    proportion: float = 0.5
    learning_rate: float = 5e-4
    steps: int = 1000
    batch_size: int = 8
    seed: int = 0
    prob_floor: float = 1e-9
    # "dynamic" partitions per step from cross-attention; the static
    # strategies fix one partition per document from entity annotations.
    strategy: str = "dynamic"

    def __post_init__(self) -> None:
        if self.gamma < 0 or self.lambda_kl < 0:
            raise ConfigurationError("gamma and lambda_kl must be non-negative")
        if not 0.0 < self.prob_floor < 1e-3:
            raise ConfigurationError("prob_floor must lie in (0, 1e-3)")
        if not 0.0 < self.proportion < 1.0:
            raise ConfigurationError("proportion must lie in (0, 1)")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigurationError("steps must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.strategy not in ("dynamic",) + STATIC_STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")


@dataclasses.dataclass(frozen=True)
class LossBreakdown:
    l_unl: float
    l_xent: float
    l_kl: float
    total: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _as_f64(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(torch.float64)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def unlikelihood_loss(probs_u, eps: float = 1e-9) -> torch.Tensor:
    """-sum_t log(1 - p_t), probabilities clamped to [eps, 1-eps]."""
    p = _as_f64(probs_u).clamp(eps, 1.0 - eps)
    return -torch.log1p(-p).sum()


def xent_loss(probs_r, eps: float = 1e-9) -> torch.Tensor:
    """-sum_t log(p_t), probabilities clamped to [eps, 1-eps]."""
    p = _as_f64(probs_r).clamp(eps, 1.0 - eps)
    return -torch.log(p).sum()


def kl_loss(dist_u, dist_r, eps: float = 1e-9) -> torch.Tensor:
    """-sum_t KL(P_u_t || P_r_t); the result is <= 0, and 0 iff the
    distributions agree at every step."""
    p = _as_f64(dist_u)
    q = _as_f64(dist_r).clamp(eps, 1.0)
    per_entry = torch.special.xlogy(p, p) - p * torch.log(q)
    return -per_entry.sum()


def total_loss(l_unl, l_xent, l_kl, gamma: float, lambda_kl: float):
    return l_unl + gamma * l_xent + lambda_kl * l_kl


def _pad_batch(batch: list[Example], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    smax = max(len(s) for s, _ in batch)
    tmax = max(len(t) for _, t in batch)
    src = torch.full((len(batch), smax), pad_id, dtype=torch.long)
    tgt = torch.full((len(batch), tmax), pad_id, dtype=torch.long)
    for b, (s, t) in enumerate(batch):
        src[b, : len(s)] = torch.tensor(list(s), dtype=torch.long)
        tgt[b, : len(t)] = torch.tensor(list(t), dtype=torch.long)
    return src, tgt


def content_mask(source_ids: Sequence[int], vocab: Vocabulary) -> np.ndarray:
    """True at positions eligible for selection: non-pad, non-BOS/EOS."""
    ids = np.asarray(list(source_ids))
    return ~np.isin(ids, (vocab.pad_id, vocab.bos_id, vocab.eos_id))


def _branch_masks(
    base: Seq2SeqModel,
    batch: list[Example],
    src: torch.Tensor,
    tgt_in: torch.Tensor,
    rho: float,
    static_partitions: Sequence[AttentionPartition | None] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step attend masks from the frozen base model's cross-attention, or
    from a fixed per-document partition when one is supplied."""
    src_valid = src != base.vocab.pad_id
    attn_np = None
    if static_partitions is None or any(p is None for p in static_partitions):
        with torch.no_grad():
            memory = base.encode_batch(src, src_valid)
            _, _, attn = base.decode_batch(memory, src_valid, tgt_in)
        attn_np = attn.to(torch.float64).numpy()
    bsz, tlen = tgt_in.shape
    smax = src.shape[1]
    mask_u = np.zeros((bsz, tlen, smax), dtype=bool)
    mask_r = np.zeros((bsz, tlen, smax), dtype=bool)
    valid_np = src_valid.numpy()
    for b, (s, t) in enumerate(batch):
        n_steps = len(t) - 1
        static = static_partitions[b] if static_partitions is not None else None
        if static is not None:
            mu, mr = partition_to_masks(static, smax)
            mask_u[b, :n_steps] = mu
            mask_r[b, :n_steps] = mr
        else:
            content = np.zeros(smax, dtype=bool)
            content[: len(s)] = content_mask(s, base.vocab)
            for ti in range(n_steps):
                part = partition(attn_np[b, ti], rho, valid_mask=content)
                mask_u[b, ti], mask_r[b, ti] = partition_to_masks(part, smax)
        # rows past the example's length only keep softmax well-defined
        mask_u[b, n_steps:] = valid_np[b]
        mask_r[b, n_steps:] = valid_np[b]
    return mask_u, mask_r


def ict_batch_graph(
    base: Seq2SeqModel,
    cf: Seq2SeqModel,
    batch: list[Example],
    cfg: ICTConfig,
    static_partitions: Sequence[AttentionPartition | None] | None = None,
) -> dict[str, torch.Tensor]:
    """Differentiable loss components, averaged over the batch of per-example sums."""
    pad_id = base.vocab.pad_id
    src, tgt = _pad_batch(batch, pad_id)
    tgt_in, tgt_out = tgt[:, :-1], tgt[:, 1:]
    src_valid = src != pad_id
    step_mask = (tgt_out != pad_id).to(torch.float64)

    mask_u, mask_r = _branch_masks(base, batch, src, tgt_in, cfg.proportion, static_partitions)

    memory = cf.encode_batch(src, src_valid)
    logits_u, _, _ = cf.decode_batch(memory, src_valid, tgt_in, torch.from_numpy(mask_u))
    logits_r, _, _ = cf.decode_batch(memory, src_valid, tgt_in, torch.from_numpy(mask_r))
    dist_u = torch.softmax(logits_u.to(torch.float64), dim=-1)
    dist_r = torch.softmax(logits_r.to(torch.float64), dim=-1)
    p_u = dist_u.gather(-1, tgt_out[..., None]).squeeze(-1)
    p_r = dist_r.gather(-1, tgt_out[..., None]).squeeze(-1)

    eps = cfg.prob_floor
    l_unl = -(torch.log1p(-p_u.clamp(eps, 1.0 - eps)) * step_mask).sum(dim=1).mean()
    l_xent = -(torch.log(p_r.clamp(eps, 1.0 - eps)) * step_mask).sum(dim=1).mean()
    q = dist_r.clamp(eps, 1.0)
    kl_step = (torch.special.xlogy(dist_u, dist_u) - dist_u * torch.log(q)).sum(dim=-1)
    l_kl = -(kl_step * step_mask).sum(dim=1).mean()
    return {
        "l_unl": l_unl,
        "l_xent": l_xent,
        "l_kl": l_kl,
        "total": total_loss(l_unl, l_xent, l_kl, cfg.gamma, cfg.lambda_kl),
    }


def ict_step_losses(
    base: Seq2SeqModel,
    cf: Seq2SeqModel,
    example: Example,
    rho: float,
    gamma: float = 1.0,
    lambda_kl: float = 0.01,
    prob_floor: float = 1e-9,
) -> LossBreakdown:
    """Loss components for one (source, target) example."""
    cfg = ICTConfig(
        gamma=gamma, lambda_kl=lambda_kl, proportion=rho, prob_floor=prob_floor, steps=0
    )
    with torch.no_grad():
        parts = ict_batch_graph(base, cf, [example], cfg)
    return LossBreakdown(
        l_unl=float(parts["l_unl"]),
        l_xent=float(parts["l_xent"]),
        l_kl=float(parts["l_kl"]),
        total=float(parts["total"]),
    )


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> list[int]:
    """Stateless schedule: the batch for a step depends only on (seed, step)."""
    rng = random.Random(f"ict:{seed}:{step}")
    return [rng.randrange(n) for _ in range(batch_size)]


def _heldout_metrics(base, cf, heldout: list[Example], cfg: ICTConfig, static_partitions=None) -> dict[str, float]:
    with torch.no_grad():
        parts = ict_batch_graph(base, cf, heldout, cfg, static_partitions)
    return {"l_unl": float(parts["l_unl"]), "kl_gap": -float(parts["l_kl"])}


def train_ict(
    base: Seq2SeqModel,
    dataset: list[Example],
    config: ICTConfig,
    log_path: Path | str | None = None,
    static_partitions: Sequence[AttentionPartition | None] | None = None,
) -> tuple[Seq2SeqModel, dict]:
    """Train the counterfactual decoder from a copy of the base model.

    Returns the trained model (stage "ict") and a report with held-out
    unlikelihood and branch-divergence at step 0 and at the end.
    """
    if len(dataset) <= config.batch_size:
        raise ConfigurationError("dataset too small for a held-out batch")
    if static_partitions is not None and len(static_partitions) != len(dataset):
        raise ConfigurationError("static_partitions must align with the dataset")
    if config.strategy != "dynamic" and static_partitions is None:
        raise ConfigurationError(f"strategy {config.strategy!r} needs static partitions")
    heldout = dataset[-config.batch_size :]
    train_set = dataset[: -config.batch_size]
    held_parts = static_partitions[-config.batch_size :] if static_partitions else None
    train_parts = static_partitions[: -config.batch_size] if static_partitions else None

    cf = base.clone()
    cf.set_trainable("embeddings", False)
    cf.set_trainable("encoder", False)
    cf.set_trainable("decoder", True)
    optimizer = torch.optim.Adam([p for _, p in cf.trainable_parameters()], lr=config.learning_rate)

    start = _heldout_metrics(base, cf, heldout, config, held_parts)
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for step in range(config.steps):
            idx = batch_indices(config.seed, step, len(train_set), config.batch_size)
            batch = [train_set[i] for i in idx]
            parts_sel = [train_parts[i] for i in idx] if train_parts else None
            parts = ict_batch_graph(base, cf, batch, config, parts_sel)
            loss = parts["total"]
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite ICT loss at step {step}; batch indices "
                    f"{batch_indices(config.seed, step, len(train_set), config.batch_size)}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if log_fh is not None:
                record = {
                    "step": step,
                    "l_unl": float(parts["l_unl"].detach()),
                    "l_xent": float(parts["l_xent"].detach()),
                    "l_kl": float(parts["l_kl"].detach()),
                    "total": float(parts["total"].detach()),
                }
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if log_fh is not None:
            log_fh.close()

    end = _heldout_metrics(base, cf, heldout, config, held_parts)
    cf.stage = "ict"
    report = {
        "steps": config.steps,
        "heldout_start": start,
        "heldout_end": end,
    }
    return cf, report
