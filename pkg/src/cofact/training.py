"""Teacher-forced cross-entropy training of the base summarizer, with a
stateless batch schedule so interrupted runs can resume bit-exactly."""

from __future__ import annotations

import dataclasses
import json
import random
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError, ConfigurationError, NumericError
from .ict import Example, _pad_batch
from .model import Seq2SeqModel

TRAIN_STATE_JSON = "train_state.json"
TRAIN_STATE_BIN = "train_state.bin"


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    heldout_fraction: float = 0.05
    label_smoothing: float = 0.1

    def __post_init__(self) -> None:
        if self.steps < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigurationError("invalid training parameters")
        if not 0.0 < self.heldout_fraction < 1.0:
            raise ConfigurationError("heldout_fraction must lie in (0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigurationError("label_smoothing must lie in [0, 1)")


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> list[int]:
    rng = random.Random(f"base:{seed}:{step}")
    return [rng.randrange(n) for _ in range(batch_size)]


def xent_batch_graph(model: Seq2SeqModel, batch: list[Example], label_smoothing: float = 0.0) -> torch.Tensor:
    """Mean negative log-likelihood of gold tokens over the batch, optionally
    mixed with the uniform distribution to keep output confidence bounded."""
    pad_id = model.vocab.pad_id
    src, tgt = _pad_batch(batch, pad_id)
    tgt_in, tgt_out = tgt[:, :-1], tgt[:, 1:]
    src_valid = src != pad_id
    mask = (tgt_out != pad_id).to(torch.float64)
    logits, _, _ = model.decode_batch(model.encode_batch(src, src_valid), src_valid, tgt_in)
    logp = torch.log_softmax(logits.to(torch.float64), dim=-1)
    token_lp = logp.gather(-1, tgt_out[..., None]).squeeze(-1)
    nll = -(token_lp * mask).sum() / mask.sum()
    if label_smoothing <= 0.0:
        return nll
    uniform = -(logp.mean(dim=-1) * mask).sum() / mask.sum()
    return (1.0 - label_smoothing) * nll + label_smoothing * uniform


def next_token_accuracy(model: Seq2SeqModel, examples: list[Example]) -> float:
    """Teacher-forced argmax accuracy over all target tokens."""
    pad_id = model.vocab.pad_id
    correct = 0
    total = 0
    with torch.no_grad():
        for start in range(0, len(examples), 32):
            batch = examples[start : start + 32]
            src, tgt = _pad_batch(batch, pad_id)
            tgt_in, tgt_out = tgt[:, :-1], tgt[:, 1:]
            src_valid = src != pad_id
            logits, _, _ = model.decode_batch(model.encode_batch(src, src_valid), src_valid, tgt_in)
            pred = logits.argmax(dim=-1)
            mask = tgt_out != pad_id
            correct += int((pred.eq(tgt_out) & mask).sum())
            total += int(mask.sum())
    return correct / total if total else 0.0


def _optimizer_params(model: Seq2SeqModel) -> list[tuple[str, torch.nn.Parameter]]:
    return model.trainable_parameters()


def save_train_state(ckpt_dir: Path | str, model: Seq2SeqModel, optimizer, completed_steps: int) -> None:
    """Adam moments in a flat binary next to the checkpoint, for exact resume."""
    ckpt_dir = Path(ckpt_dir)
    named = _optimizer_params(model)
    index = []
    offset = 0
    with open(ckpt_dir / TRAIN_STATE_BIN, "wb") as fh:
        for name, p in named:
            state = optimizer.state.get(p, {})
            avg = state.get("exp_avg", torch.zeros_like(p)).detach().cpu().numpy()
            sq = state.get("exp_avg_sq", torch.zeros_like(p)).detach().cpu().numpy()
            for kind, arr in (("exp_avg", avg), ("exp_avg_sq", sq)):
                data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
                fh.write(data)
                index.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset})
                offset += len(data)
    meta = {"completed_steps": completed_steps, "index": index}
    (ckpt_dir / TRAIN_STATE_JSON).write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_train_state(ckpt_dir: Path | str, model: Seq2SeqModel, optimizer) -> int:
    ckpt_dir = Path(ckpt_dir)
    meta_path = ckpt_dir / TRAIN_STATE_JSON
    if not meta_path.exists():
        raise CheckpointError(f"no training state at {ckpt_dir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    blob = (ckpt_dir / TRAIN_STATE_BIN).read_bytes()
    arrays: dict[tuple[str, str], np.ndarray] = {}
    for entry in meta["index"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[(entry["name"], entry["kind"])] = (
            np.frombuffer(blob[start : start + 4 * count], dtype="<f4").reshape(shape).copy()
        )
    completed = int(meta["completed_steps"])
    for name, p in _optimizer_params(model):
        key_avg, key_sq = (name, "exp_avg"), (name, "exp_avg_sq")
        if key_avg not in arrays or key_sq not in arrays:
            raise CheckpointError(f"training state missing moments for {name}")
        optimizer.state[p] = {
            "step": torch.tensor(float(completed)),
            "exp_avg": torch.from_numpy(arrays[key_avg]).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(arrays[key_sq]).to(p.dtype),
        }
    return completed


def train_base(
    model: Seq2SeqModel,
    dataset: list[Example],
    config: TrainConfig,
    log_path: Path | str | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    start_step: int = 0,
) -> tuple[dict, torch.optim.Optimizer]:
    """Train in place from start_step to config.steps; returns (report, optimizer).

    The batch for step i is a pure function of (seed, i), so a run resumed
    from a saved optimizer state retraces the uninterrupted schedule.
    """
    n_heldout = max(1, int(len(dataset) * config.heldout_fraction))
    if n_heldout >= len(dataset):
        raise ConfigurationError("dataset too small for a held-out split")
    heldout = dataset[-n_heldout:]
    train_set = dataset[:-n_heldout]

    if optimizer is None:
        optimizer = torch.optim.Adam(
            [p for _, p in model.trainable_parameters()], lr=config.learning_rate
        )
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    final_loss = None
    try:
        for step in range(start_step, config.steps):
            batch = [
                train_set[i]
                for i in batch_indices(config.seed, step, len(train_set), config.batch_size)
            ]
            loss = xent_batch_graph(model, batch, config.label_smoothing)
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite base loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            final_loss = float(loss.detach())
            if log_fh is not None:
                log_fh.write(json.dumps({"step": step, "loss": final_loss}, sort_keys=True) + "\n")
    finally:
        if log_fh is not None:
            log_fh.close()

    model.stage = "base"
    report = {
        "steps": config.steps,
        "final_loss": final_loss,
        "heldout_next_token_accuracy": next_token_accuracy(model, heldout),
        "heldout_examples": len(heldout),
    }
    return report, optimizer
