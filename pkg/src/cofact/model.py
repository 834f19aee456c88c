"""Minimal transformer encoder-decoder exposing the internals the pipeline needs.

The model deliberately stays small enough to train on a laptop CPU while
surfacing the three signals the decoding stack consumes: per-step vocabulary
distributions, the final decoder hidden state at each step, and cross-attention
scores over source positions. Parameters live in three named groups
(embeddings, encoder, decoder) that can be frozen independently.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import math
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, LengthError, NumericError, PartitionError
from .vocab import Vocabulary

PARAM_GROUPS = ("embeddings", "encoder", "decoder")
STAGES = ("init", "base", "ict", "dda")

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    ffn_dim: int = 0  # 0 means 4 * d_model
    max_source_len: int = 64
    max_target_len: int = 24
    seed: int = 0
    dtype: str = "float32"
    # Which decoder layer supplies the cross-attention signal and how heads
    # are reduced to one score per source position.
    attn_layer: int = -1
    head_reduction: str = "mean"

    def __post_init__(self) -> None:
        positive = {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_encoder_layers": self.n_encoder_layers,
            "n_decoder_layers": self.n_decoder_layers,
            "max_source_len": self.max_source_len,
            "max_target_len": self.max_target_len,
        }
        for name, value in positive.items():
            if not isinstance(value, int) or value <= 0:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(
                f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}"
            )
        if self.ffn_dim < 0:
            raise ConfigurationError("ffn_dim must be >= 0")
        if self.dtype not in _DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(_DTYPES)}")
        if self.head_reduction not in ("mean", "max"):
            raise ConfigurationError("head_reduction must be 'mean' or 'max'")
        n_layers = self.n_decoder_layers
        if not (-n_layers <= self.attn_layer < n_layers):
            raise ConfigurationError(f"attn_layer {self.attn_layer} out of range for {n_layers} layers")

    @property
    def resolved_ffn_dim(self) -> int:
        return self.ffn_dim if self.ffn_dim else 4 * self.d_model

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclasses.dataclass
class EncoderOutput:
    memory: torch.Tensor          # [source_len, d_model]
    source_mask: np.ndarray       # [source_len] bool, True = attendable (non-pad)
    source_ids: tuple[int, ...]


@dataclasses.dataclass
class DecoderStepOutput:
    distribution: np.ndarray      # [vocab] probabilities
    hidden: np.ndarray            # [d_model]
    cross_attention: np.ndarray   # [source_len], zero at masked-out positions


class _MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(self, query, key, value, mask):
        # mask: [B, 1, Tq, Tk] bool, True = attendable
        bsz, tq, d = query.shape
        tk = key.shape[1]
        q = self.q_proj(query).view(bsz, tq, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(key).view(bsz, tk, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(value).view(bsz, tk, self.n_heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(bsz, tq, d)
        return self.out_proj(out), weights


class _FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int):
        super().__init__()
        self.lin1 = nn.Linear(d_model, ffn_dim)
        self.lin2 = nn.Linear(ffn_dim, d_model)

    def forward(self, x):
        return self.lin2(torch.relu(self.lin1(x)))


class _EncoderLayer(nn.Module):
    def __init__(self, d_model, n_heads, ffn_dim):
        super().__init__()
        self.self_attn = _MultiHeadAttention(d_model, n_heads)
        self.ffn = _FeedForward(d_model, ffn_dim)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)

    def forward(self, x, mask):
        h, _ = self.self_attn(self.norm1(x), self.norm1(x), self.norm1(x), mask)
        x = x + h
        x = x + self.ffn(self.norm2(x))
        return x


class _DecoderLayer(nn.Module):
    def __init__(self, d_model, n_heads, ffn_dim):
        super().__init__()
        self.self_attn = _MultiHeadAttention(d_model, n_heads)
        self.cross_attn = _MultiHeadAttention(d_model, n_heads)
        self.ffn = _FeedForward(d_model, ffn_dim)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)

    def forward(self, x, memory, self_mask, cross_mask):
        h, _ = self.self_attn(self.norm1(x), self.norm1(x), self.norm1(x), self_mask)
        x = x + h
        h, weights = self.cross_attn(self.norm2(x), memory, memory, cross_mask)
        x = x + h
        x = x + self.ffn(self.norm3(x))
        return x, weights


class _Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(
            [_EncoderLayer(cfg.d_model, cfg.n_heads, cfg.resolved_ffn_dim) for _ in range(cfg.n_encoder_layers)]
        )
        self.norm = nn.LayerNorm(cfg.d_model)

    def forward(self, x, mask):
        for layer in self.layers:
            x = layer(x, mask)
        return self.norm(x)


class _Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(
            [_DecoderLayer(cfg.d_model, cfg.n_heads, cfg.resolved_ffn_dim) for _ in range(cfg.n_decoder_layers)]
        )
        self.norm = nn.LayerNorm(cfg.d_model)

    def forward(self, x, memory, self_mask, cross_mask):
        all_weights = []
        for layer in self.layers:
            x, weights = layer(x, memory, self_mask, cross_mask)
            all_weights.append(weights)
        return self.norm(x), all_weights


def _sinusoidal_table(max_len: int, d_model: int) -> torch.Tensor:
    position = np.arange(max_len)[:, None]
    dim = np.arange(d_model)[None, :]
    angle = position / np.power(10000.0, (2 * (dim // 2)) / d_model)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return torch.from_numpy(table.astype(np.float64))


class Seq2SeqModel(nn.Module):
    """Encoder-decoder with grouped parameters and exposed cross-attention."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__()
        if vocab.size != config.vocab_size:
            raise ConfigurationError(
                f"vocab size {vocab.size} does not match config.vocab_size {config.vocab_size}"
            )
        self.config = config
        self.vocab = vocab
        self.embeddings = nn.Embedding(config.vocab_size, config.d_model)
        self.encoder = _Encoder(config)
        self.decoder = _Decoder(config)
        max_len = max(config.max_source_len, config.max_target_len)
        self.register_buffer("pos_table", _sinusoidal_table(max_len, config.d_model), persistent=False)
        self.trainable = {group: True for group in PARAM_GROUPS}
        self.stage = "init"
        self.to(config.torch_dtype)
        self._init_parameters()
        self.eval()

    # ------------------------------------------------------------------
    # construction / parameter management

    def _init_parameters(self) -> None:
        gen = torch.Generator().manual_seed(self.config.seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name == "embeddings.weight":
                    p.normal_(0.0, self.config.d_model ** -0.5, generator=gen)
                elif p.dim() >= 2:
                    fan_in, fan_out = p.shape[1], p.shape[0]
                    bound = math.sqrt(6.0 / (fan_in + fan_out))
                    p.uniform_(-bound, bound, generator=gen)
                elif name.endswith("bias"):
                    p.zero_()
                else:  # layer-norm weights
                    p.fill_(1.0)

    def group_of(self, param_name: str) -> str:
        group = param_name.split(".", 1)[0]
        if group not in PARAM_GROUPS:
            raise ConfigurationError(f"parameter {param_name} belongs to no known group")
        return group

    def set_trainable(self, group: str, flag: bool) -> None:
        if group not in PARAM_GROUPS:
            raise ConfigurationError(f"unknown parameter group {group!r}")
        self.trainable[group] = flag
        for name, p in self.named_parameters():
            if self.group_of(name) == group:
                p.requires_grad_(flag)

    def trainable_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return [
            (name, p)
            for name, p in self.named_parameters()
            if self.trainable[self.group_of(name)]
        ]

    def parameter_checksums(self) -> dict[str, str]:
        """Per-group content hash; bit-identical arrays hash identically."""
        digests = {group: hashlib.sha256() for group in PARAM_GROUPS}
        for name, p in sorted(self.named_parameters(), key=lambda kv: kv[0]):
            digests[self.group_of(name)].update(name.encode())
            digests[self.group_of(name)].update(p.detach().cpu().numpy().tobytes())
        return {group: d.hexdigest() for group, d in digests.items()}

    def clone(self) -> "Seq2SeqModel":
        return copy.deepcopy(self)

    # ------------------------------------------------------------------
    # tensor-level forward paths (grad-capable, batched)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.embeddings(ids) * math.sqrt(self.config.d_model)
        return x + self.pos_table[: ids.shape[1]].to(x.dtype)

    def encode_batch(self, src: torch.Tensor, src_valid: torch.Tensor) -> torch.Tensor:
        """src [B,S] int64, src_valid [B,S] bool -> memory [B,S,d]."""
        mask = src_valid[:, None, None, :]
        return self.encoder(self.embed(src), mask)

    def decode_batch(
        self,
        memory: torch.Tensor,
        src_valid: torch.Tensor,
        tgt_in: torch.Tensor,
        attend_mask: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Teacher-forced decoder pass.

        attend_mask, when given, is [B,T,S] bool and is intersected with the
        source validity mask row by row; excluded positions receive exactly
        zero cross-attention. Returns (logits [B,T,V], hidden [B,T,d],
        cross_attention [B,T,S]).
        """
        bsz, tlen = tgt_in.shape
        cross = src_valid[:, None, None, :].expand(bsz, 1, tlen, -1)
        if attend_mask is not None:
            cross = cross & attend_mask[:, None, :, :]
        if not bool(cross.any(dim=-1).all()):
            raise PartitionError("attend mask leaves no attendable source position")
        causal = torch.ones(tlen, tlen, dtype=torch.bool).tril()[None, None]
        hidden, weights = self.decoder(self.embed(tgt_in), memory, causal, cross)
        layer_weights = weights[self.config.attn_layer]
        if self.config.head_reduction == "mean":
            attn = layer_weights.mean(dim=1)
        else:
            attn = layer_weights.max(dim=1).values
        logits = torch.nn.functional.linear(hidden, self.embeddings.weight)
        return logits, hidden, attn

    # ------------------------------------------------------------------
    # sequence-level public API (single example, no grad)

    def _check_source(self, source: Sequence[int]) -> list[int]:
        source = list(int(t) for t in source)
        if len(source) > self.config.max_source_len:
            raise LengthError(
                f"source length {len(source)} exceeds max_source_len {self.config.max_source_len}"
            )
        if any(t < 0 or t >= self.config.vocab_size for t in source):
            raise ValueError("source contains ids outside the vocabulary")
        return source

    def encode(self, source: Sequence[int]) -> EncoderOutput:
        source = self._check_source(source)
        src = torch.tensor([source], dtype=torch.long)
        valid = src != self.vocab.pad_id
        with torch.no_grad():
            memory = self.encode_batch(src, valid)
        return EncoderOutput(
            memory=memory[0],
            source_mask=valid[0].numpy().copy(),
            source_ids=tuple(source),
        )

    def _resolve_attend(self, enc: EncoderOutput, attend_mask, tlen: int) -> torch.Tensor | None:
        if attend_mask is None:
            return None
        mask = np.asarray(attend_mask, dtype=bool)
        slen = len(enc.source_ids)
        if mask.ndim == 1:
            if mask.shape[0] != slen:
                raise ValueError(f"attend mask length {mask.shape[0]} != source length {slen}")
            mask = np.broadcast_to(mask, (tlen, slen))
        elif mask.ndim == 2:
            if mask.shape != (tlen, slen):
                raise ValueError(f"attend mask shape {mask.shape} != ({tlen}, {slen})")
        else:
            raise ValueError("attend mask must be 1-D or 2-D")
        return torch.from_numpy(np.ascontiguousarray(mask).copy())[None]

    def decode_step(
        self,
        enc: EncoderOutput,
        prefix: Sequence[int],
        attend_mask=None,
    ) -> DecoderStepOutput:
        prefix = [int(t) for t in prefix]
        if not prefix or prefix[0] != self.vocab.bos_id:
            raise ValueError("prefix must begin with BOS")
        if len(prefix) > self.config.max_target_len:
            raise LengthError("prefix exceeds max_target_len")
        tgt = torch.tensor([prefix], dtype=torch.long)
        valid = torch.from_numpy(enc.source_mask)[None]
        attend = self._resolve_attend(enc, attend_mask, len(prefix))
        with torch.no_grad():
            logits, hidden, attn = self.decode_batch(enc.memory[None], valid, tgt, attend)
            dist = torch.softmax(logits[0, -1].to(torch.float64), dim=-1)
        return DecoderStepOutput(
            distribution=dist.numpy(),
            hidden=hidden[0, -1].to(torch.float64).numpy(),
            cross_attention=attn[0, -1].to(torch.float64).numpy(),
        )

    def _check_target(self, target: Sequence[int]) -> list[int]:
        target = [int(t) for t in target]
        if len(target) < 2 or target[0] != self.vocab.bos_id or target[-1] != self.vocab.eos_id:
            raise ValueError("target must begin with BOS and end with EOS")
        if len(target) > self.config.max_target_len:
            raise LengthError(
                f"target length {len(target)} exceeds max_target_len {self.config.max_target_len}"
            )
        return target

    def forward_teacher_forced(
        self,
        source: Sequence[int],
        target: Sequence[int],
        attend_mask=None,
    ) -> list[DecoderStepOutput]:
        """One DecoderStepOutput per target token after BOS.

        Step t (1-based) equals decode_step on the prefix target[0..t).
        attend_mask may be [S] (one mask for every step) or [T,S] with one
        row per step; per-row masks are the ICT training construct.
        """
        source = self._check_source(source)
        target = self._check_target(target)
        tgt_in = torch.tensor([target[:-1]], dtype=torch.long)
        src = torch.tensor([source], dtype=torch.long)
        valid = src != self.vocab.pad_id
        enc_stub = EncoderOutput(
            memory=torch.empty(0), source_mask=valid[0].numpy(), source_ids=tuple(source)
        )
        attend = self._resolve_attend(enc_stub, attend_mask, tgt_in.shape[1])
        with torch.no_grad():
            memory = self.encode_batch(src, valid)
            logits, hidden, attn = self.decode_batch(memory, valid, tgt_in, attend)
            dists = torch.softmax(logits[0].to(torch.float64), dim=-1)
        steps = []
        for t in range(tgt_in.shape[1]):
            steps.append(
                DecoderStepOutput(
                    distribution=dists[t].numpy(),
                    hidden=hidden[0, t].to(torch.float64).numpy(),
                    cross_attention=attn[0, t].to(torch.float64).numpy(),
                )
            )
        return steps


def build_model(config: ModelConfig, vocab: Vocabulary) -> Seq2SeqModel:
    """Deterministic construction: equal configs give bit-identical parameters."""
    return Seq2SeqModel(config, vocab)


def loss_gradients(model: Seq2SeqModel, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Gradients of a scalar loss for every trainable parameter, and only those."""
    if loss.dim() != 0:
        raise ValueError("loss must be a scalar tensor")
    if not torch.isfinite(loss):
        raise NumericError(f"loss is not finite: {loss.item()!r}")
    named = model.trainable_parameters()
    params = [p for _, p in named]
    grads = torch.autograd.grad(loss, params, allow_unused=True, retain_graph=False)
    out = {}
    for (name, p), g in zip(named, grads):
        out[name] = torch.zeros_like(p) if g is None else g.detach()
    return out
