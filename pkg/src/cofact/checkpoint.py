"""Checkpoint directory format: manifest.json + params.bin.

manifest.json records the model config, seed, pipeline stage and an index of
parameter names with shapes and byte offsets; params.bin holds little-endian
32-bit floats concatenated in index order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .model import STAGES, ModelConfig, Seq2SeqModel, build_model
from .vocab import Vocabulary

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"
FORMAT_VERSION = 1


def _write_params(path: Path, arrays: list[tuple[str, np.ndarray]]) -> list[dict]:
    index = []
    offset = 0
    with open(path / PARAMS_NAME, "wb") as fh:
        for name, arr in arrays:
            data = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(data.tobytes())
            index.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += data.nbytes
    return index


def _read_params(path: Path, index: list[dict]) -> dict[str, np.ndarray]:
    blob = (path / PARAMS_NAME).read_bytes()
    out = {}
    for entry in index:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(f"params.bin truncated at parameter {entry['name']}")
        out[entry["name"]] = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).copy()
    return out


def _load_manifest(path: Path, kind: str) -> dict:
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"no manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupted manifest at {manifest_path}: {exc}") from exc
    if manifest.get("kind") != kind:
        raise CheckpointError(f"expected a {kind!r} checkpoint, found {manifest.get('kind')!r}")
    return manifest


def save_checkpoint(model: Seq2SeqModel, path: Path | str) -> None:
    if model.config.dtype != "float32":
        raise CheckpointError("only float32 models are checkpointed")
    if model.stage not in STAGES:
        raise CheckpointError(f"unknown stage {model.stage!r}")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = [(name, p.detach().cpu().numpy()) for name, p in model.named_parameters()]
    index = _write_params(path, arrays)
    manifest = {
        "kind": "model",
        "format_version": FORMAT_VERSION,
        "stage": model.stage,
        "seed": model.config.seed,
        "config": model.config.to_dict(),
        "vocab": list(model.vocab.tokens),
        "params": index,
    }
    (path / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_checkpoint(path: Path | str) -> Seq2SeqModel:
    path = Path(path)
    manifest = _load_manifest(path, "model")
    try:
        config = ModelConfig.from_dict(manifest["config"])
        vocab = Vocabulary(manifest["vocab"])
        stage = manifest["stage"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"manifest missing required fields: {exc}") from exc
    if config.vocab_size != vocab.size:
        raise CheckpointError(
            f"manifest vocab has {vocab.size} entries but config.vocab_size is {config.vocab_size}"
        )
    if stage not in STAGES:
        raise CheckpointError(f"unknown stage {stage!r} in manifest")
    model = build_model(config, vocab)
    arrays = _read_params(path, manifest["params"])
    own = dict(model.named_parameters())
    if set(arrays) != set(own):
        raise CheckpointError("checkpoint parameter names do not match the model")
    with torch.no_grad():
        for name, arr in arrays.items():
            if tuple(own[name].shape) != arr.shape:
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {arr.shape}, model {tuple(own[name].shape)}"
                )
            own[name].copy_(torch.from_numpy(arr))
    model.stage = stage
    return model


def save_head_checkpoint(
    weight: np.ndarray, bias: np.ndarray, d_model: int, seed: int, path: Path | str
) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if weight.shape != (2, 4 * d_model) or bias.shape != (2,):
        raise CheckpointError(
            f"head shapes {weight.shape}/{bias.shape} do not match d_model={d_model}"
        )
    index = _write_params(path, [("weight", weight), ("bias", bias)])
    manifest = {
        "kind": "predictor_head",
        "format_version": FORMAT_VERSION,
        "stage": "dda",
        "seed": seed,
        "config": {"d_model": d_model},
        "params": index,
    }
    (path / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_head_checkpoint(path: Path | str) -> tuple[np.ndarray, np.ndarray, int]:
    path = Path(path)
    manifest = _load_manifest(path, "predictor_head")
    d_model = int(manifest["config"]["d_model"])
    arrays = _read_params(path, manifest["params"])
    if set(arrays) != {"weight", "bias"}:
        raise CheckpointError("head checkpoint must contain exactly weight and bias")
    weight = arrays["weight"].astype(np.float64)
    bias = arrays["bias"].astype(np.float64)
    if weight.shape != (2, 4 * d_model) or bias.shape != (2,):
        raise CheckpointError("head checkpoint shapes inconsistent with manifest d_model")
    return weight, bias, d_model
