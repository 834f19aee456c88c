"""Command-line pipeline: corpus generation, the three training stages,
debiased decoding, evaluation, the irrelevant-attention probe, and the
debias-ratio sweep.

Every command writes resolved_config.json (with a content fingerprint) next
to its outputs, and reruns with the same inputs and seed are bit-identical.
Exit codes: 0 success, 2 usage/configuration error, 3 numeric failure.
"""

from __future__ import annotations

import configparser
import dataclasses
import functools
import os
import sys
from pathlib import Path

import click
import numpy as np
import torch

from .attention import STATIC_STRATEGIES, static_partition
from .checkpoint import load_checkpoint, load_head_checkpoint, save_checkpoint, save_head_checkpoint
from .corpus import CorpusSpec, SyntheticExample, generate_corpus, load_corpus_dir, save_corpus_dir
from .dda import DDAConfig, PredictorHead, build_labeled_dataset, train_predictor
from .decoding import (
    PROFILES,
    DebiasConfig,
    decode_beam,
    decode_trace,
)
from .errors import CofactError, ConfigurationError, NumericError
from .evaluation import EvalReport, SystemSpec, bias_probe, evaluate_systems, render_table
from .ict import ICTConfig, train_ict
from .model import ModelConfig, Seq2SeqModel, build_model
from .training import TrainConfig, load_train_state, save_train_state, train_base
from .utils import fingerprint, read_json, read_jsonl, write_json, write_jsonl
from .vocab import Vocabulary

DEFAULT_PROPORTIONS = "0,0.25,0.5,0.75,0.9"
DEFAULT_GRID = "0,0.05,0.15,0.4,0.8"


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericError as exc:
            _fail(3, str(exc))
        except (CofactError, FileNotFoundError, KeyError, ValueError) as exc:
            _fail(2, str(exc))

    return wrapper


# ----------------------------------------------------------------------
# configuration plumbing


def load_config_file(path: str | None) -> dict[str, dict[str, str]]:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    parser = configparser.ConfigParser()
    parser.read(p)
    return {section: dict(parser.items(section)) for section in parser.sections()}


def _convert(value: str, type_name: str):
    if type_name == "int":
        return int(value)
    if type_name == "float":
        return float(value)
    if type_name == "bool":
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"cannot parse boolean value {value!r}")
    return value


def section_config(cls, raw: dict[str, str] | None, overrides: dict | None = None):
    """Build a config dataclass from a key-value section plus CLI overrides."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in (raw or {}).items():
        if key not in fields:
            raise ConfigurationError(f"unknown {cls.__name__} key {key!r} in config file")
        kwargs[key] = _convert(value, str(fields[key].type))
    for key, value in (overrides or {}).items():
        if value is not None:
            kwargs[key] = value
    return cls(**kwargs)


def seed_from_env() -> int | None:
    raw = os.environ.get("COFACT_SEED")
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"COFACT_SEED must be an integer, got {raw!r}") from exc


def apply_seed_override(config, resolved: dict):
    override = seed_from_env()
    if override is not None and hasattr(config, "seed"):
        config = dataclasses.replace(config, seed=override)
        resolved["seed_env_override"] = override
        click.echo(f"seed overridden by COFACT_SEED={override}", err=True)
    return config


def write_resolved(out_dir: Path, command: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {"command": command, "config": payload}
    write_json(out_dir / "resolved_config.json", {"resolved": resolved, "fingerprint": fingerprint(resolved)})


def _encode_examples(examples, vocab: Vocabulary):
    return [
        (vocab.encode(ex.document, frame=True), vocab.encode(ex.summary, frame=True))
        for ex in examples
    ]


def _doc_static_partition(document: list[str], entity_spans, strategy: str, vocab: Vocabulary):
    """Fixed partition for one document; span positions shift by 1 for BOS."""
    source_ids = vocab.encode(document, frame=True)
    positions = [int(start) + 1 for start, _end in entity_spans]
    return static_partition(source_ids, strategy, positions, vocab, period_id=vocab.id_of("."))


def _require_stage(model: Seq2SeqModel, stage: str, role: str) -> None:
    if model.stage != stage:
        raise ConfigurationError(
            f"{role} checkpoint has stage {model.stage!r}, expected {stage!r}"
        )


def _check_vocab(model: Seq2SeqModel, vocab: Vocabulary, role: str) -> None:
    if model.vocab != vocab:
        raise ConfigurationError(f"{role} checkpoint vocabulary does not match the dataset")


# ----------------------------------------------------------------------
# commands


@click.group()
def main() -> None:
    """Counterfactually debiased summarization laboratory."""
    torch.set_num_threads(1)  # keeps reruns bit-identical


@main.command("gen-data")
@click.argument("spec_file", type=str)
@click.argument("out_dir", type=str)
@cli_errors
def gen_data(spec_file: str, out_dir: str) -> None:
    """Generate the synthetic corpus described by SPEC_FILE into OUT_DIR."""
    sections = load_config_file(spec_file)
    resolved: dict = {}
    spec = section_config(CorpusSpec, sections.get("data"))
    spec = apply_seed_override(spec, resolved)
    train, test, vocab, _grammar, card = generate_corpus(spec)
    out = Path(out_dir)
    save_corpus_dir(out, train, test, vocab, card)
    resolved.update(spec.to_dict())
    write_resolved(out, "gen-data", resolved)
    click.echo(f"wrote {len(train)} train / {len(test)} test examples to {out}")


@main.command("train-base")
@click.option("--config", "config_path", type=str, default=None, help="INI config file.")
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--steps", type=int, default=None, help="Override total training steps.")
@click.option("--seed", type=int, default=None)
@click.option("--resume", "resume_dir", type=str, default=None, help="Checkpoint dir to resume from.")
@cli_errors
def cmd_train_base(config_path, data_dir, out_dir, steps, seed, resume_dir) -> None:
    """Teacher-forced cross-entropy training of the base summarizer."""
    sections = load_config_file(config_path)
    resolved: dict = {}
    train_cfg = section_config(TrainConfig, sections.get("train-base"), {"steps": steps, "seed": seed})
    train_cfg = apply_seed_override(train_cfg, resolved)
    train_ex, _test_ex, vocab, _grammar, _card = load_corpus_dir(data_dir)
    model_cfg = section_config(
        ModelConfig,
        sections.get("model"),
        {"vocab_size": vocab.size, "seed": train_cfg.seed},
    )
    dataset = _encode_examples(train_ex, vocab)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoint"
    start_step = 0
    optimizer = None
    if resume_dir is not None:
        model = load_checkpoint(resume_dir)
        if model.config != model_cfg:
            raise ConfigurationError("resume checkpoint config does not match the requested config")
        optimizer = torch.optim.Adam(
            [p for _, p in model.trainable_parameters()], lr=train_cfg.learning_rate
        )
        start_step = load_train_state(resume_dir, model, optimizer)
    else:
        model = build_model(model_cfg, vocab)

    report, optimizer = train_base(
        model, dataset, train_cfg, log_path=out / "train_log.jsonl",
        optimizer=optimizer, start_step=start_step,
    )
    save_checkpoint(model, ckpt_dir)
    save_train_state(ckpt_dir, model, optimizer, train_cfg.steps)
    write_json(out / "metrics.json", report)
    write_resolved(out, "train-base", {"train": dataclasses.asdict(train_cfg), "model": model_cfg.to_dict(), **resolved})
    click.echo(
        f"trained {train_cfg.steps} steps; held-out next-token accuracy "
        f"{report['heldout_next_token_accuracy']:.4f}"
    )


@main.command("train-ict")
@click.option("--base", "base_dir", type=str, required=True)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@cli_errors
def cmd_train_ict(base_dir, config_path, data_dir, out_dir, steps, seed) -> None:
    """Train the counterfactual decoder from a base checkpoint."""
    sections = load_config_file(config_path)
    resolved: dict = {}
    cfg = section_config(ICTConfig, sections.get("train-ict"), {"steps": steps, "seed": seed})
    cfg = apply_seed_override(cfg, resolved)
    base = load_checkpoint(base_dir)
    _require_stage(base, "base", "base")
    train_ex, _test_ex, vocab, _grammar, _card = load_corpus_dir(data_dir)
    _check_vocab(base, vocab, "base")
    dataset = _encode_examples(train_ex, vocab)
    partitions = None
    if cfg.strategy != "dynamic":
        partitions = [
            _doc_static_partition(ex.document, ex.entity_spans, cfg.strategy, vocab)
            for ex in train_ex
        ]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    before = base.parameter_checksums()
    cf, report = train_ict(base, dataset, cfg, log_path=out / "train_log.jsonl",
                           static_partitions=partitions)
    after = cf.parameter_checksums()
    report["freeze_check"] = {
        "embeddings": before["embeddings"] == after["embeddings"],
        "encoder": before["encoder"] == after["encoder"],
    }
    if not all(report["freeze_check"].values()):
        raise NumericError("frozen parameter groups changed during ICT training")
    save_checkpoint(cf, out / "checkpoint")
    write_json(out / "metrics.json", report)
    write_resolved(out, "train-ict", {"ict": dataclasses.asdict(cfg), **resolved})
    click.echo(
        "counterfactual decoder trained; held-out unlikelihood "
        f"{report['heldout_start']['l_unl']:.4f} -> {report['heldout_end']['l_unl']:.4f}"
    )


@main.command("train-dda")
@click.option("--base", "base_dir", type=str, required=True)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@cli_errors
def cmd_train_dda(base_dir, config_path, data_dir, out_dir, steps, seed) -> None:
    """Build labeled corruptions and train the consistency predictor head."""
    sections = load_config_file(config_path)
    resolved: dict = {}
    cfg = section_config(DDAConfig, sections.get("train-dda"), {"steps": steps, "seed": seed})
    cfg = apply_seed_override(cfg, resolved)
    base = load_checkpoint(base_dir)
    _require_stage(base, "base", "base")
    train_ex, _test_ex, vocab, grammar, _card = load_corpus_dir(data_dir)
    _check_vocab(base, vocab, "base")

    labeled, skipped = build_labeled_dataset(
        train_ex, grammar, cfg.seed, cfg.corrupt_fraction, cfg.two_swap_prob, cfg.drafts_per_doc
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "labeled.jsonl", (ls.to_record() for ls in labeled))

    by_id = {ex.example_id: ex for ex in train_ex}
    pairs = [
        (vocab.encode(by_id[ls.doc_id].document, frame=True), ls)
        for ls in labeled
    ]
    before = base.parameter_checksums()
    head, report = train_predictor(base, pairs, cfg)
    after = base.parameter_checksums()
    report["skipped_corruptions"] = skipped
    report["freeze_check"] = {group: before[group] == after[group] for group in before}
    if not all(report["freeze_check"].values()):
        raise NumericError("base model changed during predictor training")
    save_head_checkpoint(head.weight, head.bias, base.config.d_model, cfg.seed, out / "head")
    write_json(out / "metrics.json", report)
    write_resolved(out, "train-dda", {"dda": dataclasses.asdict(cfg), **resolved})
    click.echo(f"predictor trained; held-out token accuracy {report['heldout_accuracy']:.4f}")


def _build_debias_config(
    profile: str | None,
    alpha: float | None,
    beta: float | None,
    rho: float | None,
    beam: int | None,
    max_steps: int | None,
    no_dda: bool,
    no_ecm: bool,
    no_ict: bool,
    has_head: bool,
    section: dict[str, str] | None = None,
) -> DebiasConfig:
    base = dict(PROFILES[profile]) if profile else {}
    cfg = section_config(DebiasConfig, section, base or None)
    overrides: dict = {}
    if alpha is not None:
        overrides["alpha"] = alpha
    if beta is not None:
        overrides["beta"] = beta
    if rho is not None:
        overrides["rho"] = rho
    if beam is not None:
        overrides["beam_size"] = beam
    if max_steps is not None:
        overrides["max_steps"] = max_steps
    if no_ecm:
        overrides["alpha"] = 0.0
    if no_ict:
        overrides["beta"] = 0.0
    overrides["use_dda"] = has_head and not no_dda
    return dataclasses.replace(cfg, **overrides)


def _load_head(head_dir: str | None) -> PredictorHead | None:
    if head_dir is None:
        return None
    weight, bias, _d = load_head_checkpoint(head_dir)
    return PredictorHead(weight, bias)


@main.command("decode")
@click.option("--base", "base_dir", type=str, required=True)
@click.option("--cf", "cf_dir", type=str, default=None, help="Counterfactual decoder checkpoint.")
@click.option("--head", "head_dir", type=str, default=None, help="Consistency predictor checkpoint.")
@click.option("--input", "input_file", type=str, required=True)
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--profile", type=click.Choice(sorted(PROFILES)), default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--rho", type=float, default=None)
@click.option("--beam", type=int, default=None)
@click.option("--max-steps", type=int, default=None)
@click.option("--no-dda", is_flag=True, help="Disable the debiasing-degree gate.")
@click.option("--no-ecm", is_flag=True, help="Force alpha to 0.")
@click.option("--no-ict", is_flag=True, help="Force beta to 0.")
@click.option("--strategy", type=click.Choice(("dynamic",) + STATIC_STRATEGIES), default="dynamic",
              show_default=True, help="Masking strategy; static choices use entity annotations.")
@click.option("--trace", "with_trace", is_flag=True, help="Record per-step scores (greedy decoding).")
@cli_errors
def cmd_decode(
    base_dir, cf_dir, head_dir, input_file, out_dir, config_path, profile,
    alpha, beta, rho, beam, max_steps, no_dda, no_ecm, no_ict, strategy, with_trace,
) -> None:
    """Debiased decoding of documents from a JSON-lines input file."""
    sections = load_config_file(config_path)
    base = load_checkpoint(base_dir)
    _require_stage(base, "base", "base")
    head = _load_head(head_dir)
    if head is not None and head.d_model != base.config.d_model:
        raise ConfigurationError("predictor head dimension does not match the base model")
    cfg = _build_debias_config(
        profile, alpha, beta, rho, beam, max_steps, no_dda, no_ecm, no_ict,
        has_head=head is not None, section=sections.get("decode"),
    )
    cf = None
    if cfg.beta > 0:
        if cf_dir is None:
            raise ConfigurationError("beta > 0 requires --cf; pass --no-ict to decode without it")
        cf = load_checkpoint(cf_dir)
        _require_stage(cf, "ict", "counterfactual")
        if cf.vocab != base.vocab:
            raise ConfigurationError("base and counterfactual checkpoints use different vocabularies")
    if no_dda and head is None and head_dir is not None:
        raise ConfigurationError("--no-dda conflicts with --head")

    docs = list(read_jsonl(input_file))
    vocab = base.vocab
    summaries = []
    traces = []
    for doc in docs:
        source = vocab.encode(doc["document"], frame=True)
        fixed = None
        if strategy != "dynamic":
            part = _doc_static_partition(doc["document"], doc.get("entity_spans", []), strategy, vocab)
            fixed = part.important
        if with_trace or cfg.beam_size == 1:
            out_ids, trace = decode_trace(base, cf, head, source, cfg, fixed_important=fixed)
            if with_trace:
                for step in trace:
                    full = step.scores.p_full
                    deb = step.scores.debiased
                    top_full = np.argsort(-full, kind="stable")[:5]
                    top_deb = np.argsort(-deb, kind="stable")[:5]
                    traces.append(
                        {
                            "id": doc["id"],
                            "t": step.t,
                            "chosen": vocab.tokens[step.chosen],
                            "s_tilde": step.scores.s_tilde,
                            "masked_positions": list(step.masked_positions),
                            "top5_full": [[vocab.tokens[v], float(full[v])] for v in top_full],
                            "top5_debiased": [[vocab.tokens[v], float(deb[v])] for v in top_deb],
                        }
                    )
        else:
            out_ids = decode_beam(base, cf, head, source, cfg, fixed_important=fixed)
        summaries.append({"id": doc["id"], "tokens": vocab.decode(out_ids, strip_special=True)})

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "summaries.jsonl", summaries)
    if with_trace:
        write_jsonl(out / "trace.jsonl", traces)
    write_resolved(out, "decode", {"debias": dataclasses.asdict(cfg), "strategy": strategy,
                                   "n_documents": len(docs)})
    click.echo(f"decoded {len(docs)} documents into {out}")


def _system_from_row(row: dict, cache: dict) -> SystemSpec:
    def cached_model(path: str | None):
        if path is None:
            return None
        if path not in cache:
            cache[path] = load_checkpoint(path)
        return cache[path]

    base = cached_model(row["base"])
    _require_stage(base, "base", "base")
    cf = cached_model(row.get("cf"))
    if cf is not None:
        _require_stage(cf, "ict", "counterfactual")
    head = _load_head(row.get("head"))
    cfg = DebiasConfig(
        alpha=float(row.get("alpha", 0.0)),
        beta=float(row.get("beta", 0.0)),
        rho=float(row.get("rho", 0.5)),
        beam_size=int(row.get("beam_size", 1)),
        use_dda=bool(row.get("use_dda", False)) and head is not None,
        max_steps=int(row.get("max_steps", 0)),
    )
    if cfg.beta > 0 and cf is None:
        raise ConfigurationError(f"row {row.get('label')!r} sets beta > 0 without a cf checkpoint")
    return SystemSpec(label=row["label"], base=base, cf=cf, head=head, config=cfg)


def _ablation_rows(base, cf, head, alpha, beta, rho, beam_size) -> list[dict]:
    shared = {"base": base, "cf": cf, "head": head, "rho": rho, "beam_size": beam_size}
    return [
        {"label": "full", "alpha": alpha, "beta": beta, "use_dda": True, **shared},
        {"label": "w/o DDA", "alpha": alpha, "beta": beta, "use_dda": False, **shared},
        {"label": "w/o ECM", "alpha": 0.0, "beta": beta, "use_dda": True, **shared},
        {"label": "w/o ICT", "alpha": alpha, "beta": 0.0, "use_dda": True, **shared},
        {"label": "w/o all", "alpha": 0.0, "beta": 0.0, "use_dda": False, **shared},
    ]


def _write_reports(out: Path, name: str, reports: list[EvalReport]) -> None:
    write_json(out / f"{name}.json", {"rows": [rep.to_record() for rep in reports]})
    (out / f"{name}.tsv").write_text(render_table(reports), encoding="utf-8")


@main.command("evaluate")
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--rows", "rows_file", type=str, default=None, help="JSON file with evaluation rows.")
@click.option("--ablation", is_flag=True, help="Evaluate the standard ablation rows.")
@click.option("--base", "base_dir", type=str, default=None)
@click.option("--cf", "cf_dir", type=str, default=None)
@click.option("--head", "head_dir", type=str, default=None)
@click.option("--alpha", type=float, default=0.15)
@click.option("--beta", type=float, default=0.15)
@click.option("--rho", type=float, default=0.5)
@click.option("--beam", type=int, default=1)
@cli_errors
def cmd_evaluate(data_dir, out_dir, rows_file, ablation, base_dir, cf_dir, head_dir, alpha, beta, rho, beam) -> None:
    """Evaluate one or more decoding configurations on the test split."""
    if rows_file is None and not ablation:
        raise ConfigurationError("pass --rows FILE or --ablation")
    if rows_file is not None:
        rows = read_json(rows_file)["rows"]
    else:
        if base_dir is None or cf_dir is None or head_dir is None:
            raise ConfigurationError("--ablation needs --base, --cf and --head")
        rows = _ablation_rows(base_dir, cf_dir, head_dir, alpha, beta, rho, beam)
    _train_ex, test_ex, vocab, grammar, _card = load_corpus_dir(data_dir)
    cache: dict = {}
    systems = [_system_from_row(row, cache) for row in rows]
    for system in systems:
        _check_vocab(system.base, vocab, f"row {system.label!r}")
    fingerprints = [fingerprint(row) for row in rows]
    reports = evaluate_systems(systems, test_ex, grammar, vocab, fingerprints)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_reports(out, "report", reports)
    write_resolved(out, "evaluate", {"rows": rows})
    click.echo(render_table(reports).rstrip())


@main.command("probe-bias")
@click.option("--base", "base_dir", type=str, required=True)
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--proportions", type=str, default=DEFAULT_PROPORTIONS, show_default=True)
@click.option("--max-steps", type=int, default=0)
@click.option("--plot", "with_plot", is_flag=True)
@cli_errors
def cmd_probe_bias(base_dir, data_dir, out_dir, proportions, max_steps, with_plot) -> None:
    """Force attention toward the least attended source positions and measure
    how the metrics degrade."""
    props = [float(p) for p in proportions.split(",") if p.strip() != ""]
    if not props:
        raise ConfigurationError("no proportions given")
    base = load_checkpoint(base_dir)
    _require_stage(base, "base", "base")
    _train_ex, test_ex, vocab, grammar, _card = load_corpus_dir(data_dir)
    _check_vocab(base, vocab, "base")
    reports = bias_probe(base, test_ex, props, grammar, vocab, max_steps)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_reports(out, "probe", reports)
    if with_plot:
        from .plots import line_chart

        line_chart(
            out / "probe.png",
            props,
            {
                "fact_precision": [r.fact_precision for r in reports],
                "rouge_l": [r.rouge_l for r in reports],
            },
            xlabel="forced irrelevant proportion",
            ylabel="score",
        )
    write_resolved(out, "probe-bias", {"proportions": props, "max_steps": max_steps})
    click.echo(render_table(reports).rstrip())


@main.command("sweep")
@click.option("--base", "base_dir", type=str, required=True)
@click.option("--cf", "cf_dir", type=str, required=True)
@click.option("--head", "head_dir", type=str, default=None)
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--grid", type=str, default=DEFAULT_GRID, show_default=True, help="Comma-separated ratios applied to both subtraction weights.")
@click.option("--rho", type=float, default=0.5)
@click.option("--beam", type=int, default=1)
@click.option("--max-steps", type=int, default=0)
@click.option("--no-dda", is_flag=True)
@click.option("--plot", "with_plot", is_flag=True)
@cli_errors
def cmd_sweep(base_dir, cf_dir, head_dir, data_dir, out_dir, grid, rho, beam, max_steps, no_dda, with_plot) -> None:
    """Decode and evaluate across a grid of debias ratios (alpha = beta)."""
    ratios = [float(g) for g in grid.split(",") if g.strip() != ""]
    if not ratios:
        raise ConfigurationError("empty sweep grid")
    base = load_checkpoint(base_dir)
    _require_stage(base, "base", "base")
    cf = load_checkpoint(cf_dir)
    _require_stage(cf, "ict", "counterfactual")
    head = _load_head(head_dir)
    use_dda = head is not None and not no_dda
    _train_ex, test_ex, vocab, grammar, _card = load_corpus_dir(data_dir)
    _check_vocab(base, vocab, "base")

    systems = []
    rows = []
    for ratio in ratios:
        cfg = DebiasConfig(
            alpha=ratio, beta=ratio, rho=rho, beam_size=beam, use_dda=use_dda, max_steps=max_steps
        )
        rows.append({"ratio": ratio, **dataclasses.asdict(cfg)})
        systems.append(SystemSpec(label=f"ratio={ratio:g}", base=base, cf=cf, head=head, config=cfg))
    reports = evaluate_systems(systems, test_ex, grammar, vocab, [fingerprint(r) for r in rows])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_reports(out, "sweep", reports)
    if with_plot:
        from .plots import line_chart

        line_chart(
            out / "sweep.png",
            ratios,
            {
                "fact_precision": [r.fact_precision for r in reports],
                "rouge_l": [r.rouge_l for r in reports],
            },
            xlabel="debias ratio (alpha = beta)",
            ylabel="score",
        )
    write_resolved(out, "sweep", {"grid": ratios, "rows": rows})
    click.echo(render_table(reports).rstrip())


if __name__ == "__main__":
    main()
