"""Debiasing-degree machinery.

Builds synthetic factually inconsistent summaries with token labels, trains a
small per-step consistency predictor on decoder states, and converts its
inconsistency probability into a smoothed gating value for decoding.
"""

from __future__ import annotations

import dataclasses
import random
from typing import Sequence

import numpy as np
import torch

from .attention import mask_document, select_important
from .corpus import Grammar, SyntheticExample, parse_facts
from .errors import ConfigurationError, NumericError
from .ict import content_mask
from .model import Seq2SeqModel
from .vocab import Vocabulary

CONSISTENT = 0
INCONSISTENT = 1


@dataclasses.dataclass
class LabeledSummary:
    doc_id: str
    tokens: list[str]
    labels: list[int]
    origin: str  # "gold" | "corrupted"

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "tokens": list(self.tokens),
            "labels": list(self.labels),
            "origin": self.origin,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LabeledSummary":
        return cls(rec["doc_id"], list(rec["tokens"]), list(rec["labels"]), rec["origin"])


@dataclasses.dataclass(frozen=True)
class ConsistencyScore:
    s_c: float
    s_ic: float
    s_tilde: float


@dataclasses.dataclass
class PredictorHead:
    weight: np.ndarray  # [2, 4d]
    bias: np.ndarray    # [2]

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[0] != 2 or self.weight.shape[1] % 4 != 0:
            raise ConfigurationError(f"head weight must be [2, 4d], got {self.weight.shape}")
        if self.bias.shape != (2,):
            raise ConfigurationError(f"head bias must be [2], got {self.bias.shape}")

    @property
    def d_model(self) -> int:
        return self.weight.shape[1] // 4

    @classmethod
    def zeros(cls, d_model: int) -> "PredictorHead":
        return cls(np.zeros((2, 4 * d_model)), np.zeros(2))


@dataclasses.dataclass(frozen=True)
class DDAConfig:
    learning_rate: float = 1e-4
    steps: int = 12000
    batch_rows: int = 1024
    rho: float = 0.5
    seed: int = 0
    heldout_fraction: float = 0.2
    corrupt_fraction: float = 1.0
    two_swap_prob: float = 0.0
    drafts_per_doc: int = 2
    # Inverse-frequency class weights raised to this power: 1 rebalances
    # fully, 0 leaves the raw token distribution in charge.
    class_weight_power: float = 0.35

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.steps < 0 or self.batch_rows < 1:
            raise ConfigurationError("invalid predictor training parameters")
        if not 0.0 < self.rho < 1.0:
            raise ConfigurationError("rho must lie in (0, 1)")
        if not 0.0 < self.heldout_fraction < 1.0:
            raise ConfigurationError("heldout_fraction must lie in (0, 1)")
        if not 0.0 <= self.corrupt_fraction <= 1.0 or not 0.0 <= self.two_swap_prob <= 1.0:
            raise ConfigurationError("corruption probabilities must lie in [0, 1]")
        if self.drafts_per_doc < 1:
            raise ConfigurationError("drafts_per_doc must be >= 1")
        if not 0.0 <= self.class_weight_power <= 1.0:
            raise ConfigurationError("class_weight_power must lie in [0, 1]")


# ----------------------------------------------------------------------
# labeling and corruption


def label_tokens(corrupted: Sequence[str], gold: Sequence[str]) -> list[int]:
    """Tokens on a longest-common-subsequence alignment with the gold summary
    are consistent; every other token is inconsistent."""
    n, m = len(corrupted), len(gold)
    dp = np.zeros((n + 1, m + 1), dtype=np.int32)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if corrupted[i - 1] == gold[j - 1]:
                dp[i, j] = dp[i - 1, j - 1] + 1
            else:
                dp[i, j] = max(dp[i - 1, j], dp[i, j - 1])
    matched = set()
    i, j = n, m
    while i > 0 and j > 0:
        if corrupted[i - 1] == gold[j - 1] and dp[i, j] == dp[i - 1, j - 1] + 1:
            matched.add(i - 1)
            i -= 1
            j -= 1
        elif dp[i - 1, j] >= dp[i, j - 1]:
            i -= 1
        else:
            j -= 1
    return [CONSISTENT if k in matched else INCONSISTENT for k in range(n)]


def _typed_distractor_entities(example: SyntheticExample, grammar: Grammar, type_name: str) -> list[str]:
    found = set()
    for fact in example.distractor_facts:
        if grammar.is_type(fact.subject, type_name):
            found.add(fact.subject)
        if grammar.is_type(fact.object, type_name):
            found.add(fact.object)
    return sorted(found)


def _swap_slots(example: SyntheticExample, grammar: Grammar) -> list[tuple[str, int, str, list[str]]]:
    """(kind, position, original token, candidate replacements) for every
    swappable slot of the gold summary.

    Entity swaps draw from the document's distractor facts; subject and
    number swaps prefer same-type entities absent from the document, which
    contradict the source outright, and fall back to distractor entities.
    Documents without distractor facts yield no slots at all.
    """
    if not example.distractor_facts:
        return []
    facts, _ = parse_facts(example.summary, grammar)
    doc_tokens = set(example.document)
    slots = []

    def out_of_doc(type_name: str, original: str) -> list[str]:
        fresh = [
            e for e in grammar.inventory(type_name)
            if e not in doc_tokens and e != original
        ]
        if fresh:
            return fresh
        return [e for e in _typed_distractor_entities(example, grammar, type_name) if e != original]

    for triple, spos, opos in facts:
        subj_type = grammar.subject_type(triple.relation)
        obj_type = grammar.object_type(triple.relation)
        subj_cands = out_of_doc(subj_type, triple.subject)
        if subj_cands:
            slots.append(("subject_swap", spos, triple.subject, subj_cands))
        if obj_type == "number":
            obj_cands = out_of_doc(obj_type, triple.object)
            kind = "number_swap"
        else:
            obj_cands = [e for e in _typed_distractor_entities(example, grammar, obj_type) if e != triple.object]
            kind = "entity_swap"
        if obj_cands:
            slots.append((kind, opos, triple.object, obj_cands))
    return slots


def corrupt_summary(
    example: SyntheticExample,
    grammar: Grammar,
    rng: random.Random,
    two_swap_prob: float = 0.3,
) -> LabeledSummary | None:
    """Apply 1-2 swaps to the gold summary; None when nothing is swappable."""
    slots = _swap_slots(example, grammar)
    if not slots:
        return None
    n_swaps = 1 if (len(slots) == 1 or rng.random() >= two_swap_prob) else 2
    chosen = rng.sample(range(len(slots)), n_swaps)
    tokens = list(example.summary)
    for idx in sorted(chosen):
        _, pos, original, candidates = slots[idx]
        tokens[pos] = rng.choice(candidates)
        assert tokens[pos] != original
    return LabeledSummary(
        doc_id=example.example_id,
        tokens=tokens,
        labels=label_tokens(tokens, example.summary),
        origin="corrupted",
    )


def gold_labeled(example: SyntheticExample) -> LabeledSummary:
    return LabeledSummary(
        doc_id=example.example_id,
        tokens=list(example.summary),
        labels=[CONSISTENT] * len(example.summary),
        origin="gold",
    )


def build_labeled_dataset(
    examples: Sequence[SyntheticExample],
    grammar: Grammar,
    seed: int,
    corrupt_fraction: float = 1.0,
    two_swap_prob: float = 0.3,
    drafts_per_doc: int = 1,
) -> tuple[list[LabeledSummary], int]:
    """Gold plus corrupted summaries; returns (dataset, skipped count)."""
    rng = random.Random(f"corrupt:{seed}")
    out: list[LabeledSummary] = []
    skipped = 0
    for ex in examples:
        out.append(gold_labeled(ex))
        if rng.random() >= corrupt_fraction:
            continue
        seen: set[tuple[str, ...]] = set()
        produced = False
        for _ in range(drafts_per_doc):
            corrupted = corrupt_summary(ex, grammar, rng, two_swap_prob)
            if corrupted is None or tuple(corrupted.tokens) in seen:
                continue
            seen.add(tuple(corrupted.tokens))
            out.append(corrupted)
            produced = True
        if not produced:
            skipped += 1
    return out, skipped


# ----------------------------------------------------------------------
# predictor


def predictor_features(h_t: np.ndarray, h_prime_t: np.ndarray) -> np.ndarray:
    """z = [h; h'; h*h'; h-h'] in that order."""
    h = np.asarray(h_t, dtype=np.float64)
    hp = np.asarray(h_prime_t, dtype=np.float64)
    if h.shape != hp.shape or h.ndim != 1:
        raise ValueError(f"hidden state shapes differ: {h.shape} vs {hp.shape}")
    return np.concatenate([h, hp, h * hp, h - hp])


def predict_scores(z_t: np.ndarray, head: PredictorHead) -> tuple[float, float]:
    """Softmax over the two classes; index 0 is consistent, 1 inconsistent."""
    z = np.asarray(z_t, dtype=np.float64)
    if z.shape != (head.weight.shape[1],):
        raise ValueError(f"feature length {z.shape} does not match head {head.weight.shape}")
    logits = head.weight @ z + head.bias
    logits = logits - logits.max()
    exp = np.exp(logits)
    probs = exp / exp.sum()
    return float(probs[0]), float(probs[1])


def smooth(s_ic: float) -> float:
    """Quadratic ramp below 1/2, saturated at 1 above it."""
    if not 0.0 <= s_ic <= 1.0:
        raise ValueError(f"inconsistency score {s_ic} outside [0, 1]")
    if s_ic <= 0.5:
        return 1.0 - (2.0 * s_ic - 1.0) ** 2
    return 1.0


def score_step(h_t: np.ndarray, h_prime_t: np.ndarray, head: PredictorHead) -> ConsistencyScore:
    s_c, s_ic = predict_scores(predictor_features(h_t, h_prime_t), head)
    return ConsistencyScore(s_c=s_c, s_ic=s_ic, s_tilde=smooth(s_ic))


# ----------------------------------------------------------------------
# teacher pass and head training


@dataclasses.dataclass
class TeacherStep:
    hidden: np.ndarray
    hidden_masked: np.ndarray
    masked_positions: tuple[int, ...]


def dda_teacher_pass(
    base: Seq2SeqModel,
    source_ids: Sequence[int],
    target_ids: Sequence[int],
    rho: float,
) -> list[TeacherStep]:
    """Per-step (h_t, h'_t): the full-document teacher-forced hidden state and
    the hidden state under that step's attention-selected masking."""
    steps = base.forward_teacher_forced(source_ids, target_ids)
    valid = content_mask(source_ids, base.vocab)
    out = []
    for t, step in enumerate(steps):
        selected = select_important(step.cross_attention, rho, valid_mask=valid)
        md = mask_document(source_ids, selected, base.vocab)
        enc = base.encode(md.tokens)
        masked_step = base.decode_step(enc, list(target_ids[: t + 1]))
        out.append(
            TeacherStep(
                hidden=step.hidden,
                hidden_masked=masked_step.hidden,
                masked_positions=md.masked_positions,
            )
        )
    return out


def extract_features(
    base: Seq2SeqModel,
    source_ids: Sequence[int],
    labeled: LabeledSummary,
    vocab: Vocabulary,
    rho: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Feature/label rows for one summary.

    The label of summary token j is paired with the decoding step that emits
    that token, the same state decoding exposes when the gate is applied.
    """
    target_ids = vocab.encode(labeled.tokens, frame=True)
    steps = dda_teacher_pass(base, source_ids, target_ids, rho)
    rows, labels = [], []
    for j, label in enumerate(labeled.labels):
        step = steps[j]
        rows.append(predictor_features(step.hidden, step.hidden_masked))
        labels.append(label)
    return np.asarray(rows), np.asarray(labels, dtype=np.int64)


def train_predictor(
    base: Seq2SeqModel,
    examples: Sequence[tuple[Sequence[int], LabeledSummary]],
    config: DDAConfig,
) -> tuple[PredictorHead, dict]:
    """Train W, b on frozen-model features; the base model is never touched.

    Returns the head and a report with held-out token accuracy.
    """
    n_heldout = max(1, int(len(examples) * config.heldout_fraction))
    if n_heldout >= len(examples):
        raise ConfigurationError("not enough labeled examples for a held-out split")
    train_ex = examples[:-n_heldout]
    held_ex = examples[-n_heldout:]

    def stack(pairs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        feats, labs, corrupted = [], [], []
        for source_ids, labeled in pairs:
            with torch.no_grad():
                z, y = extract_features(base, source_ids, labeled, base.vocab, config.rho)
            feats.append(z)
            labs.append(y)
            corrupted.append(np.full(len(y), labeled.origin == "corrupted"))
        return np.concatenate(feats), np.concatenate(labs), np.concatenate(corrupted)

    z_train, y_train, _ = stack(train_ex)
    z_held, y_held, held_corrupted = stack(held_ex)

    counts = np.bincount(y_train, minlength=2).astype(np.float64)
    if counts.min() == 0:
        weights = np.ones(2)
    else:
        weights = (counts.sum() / (2.0 * counts)) ** config.class_weight_power

    w = torch.zeros((2, z_train.shape[1]), dtype=torch.float64, requires_grad=True)
    b = torch.zeros(2, dtype=torch.float64, requires_grad=True)
    optimizer = torch.optim.Adam([w, b], lr=config.learning_rate)
    zt = torch.from_numpy(z_train)
    yt = torch.from_numpy(y_train)
    wt = torch.from_numpy(weights)
    criterion = torch.nn.CrossEntropyLoss(weight=wt)

    n_rows = zt.shape[0]
    for step in range(config.steps):
        rng = random.Random(f"dda:{config.seed}:{step}")
        idx = torch.tensor([rng.randrange(n_rows) for _ in range(min(config.batch_rows, n_rows))])
        loss = criterion(zt[idx] @ w.T + b, yt[idx])
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite predictor loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    head = PredictorHead(w.detach().numpy(), b.detach().numpy())
    logits_held = z_held @ head.weight.T + head.bias
    pred = logits_held.argmax(axis=1)
    accuracy = float((pred == y_held).mean())
    by_class = {}
    for cls, name in ((CONSISTENT, "consistent"), (INCONSISTENT, "inconsistent")):
        mask = y_held == cls
        by_class[name] = float((pred[mask] == cls).mean()) if mask.any() else None
    corrupted_accuracy = (
        float((pred[held_corrupted] == y_held[held_corrupted]).mean())
        if held_corrupted.any()
        else None
    )
    report = {
        "heldout_accuracy": accuracy,
        "heldout_corrupted_accuracy": corrupted_accuracy,
        "heldout_rows": int(len(y_held)),
        "heldout_class_accuracy": by_class,
        "class_weights": weights.tolist(),
        "train_rows": int(n_rows),
    }
    return head, report
