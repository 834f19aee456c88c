"""Counterfactually debiased summarization laboratory."""

from .attention import (
    AttentionPartition,
    MaskedDocument,
    mask_document,
    partition,
    partition_to_masks,
    select_important,
    static_partition,
)
from .checkpoint import load_checkpoint, load_head_checkpoint, save_checkpoint, save_head_checkpoint
from .corpus import CorpusSpec, FactTriple, Grammar, SyntheticExample, extract_triples, generate_corpus
from .dda import (
    ConsistencyScore,
    DDAConfig,
    LabeledSummary,
    PredictorHead,
    corrupt_summary,
    dda_teacher_pass,
    label_tokens,
    predict_scores,
    predictor_features,
    smooth,
    train_predictor,
)
from .decoding import (
    DebiasConfig,
    StepScores,
    combined_score,
    decode_beam,
    decode_greedy,
    decode_standard_beam,
    decode_standard_greedy,
    decode_trace,
    ecm_score,
    ict_score,
)
from .evaluation import EvalReport, bias_probe, fact_precision, rouge_l
from .ict import ICTConfig, LossBreakdown, ict_step_losses, kl_loss, train_ict, unlikelihood_loss, xent_loss
from .model import DecoderStepOutput, EncoderOutput, ModelConfig, Seq2SeqModel, build_model, loss_gradients
from .training import TrainConfig, train_base
from .vocab import Vocabulary

__all__ = [name for name in dir() if not name.startswith("_")]
