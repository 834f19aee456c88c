import numpy as np
import pytest
import torch

from cofact import (
    CorpusSpec,
    ModelConfig,
    TrainConfig,
    Vocabulary,
    build_model,
    generate_corpus,
    train_base,
)

torch.set_num_threads(1)


def encode_examples(examples, vocab):
    return [
        (vocab.encode(ex.document, frame=True), vocab.encode(ex.summary, frame=True))
        for ex in examples
    ]


@pytest.fixture(scope="session")
def tiny_vocab():
    return Vocabulary.from_content(["alpha", "bravo", "carol", "delta", "echo"])


@pytest.fixture(scope="session")
def tiny_model(tiny_vocab):
    cfg = ModelConfig(
        vocab_size=tiny_vocab.size,
        d_model=16,
        n_heads=2,
        n_encoder_layers=1,
        n_decoder_layers=1,
        max_source_len=16,
        max_target_len=10,
        seed=7,
    )
    return build_model(cfg, tiny_vocab)


@pytest.fixture(scope="session")
def small_corpus():
    spec = CorpusSpec(n_train=150, n_test=30, seed=11)
    train, test, vocab, grammar, card = generate_corpus(spec)
    return {"spec": spec, "train": train, "test": test, "vocab": vocab, "grammar": grammar, "card": card}


@pytest.fixture(scope="session")
def small_base_model(small_corpus):
    """A briefly trained base model; good enough for behavioral tests."""
    vocab = small_corpus["vocab"]
    cfg = ModelConfig(
        vocab_size=vocab.size,
        d_model=32,
        n_heads=2,
        n_encoder_layers=1,
        n_decoder_layers=2,
        max_source_len=64,
        max_target_len=20,
        seed=5,
    )
    model = build_model(cfg, vocab)
    dataset = encode_examples(small_corpus["train"], vocab)
    train_base(model, dataset, TrainConfig(steps=300, batch_size=8, learning_rate=2e-3, seed=5))
    return model


def assert_valid_distribution(dist: np.ndarray, tol: float = 1e-6):
    assert np.all(dist >= 0)
    assert abs(dist.sum() - 1.0) <= tol
