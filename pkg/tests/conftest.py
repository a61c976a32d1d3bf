"""Shared fixtures. The two desk-scale training runs are built once per session."""

import pytest

from eave.config import EaveConfig, EncoderConfig, TrainConfig
from eave.data import synthesize_corpus
from eave.training import train

SYNTH = dict(seed=7, n_products=500, attrs_per_product=4, vocab_size=200, context_len_tokens=24)


def desk_config() -> EaveConfig:
    def enc(layers, hidden, heads, max_len):
        return EncoderConfig(num_layers=layers, hidden=hidden, heads=heads, head_dim=hidden // heads,
                             ffn_hidden=2 * hidden, vocab_size=256, max_len=max_len)

    return EaveConfig(heavy=enc(4, 64, 4, 32), light=enc(2, 32, 8, 36), context_len=32,
                      attribute_len=4, layer_mapping="even_offset:1", alpha=0.5, beta=1.0)


def desk_train_config(**overrides) -> TrainConfig:
    base = dict(lr_light=3e-3, beta=1.0, batch_size=16, max_steps=2000, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def clean_corpus():
    return synthesize_corpus(noise_p=0.0, **SYNTH)


@pytest.fixture(scope="session")
def noisy_corpus():
    return synthesize_corpus(noise_p=0.2, **SYNTH)


@pytest.fixture(scope="session")
def clean_run(clean_corpus):
    return train(clean_corpus, desk_config(), desk_train_config())


@pytest.fixture(scope="session")
def noisy_run(noisy_corpus):
    return train(noisy_corpus, desk_config(), desk_train_config())


@pytest.fixture(scope="session")
def negatives_run(clean_corpus):
    """Clean run that also sees one absent-key example per product."""
    return train(clean_corpus, desk_config(), desk_train_config(negatives_per_product=1))
