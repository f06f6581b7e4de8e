import numpy as np
import pytest

from udse.codec import train_codec
from udse.model import ModelConfig, UdseModel
from udse.synth import make_clean_utterance


@pytest.fixture(scope="session")
def clean_waves():
    return [make_clean_utterance(i, 0.4, 16000) for i in range(12)]


@pytest.fixture(scope="session")
def tiny_codec(clean_waves):
    # small everything: 4 stages of 16 codewords over 32-dim frames
    return train_codec(clean_waves, num_stages=4, codebook_size=16,
                       frame_length=64, seed=7)


@pytest.fixture(scope="session")
def tiny_model(tiny_codec):
    cfg = ModelConfig(channels=16, heads=2, global_blocks=1, predictor_blocks=1,
                      init_seed=3)
    return UdseModel(cfg, tiny_codec)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
