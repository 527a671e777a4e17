import numpy as np
import pytest

from xpcb.encoder import EncoderConfig, TransformerEncoder
from xpcb.heads import Classifier, HeadConfig
from xpcb.pipeline import PipelineConfig
from xpcb.synthetic import generate_benchmark
from xpcb.training import TrainConfig


@pytest.fixture
def tiny_cfg():
    return EncoderConfig(vocab_size=12, d_model=8, n_layers=2, n_heads=2, d_ff=16, max_positions=8, dropout_rate=0.0)


@pytest.fixture
def tiny_encoder(tiny_cfg):
    enc = TransformerEncoder(tiny_cfg, seed=1).astype(np.float64)
    rng = np.random.default_rng(0)
    for k in enc.params:
        enc.params[k] += rng.normal(0, 0.1, enc.params[k].shape)
    return enc


@pytest.fixture
def tiny_batch():
    ids = np.array([[2, 5, 7, 3, 0], [2, 4, 9, 0, 0]])
    return ids, (ids != 0).astype(np.int8)


@pytest.fixture
def tiny_classifier():
    return Classifier(8, HeadConfig(hidden=6), seed=3).astype(np.float64)


@pytest.fixture(scope="session")
def small_benchmark():
    return generate_benchmark(("tw", "wp"), 240, seed=0)


@pytest.fixture
def small_pipeline():
    return PipelineConfig(
        d_model=16, n_layers=2, n_heads=2, d_ff=32, max_len=24, probe_budget=10,
        train=TrainConfig(learning_rate=5e-4, epochs=1, adapt_epochs=1, adapt_learning_rate=1e-4,
                          disc_learning_rate=1e-4, seed=0),
    )
