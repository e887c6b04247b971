import numpy as np
import pytest

from avinseg.config import RunConfig
from avinseg.synthdata import Corpus, generate


def micro_run_config(seed: int = 0) -> RunConfig:
    """Small everything: fast forward passes, still exercises every path."""
    cfg = RunConfig()
    cfg.model.d_model = 8
    cfg.model.d_ff = 16
    cfg.model.n_f = 4
    cfg.model.n_v = 4
    cfg.model.k_classes = 3
    cfg.model.k_max = 2
    cfg.model.h = 8
    cfg.model.w = 8
    cfg.model.channels = 2
    cfg.model.acqg_layers = 2
    cfg.model.decoder_layers = 2
    cfg.model.window = 3
    cfg.data.n_train = 3
    cfg.data.n_val = 2
    cfg.data.t = 4
    cfg.data.h = 8
    cfg.data.w = 8
    cfg.data.channels = 2
    cfg.data.k_classes = 3
    cfg.data.sprites_min = 2
    cfg.data.sprites_max = 3
    cfg.data.size_min = 1
    cfg.data.size_max = 2
    cfg.data.audio_dim = 4
    cfg.data.d_model = 8
    cfg.data.seed = seed
    cfg.train.seed = seed
    return cfg


@pytest.fixture(scope="session")
def micro_corpus() -> Corpus:
    cfg = micro_run_config()
    return generate(cfg.data, seed=0, require_coverage=False)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
