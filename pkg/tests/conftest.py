import os
import sys

# -------------------------------------------------
# Ensure project root is on PYTHONPATH
# -------------------------------------------------
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

import pytest
import torch

from synthesis.backbone import ModelConfig, SingerModel
from synthesis.corpus import CorpusConfig, generate_corpus
from synthesis.melody import MelodyConfig


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for key in list(os.environ):
        if key.startswith("MELODYFLOW_"):
            monkeypatch.delenv(key, raising=False)


@pytest.fixture
def corpus_config():
    return CorpusConfig(vocab_size=12, feature_dim=8, frames=32, max_sentences=2, max_tokens=3)


@pytest.fixture
def clips(corpus_config):
    return generate_corpus(6, corpus_config, seed=3)


@pytest.fixture
def model_config(corpus_config):
    return ModelConfig(
        layers=2,
        hidden=16,
        heads=2,
        feature_dim=corpus_config.feature_dim,
        vocab_size=corpus_config.vocab_size,
        melody=MelodyConfig(student_dim=8, hidden=16, hidden_layers=1),
    )


@pytest.fixture
def model(model_config):
    torch.manual_seed(0)
    return SingerModel(model_config)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: longer training runs")
