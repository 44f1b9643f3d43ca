# ruff: noqa

import os

import numpy as np
import pytest
import torch

import elastr
from elastr.dataset import Example
from elastr.model import AdaptiveModel, collate
from elastr.schemas import ModelConfig

# Get the project root directory (one level up from tests/)
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture(autouse=True)
def enable_elastr_logger_propagation():
    elastr.logger.setLevel("INFO")
    elastr.logger.propagate = True


@pytest.fixture
def hparams_path():
    return os.path.join(project_root, "hparams.json")


@pytest.fixture
def tiny_cfg():
    # 2 layers, 2 heads of size 4, 8 FFN neurons
    return ModelConfig(
        num_hidden_layers=2,
        hidden_size=8,
        num_attention_heads=2,
        intermediate_size=8,
        vocab_size=8,
        max_position_embeddings=6,
        num_classes=2,
        width_list=(1.0, 0.5),
        depth_list=(1.0, 0.5),
    )


@pytest.fixture
def grid_cfg():
    # 4 layers so that depth 0.75 and 0.5 are both valid
    return ModelConfig(
        num_hidden_layers=4,
        hidden_size=8,
        num_attention_heads=4,
        intermediate_size=8,
        vocab_size=8,
        max_position_embeddings=6,
        num_classes=2,
        width_list=(1.0, 0.75, 0.5, 0.25),
        depth_list=(1.0, 0.75, 0.5),
    )


def perturb(model: AdaptiveModel, seed: int = 1, scale: float = 0.3) -> AdaptiveModel:
    """Adds noise to every parameter so biases and norm gains are non-trivial."""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn(p.shape, generator=generator, dtype=p.dtype) * scale)
    return model


@pytest.fixture
def model(tiny_cfg):
    return perturb(AdaptiveModel(tiny_cfg, seed=0))


def random_examples(cfg: ModelConfig, count: int, seed: int = 0, ragged: bool = True):
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(count):
        n = int(rng.integers(2, cfg.max_position_embeddings + 1)) if ragged else cfg.max_position_embeddings
        ids = tuple(int(t) for t in rng.integers(0, cfg.vocab_size, size=n))
        examples.append(Example(i % cfg.num_classes, ids))
    return examples


@pytest.fixture
def examples(tiny_cfg):
    return random_examples(tiny_cfg, 12)


@pytest.fixture
def batch(examples):
    return collate(examples)


@pytest.fixture
def make_examples():
    return random_examples


@pytest.fixture
def perturb_model():
    return perturb
