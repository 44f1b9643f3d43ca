import numpy as np
import pytest

from elastr.attention import dump_attention
from elastr.model import AdaptiveModel
from elastr.schemas import FULL_SPEC, ModelConfig, SubNetSpec


def test_one_file_per_layer_and_head(model, tmp_path):
    paths = dump_attention(model, FULL_SPEC, [1, 2, 3, 4], tmp_path)
    assert sorted(p.name for p in paths) == [
        "layer01_head01.csv",
        "layer01_head02.csv",
        "layer02_head01.csv",
        "layer02_head02.csv",
    ]
    for path in paths:
        matrix = np.loadtxt(path, delimiter=",")
        assert matrix.shape == (4, 4)
        assert np.all(matrix >= 0)
        assert np.allclose(matrix.sum(axis=1), 1.0, atol=1e-10)


def test_quarter_width_keeps_three_of_twelve_heads(tmp_path):
    cfg = ModelConfig(
        num_hidden_layers=2,
        hidden_size=12,
        num_attention_heads=12,
        intermediate_size=8,
        vocab_size=4,
        max_position_embeddings=4,
        width_list=(1.0, 0.25),
        depth_list=(1.0, 0.5),
    )
    spec = SubNetSpec(width_mult=0.25, depth_mult=0.5)
    paths = dump_attention(AdaptiveModel(cfg), spec, [0, 1, 2], tmp_path)
    assert [p.name for p in paths] == ["layer01_head01.csv", "layer01_head02.csv", "layer01_head03.csv"]


def test_output_is_reproducible(model, tmp_path):
    first = dump_attention(model, FULL_SPEC, [5, 1], tmp_path / "a")
    second = dump_attention(model, FULL_SPEC, [5, 1], tmp_path / "b")
    assert [p.read_bytes() for p in first] == [p.read_bytes() for p in second]


def test_empty_sentence(model, tmp_path):
    with pytest.raises(ValueError):
        dump_attention(model, FULL_SPEC, [], tmp_path)
