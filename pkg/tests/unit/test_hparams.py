import json

import pytest

from elastr.hparams import DEFAULT_HPARAMS, load_hparams


def test_repository_defaults(hparams_path):
    hp = load_hparams(hparams_path)
    cfg = hp.model_config
    assert (cfg.num_hidden_layers, cfg.hidden_size, cfg.num_attention_heads, cfg.head_size) == (4, 64, 4, 16)
    assert cfg.width_list == (1.0, 0.75, 0.5, 0.25)
    assert cfg.depth_list == (1.0, 0.75, 0.5)
    assert (hp.lambda1_w, hp.lambda2_w, hp.lambda1_wd, hp.lambda2_wd) == (1.0, 0.1, 1.0, 1.0)


def test_file_matches_builtin_defaults(hparams_path):
    with open(hparams_path) as f:
        assert json.load(f) == DEFAULT_HPARAMS


def test_missing_file_falls_back_to_defaults(tmp_path):
    hp = load_hparams(str(tmp_path / "absent.json"))
    assert hp.seed == DEFAULT_HPARAMS["seed"]
    assert hp.model_config.hidden_size == 64


def test_local_run_overlay(tmp_path):
    (tmp_path / "hparams.json").write_text(json.dumps({"seed": 7}))
    (tmp_path / "hparams-local-run.json").write_text(json.dumps({"num_hidden_layers": 2, "depth_list": [1.0, 0.5]}))
    hp = load_hparams(str(tmp_path / "hparams.json"), use_local_run_hparams=True)
    assert hp.seed == 7
    assert hp.model_config.num_hidden_layers == 2


def test_invalid_model_config(tmp_path):
    path = tmp_path / "hparams.json"
    path.write_text(json.dumps({"num_hidden_layers": 3}))
    with pytest.raises(ValueError):
        load_hparams(str(path))


def test_invalid_json(tmp_path):
    path = tmp_path / "hparams.json"
    path.write_text("{not json")
    with pytest.raises(json.JSONDecodeError):
        load_hparams(str(path))
