import struct

import pytest

from elastr.checkpoint import (
    MAGIC,
    Checkpoint,
    CheckpointFormatError,
    StageOrderError,
    decode,
    encode,
    load_checkpoint,
    save_checkpoint,
)
from elastr.model import AdaptiveModel, param_checksum
from elastr.rewiring import rewire


class TestRoundTrip:
    def test_save_load_save_is_byte_identical(self, model, tmp_path):
        first, second = tmp_path / "a.dynw", tmp_path / "b.dynw"
        save_checkpoint(Checkpoint(model, "teacher", rewired=False, seed=42), first)
        loaded = load_checkpoint(first)
        save_checkpoint(loaded, second)
        assert first.read_bytes() == second.read_bytes()
        assert param_checksum(loaded.model) == param_checksum(model)
        assert (loaded.stage, loaded.rewired, loaded.seed) == ("teacher", False, 42)
        assert loaded.model.cfg == model.cfg

    def test_round_trip_after_rewiring(self, model, examples, tmp_path):
        rewire(model, examples)
        path = tmp_path / "rewired.dynw"
        save_checkpoint(Checkpoint(model, "rewired", rewired=True, seed=1), path)
        loaded = load_checkpoint(path)
        assert loaded.rewired
        assert param_checksum(loaded.model) == param_checksum(model)

    def test_no_temp_file_left(self, model, tmp_path):
        save_checkpoint(Checkpoint(model, "teacher", rewired=False, seed=0), tmp_path / "m.dynw")
        assert [p.name for p in tmp_path.iterdir()] == ["m.dynw"]

    def test_layout_starts_with_magic_and_header(self, model):
        data = encode(Checkpoint(model, "width", rewired=True, seed=3))
        assert data[:5] == MAGIC
        (header_len,) = struct.unpack("<Q", data[5:13])
        assert data[13 : 13 + header_len].startswith(b"{")

    def test_unknown_stage_is_not_encoded(self, model):
        with pytest.raises(ValueError):
            encode(Checkpoint(model, "pretrained", rewired=False, seed=0))


class TestCorruption:
    def test_bad_magic(self, model):
        data = b"XXXXX" + encode(Checkpoint(model, "teacher", rewired=False, seed=0))[5:]
        with pytest.raises(CheckpointFormatError) as exc:
            decode(data)
        assert exc.value.offset == 0

    def test_truncation_reports_offset(self, model):
        data = encode(Checkpoint(model, "teacher", rewired=False, seed=0))
        with pytest.raises(CheckpointFormatError, match="byte offset") as exc:
            decode(data[:-3])
        assert 0 < exc.value.offset < len(data)

    def test_truncated_header(self, model):
        data = encode(Checkpoint(model, "teacher", rewired=False, seed=0))
        with pytest.raises(CheckpointFormatError):
            decode(data[:20])

    def test_header_config_must_match_arrays(self, model, tiny_cfg):
        body = encode(Checkpoint(model, "teacher", rewired=False, seed=0))
        wider_vocab = tiny_cfg.model_copy(update={"vocab_size": 16})
        other = encode(Checkpoint(AdaptiveModel(wider_vocab), "teacher", rewired=False, seed=0))
        (other_len,) = struct.unpack("<Q", other[5:13])
        (body_len,) = struct.unpack("<Q", body[5:13])
        spliced = other[: 13 + other_len] + body[13 + body_len :]
        with pytest.raises(CheckpointFormatError, match="does not match"):
            decode(spliced)

    def test_invalid_header_json(self, model):
        data = encode(Checkpoint(model, "teacher", rewired=False, seed=0))
        (header_len,) = struct.unpack("<Q", data[5:13])
        broken = data[:13] + b"!" + data[14:]
        with pytest.raises(CheckpointFormatError) as exc:
            decode(broken)
        assert exc.value.offset == 13
        assert header_len > 1

    def test_undecodable_array_name(self, model):
        data = bytearray(encode(Checkpoint(model, "teacher", rewired=False, seed=0)))
        (header_len,) = struct.unpack("<Q", data[5:13])
        entry = 13 + header_len
        data[entry + 4] = 0xFF
        with pytest.raises(CheckpointFormatError, match="invalid array name") as exc:
            decode(bytes(data))
        assert exc.value.offset == entry


class TestStageTags:
    def test_require_stage(self, model):
        checkpoint = Checkpoint(model, "rewired", rewired=True, seed=0)
        checkpoint.require_stage("train-w", "rewired")
        with pytest.raises(StageOrderError) as exc:
            checkpoint.require_stage("train-wd", "width")
        assert exc.value.expected == ("width",)
        assert exc.value.found == "rewired"
        assert "width" in str(exc.value) and "rewired" in str(exc.value)
