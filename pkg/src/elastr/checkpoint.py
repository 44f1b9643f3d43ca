# The MIT License (MIT)
# © 2025 elastr contributors

# Permission is hereby granted, free of charge, to any person obtaining a copy of this software and associated
# documentation files (the "Software"), to deal in the Software without restriction, including without limitation
# the rights to use, copy, modify, merge, publish, distribute, sublicense, and/or sell copies of the Software,
# and to permit persons to whom the Software is furnished to do so, subject to the following conditions:

# The above copyright notice and this permission notice shall be included in all copies or substantial portions of
# the Software.

# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO
# THE WARRANTIES OF MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL
# THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION
# OF CONTRACT, TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER
# DEALINGS IN THE SOFTWARE.

"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DYNW1"
    u64 header length, UTF-8 JSON header (config, stage, rewired, seed)
    repeated until EOF:
        u32 name length, name bytes (UTF-8)
        u8  dtype code (0 = float64)
        u32 rank, rank x i64 dims
        float64 payload, row-major
"""

# Global imports
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

# Local imports
from .logging import logger
from .model import AdaptiveModel
from .schemas import ModelConfig

MAGIC = b"DYNW1"
DTYPE_CODES = {0: np.dtype("<f8")}

# Pipeline order; each stage is produced from the one before it.
STAGES = ("teacher", "rewired", "width", "width_depth", "finetuned")


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint is corrupt or truncated; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class StageOrderError(RuntimeError):
    """Raised when a pipeline step receives a checkpoint from the wrong stage."""

    def __init__(self, command: str, expected: tuple[str, ...], found: str):
        super().__init__(
            f"{command} expects a checkpoint at stage {' or '.join(expected)}, found {found}"
        )
        self.expected = expected
        self.found = found


@dataclass
class Checkpoint:
    model: AdaptiveModel
    stage: str
    rewired: bool
    seed: int

    def require_stage(self, command: str, *expected: str) -> None:
        if self.stage not in expected:
            logger.error(f"{command}: refusing checkpoint at stage {self.stage}")
            raise StageOrderError(command, expected, self.stage)


def encode(checkpoint: Checkpoint) -> bytes:
    if checkpoint.stage not in STAGES:
        raise ValueError(f"unknown stage tag {checkpoint.stage!r}")
    header = json.dumps(
        {
            "config": checkpoint.model.cfg.model_dump(mode="json"),
            "stage": checkpoint.stage,
            "rewired": checkpoint.rewired,
            "seed": checkpoint.seed,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    chunks = [MAGIC, struct.pack("<Q", len(header)), header]
    for name, tensor in checkpoint.model.state_dict().items():
        array = tensor.detach().cpu().numpy().astype("<f8", copy=False)
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BI", 0, array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}q", *array.shape))
        chunks.append(np.ascontiguousarray(array).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointFormatError(f"truncated {what}", self.offset)
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointFormatError("bad magic", 0)
    (header_len,) = reader.unpack("<Q", "header length")
    header_offset = reader.offset
    try:
        header = json.loads(reader.take(header_len, "header").decode("utf-8"))
        cfg = ModelConfig(**header["config"])
        stage, rewired, seed = header["stage"], bool(header["rewired"]), int(header["seed"])
    except (ValueError, KeyError, TypeError) as e:
        if isinstance(e, CheckpointFormatError):
            raise
        raise CheckpointFormatError(f"invalid header ({e})", header_offset) from e
    if stage not in STAGES:
        raise CheckpointFormatError(f"unknown stage tag {stage!r}", header_offset)

    model = AdaptiveModel(cfg)
    expected = {name: tuple(t.shape) for name, t in model.state_dict().items()}
    arrays: dict[str, torch.Tensor] = {}
    while reader.offset < len(data):
        entry_offset = reader.offset
        (name_len,) = reader.unpack("<I", "name length")
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError("invalid array name", entry_offset) from e
        dtype_code, rank = reader.unpack("<BI", "array header")
        if dtype_code not in DTYPE_CODES:
            raise CheckpointFormatError(f"unknown dtype code {dtype_code} for {name}", entry_offset)
        dims = reader.unpack(f"<{rank}q", "dims")
        if name not in expected or dims != expected[name]:
            raise CheckpointFormatError(
                f"array {name} with shape {dims} does not match the header config",
                entry_offset,
            )
        dtype = DTYPE_CODES[dtype_code]
        payload = reader.take(int(np.prod(dims, dtype=np.int64)) * dtype.itemsize, f"payload of {name}")
        arrays[name] = torch.from_numpy(np.frombuffer(payload, dtype=dtype).reshape(dims).copy())
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise CheckpointFormatError(f"missing arrays {missing}", reader.offset)
    model.load_state_dict(arrays, strict=True)
    return Checkpoint(model=model, stage=stage, rewired=rewired, seed=seed)


def save_checkpoint(checkpoint: Checkpoint, path: str | os.PathLike) -> None:
    """Writes atomically: a sibling temp file is renamed over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_name(f".tmp_{path.name}")
    try:
        with open(temp_path, "wb") as f:
            f.write(encode(checkpoint))
        os.replace(temp_path, path)
    finally:
        if temp_path.exists():
            temp_path.unlink()
    logger.info(f"Saved {checkpoint.stage} checkpoint to {path}")


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as f:
        checkpoint = decode(f.read())
    logger.info(f"Loaded {checkpoint.stage} checkpoint from {path}")
    return checkpoint
