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

"""Synthetic classification tasks and the plain-text dataset format.

A dataset file holds one example per line: ``label<TAB>id id id ...``.
"""

# Global imports
import os
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

# Local imports
from .logging import logger
from .model import Batch, collate
from .schemas import SyntheticTask

MAJORITY_ALPHABET = (0, 1)
# the bigram contains_bigram looks for
BIGRAM = (2, 3)
SPLITS = ("train", "dev", "test")


class DatasetFormatError(ValueError):
    """Raised on malformed dataset lines; names the file and 1-based line."""


class Example(NamedTuple):
    label: int
    token_ids: tuple[int, ...]


def _majority(rng: np.random.Generator, task: SyntheticTask, label: int) -> list[int]:
    while True:
        ids = rng.choice(MAJORITY_ALPHABET, size=task.seq_len)
        counts = [int(np.sum(ids == symbol)) for symbol in MAJORITY_ALPHABET]
        if counts[0] != counts[1] and int(np.argmax(counts)) == label:
            return ids.tolist()


def _first_last(rng: np.random.Generator, task: SyntheticTask, label: int) -> list[int]:
    ids = rng.integers(0, task.vocab_size, size=task.seq_len).tolist()
    if label == 1:
        ids[-1] = ids[0]
    else:
        while ids[-1] == ids[0]:
            ids[-1] = int(rng.integers(0, task.vocab_size))
    return ids


def _has_bigram(ids: Sequence[int]) -> bool:
    return any((a, b) == BIGRAM for a, b in zip(ids, ids[1:]))


def _bigram(rng: np.random.Generator, task: SyntheticTask, label: int) -> list[int]:
    while True:
        ids = rng.integers(0, task.vocab_size, size=task.seq_len).tolist()
        if label == 1:
            at = int(rng.integers(0, task.seq_len - 1))
            ids[at : at + 2] = list(BIGRAM)
            return ids
        if not _has_bigram(ids):
            return ids


_GENERATORS = {
    "majority_token": _majority,
    "first_last_match": _first_last,
    "contains_bigram": _bigram,
}


def label_of(kind: str, token_ids: Sequence[int]) -> int:
    """Ground-truth rule of each task, independent of the generators."""
    ids = list(token_ids)
    if kind == "majority_token":
        counts = [ids.count(symbol) for symbol in MAJORITY_ALPHABET]
        return int(counts[1] > counts[0])
    if kind == "first_last_match":
        return int(ids[0] == ids[-1])
    if kind == "contains_bigram":
        return int(_has_bigram(ids))
    raise ValueError(f"unknown task kind {kind!r}")


def generate_task(task: SyntheticTask) -> dict[str, list[Example]]:
    """
    Generates a label-balanced task and splits it 80/10/10.

    The output is a pure function of ``task``: labels alternate before a
    seeded shuffle, so the whole set is balanced to within one example.
    """
    if max(BIGRAM) >= task.vocab_size:
        raise ValueError(f"vocab_size {task.vocab_size} too small for bigram {BIGRAM}")
    rng = np.random.default_rng(task.seed)
    make = _GENERATORS[task.kind]
    targets = rng.permutation(np.arange(task.size) % 2)
    examples = [
        Example(int(label), tuple(int(t) for t in make(rng, task, int(label))))
        for label in targets
    ]
    n_train = int(task.size * 0.8)
    n_dev = int(task.size * 0.1)
    splits = {
        "train": examples[:n_train],
        "dev": examples[n_train : n_train + n_dev],
        "test": examples[n_train + n_dev :],
    }
    logger.info(
        f"Generated {task.kind}: "
        + ", ".join(f"{name}={len(rows)}" for name, rows in splits.items())
    )
    return splits


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Writes through a sibling temp file and renames it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_name(f".tmp_{path.name}")
    try:
        with open(temp_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(temp_path, path)
    finally:
        if temp_path.exists():
            temp_path.unlink()


def write_dataset(path: str | os.PathLike, examples: Sequence[Example]) -> None:
    lines = [f"{ex.label}\t{' '.join(str(t) for t in ex.token_ids)}\n" for ex in examples]
    atomic_write_text(path, "".join(lines))


def _parse_lines(path: Path, vocab_size: int, num_classes: int) -> Iterator[Example]:
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                label_text, ids_text = line.split("\t")
                label = int(label_text)
                ids = tuple(int(t) for t in ids_text.split())
            except ValueError as e:
                raise DatasetFormatError(f"{path}:{lineno}: malformed line ({e})") from e
            if not 0 <= label < num_classes:
                raise DatasetFormatError(f"{path}:{lineno}: label {label} outside [0, {num_classes})")
            if not ids:
                raise DatasetFormatError(f"{path}:{lineno}: empty token sequence")
            if min(ids) < 0 or max(ids) >= vocab_size:
                raise DatasetFormatError(f"{path}:{lineno}: token id outside [0, {vocab_size})")
            yield Example(label, ids)


def read_dataset(
    path: str | os.PathLike,
    vocab_size: int,
    num_classes: int,
    augmented_path: str | os.PathLike | None = None,
) -> list[Example]:
    """Reads a dataset file, appending an externally augmented companion file if given."""
    examples = list(_parse_lines(Path(path), vocab_size, num_classes))
    if augmented_path is not None:
        augmented = list(_parse_lines(Path(augmented_path), vocab_size, num_classes))
        logger.info(f"Appending {len(augmented)} augmented examples from {augmented_path}")
        examples.extend(augmented)
    return examples


def write_task(task: SyntheticTask, out_dir: str | os.PathLike) -> dict[str, Path]:
    """Generates ``task`` and writes ``train.tsv``, ``dev.tsv`` and ``test.tsv``."""
    out_dir = Path(out_dir)
    paths = {}
    for name, rows in generate_task(task).items():
        paths[name] = out_dir / f"{name}.tsv"
        write_dataset(paths[name], rows)
    return paths


def iterate_batches(
    examples: Sequence[Example],
    batch_size: int,
    seed: int = 0,
    epoch: int = 0,
    shuffle: bool = False,
) -> Iterator[Batch]:
    """
    Yields collated mini-batches.

    With ``shuffle`` the order is a permutation drawn from ``(seed, epoch)``,
    so every run with the same seed visits the same batches.
    """
    order = np.arange(len(examples))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(examples))
    for start in range(0, len(order), batch_size):
        yield collate([examples[i] for i in order[start : start + batch_size]])


def num_batches(examples: Sequence[Example], batch_size: int) -> int:
    return -(-len(examples) // batch_size)
