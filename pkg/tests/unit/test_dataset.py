import pytest

from elastr.dataset import (
    DatasetFormatError,
    Example,
    generate_task,
    iterate_batches,
    label_of,
    num_batches,
    read_dataset,
    write_dataset,
    write_task,
)
from elastr.schemas import SyntheticTask

KINDS = ["majority_token", "first_last_match", "contains_bigram"]


@pytest.mark.parametrize("kind", KINDS)
class TestGenerate:
    def test_deterministic(self, kind):
        task = SyntheticTask(kind=kind, size=200, seed=5)
        assert generate_task(task) == generate_task(task)
        assert generate_task(task) != generate_task(task.model_copy(update={"seed": 6}))

    def test_split_sizes(self, kind):
        splits = generate_task(SyntheticTask(kind=kind, size=200))
        assert [len(splits[s]) for s in ("train", "dev", "test")] == [160, 20, 20]

    def test_labels_follow_the_rule_and_balance(self, kind):
        splits = generate_task(SyntheticTask(kind=kind, size=400, seq_len=9))
        examples = [ex for rows in splits.values() for ex in rows]
        assert all(label_of(kind, ex.token_ids) == ex.label for ex in examples)
        assert all(len(ex.token_ids) == 9 for ex in examples)
        assert 0.45 <= sum(ex.label for ex in examples) / len(examples) <= 0.55


def test_majority_rule():
    assert label_of("majority_token", [0, 0, 1]) == 0
    assert label_of("majority_token", [1, 0, 1]) == 1
    assert label_of("first_last_match", [4, 1, 4]) == 1
    assert label_of("contains_bigram", [1, 2, 3]) == 1
    assert label_of("contains_bigram", [3, 2, 1]) == 0


def test_write_task_files(tmp_path):
    paths = write_task(SyntheticTask(kind="contains_bigram", size=50), tmp_path)
    assert sorted(p.name for p in paths.values()) == ["dev.tsv", "test.tsv", "train.tsv"]
    first_line = paths["train"].read_text().splitlines()[0]
    label, ids = first_line.split("\t")
    assert label in {"0", "1"} and len(ids.split(" ")) == 16


class TestReadDataset:
    def test_round_trip_with_augmented_lines(self, tmp_path):
        base = [Example(0, (1, 2, 3)), Example(1, (4,))]
        extra = [Example(1, (0, 0))]
        write_dataset(tmp_path / "train.tsv", base)
        write_dataset(tmp_path / "aug.tsv", extra)
        assert read_dataset(tmp_path / "train.tsv", 8, 2) == base
        assert read_dataset(tmp_path / "train.tsv", 8, 2, tmp_path / "aug.tsv") == base + extra

    @pytest.mark.parametrize(
        "line,message",
        [
            ("2\t1 2", "label 2"),
            ("0\t1 9", "token id"),
            ("x\t1 2", "malformed"),
            ("0 1 2", "malformed"),
            ("1\t", "empty token"),
        ],
    )
    def test_format_errors_name_the_line(self, tmp_path, line, message):
        path = tmp_path / "bad.tsv"
        path.write_text(f"0\t1 2\n{line}\n")
        with pytest.raises(DatasetFormatError, match=message) as exc:
            read_dataset(path, 8, 2)
        assert f"{path}:2" in str(exc.value)


class TestBatches:
    def test_covers_every_example_once(self, examples):
        seen = []
        for batch in iterate_batches(examples, 5, seed=1, epoch=0, shuffle=True):
            seen.extend(batch.input_ids[:, 0].tolist())
        assert sorted(seen) == sorted(ex.token_ids[0] for ex in examples)
        assert num_batches(examples, 5) == 3

    def test_shuffle_is_seeded_per_epoch(self, examples):
        def order(seed, epoch):
            return [b.labels.tolist() + b.input_ids.flatten().tolist() for b in iterate_batches(examples, 4, seed, epoch, shuffle=True)]

        assert order(1, 0) == order(1, 0)
        assert order(1, 0) != order(1, 1)

    def test_unshuffled_keeps_order(self, examples):
        batch = next(iterate_batches(examples, 3))
        assert batch.labels.tolist() == [ex.label for ex in examples[:3]]
