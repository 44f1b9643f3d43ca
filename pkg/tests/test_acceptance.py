"""
Desk-scale behaviour checks on the default configuration.

These train several models end to end and take minutes, so they carry the
``manual_test`` marker and are deselected by default::

    pytest -m manual_test tests/test_acceptance.py
"""

import copy

import pytest

from elastr.dataset import generate_task
from elastr.distill import (
    TrainedPair,
    evaluate_all,
    finetune,
    mean_accuracy,
    select_model,
    train_stage,
    train_teacher,
)
from elastr.hparams import load_hparams
from elastr.logging import logger
from elastr.model import AdaptiveModel
from elastr.rewiring import ablation_head_importance, head_importance, rank_agreement, rewire
from elastr.schemas import FULL_SPEC, DistillPlan, SyntheticTask

pytestmark = pytest.mark.manual_test


@pytest.fixture
def hp(hparams_path):
    return load_hparams(hparams_path)


def splits(hp, kind):
    return generate_task(
        SyntheticTask(
            kind=kind,
            vocab_size=hp.vocab_size,
            seq_len=hp.sequence_length,
            size=hp.task_size,
            seed=hp.seed,
        )
    )


def plan(hp, stage, **overrides):
    fields = dict(
        stage=stage,
        width_list=hp.width_list,
        depth_list=hp.depth_list,
        epochs=hp.teacher_epochs if stage == "TEACHER" else hp.epochs,
        batch_size=hp.batch_size,
        base_lr=hp.learning_rate,
        seed=hp.seed,
    )
    fields.update(overrides)
    return DistillPlan(**fields)


def trained_teacher(hp, data):
    model = AdaptiveModel(hp.model_config, seed=hp.seed)
    return train_teacher(model, plan(hp, "TEACHER"), data["train"], data["dev"])


def distil(hp, teacher, data, with_width_stage=True):
    student = teacher
    if with_width_stage:
        student = train_stage(TrainedPair.from_teacher(student), plan(hp, "W"), data["train"])
    wd_plan = plan(hp, "WD", direct=not with_width_stage)
    student = train_stage(TrainedPair.from_teacher(student), wd_plan, data["train"])
    before = (student, evaluate_all(student, data["dev"]))
    tuned = finetune(copy.deepcopy(student), plan(hp, "FINETUNE"), data["train"])
    return select_model(before, (tuned, evaluate_all(tuned, data["dev"])))


def vanilla(hp, teacher, data):
    # distillation froze the teacher in place
    model = copy.deepcopy(teacher).requires_grad_(True)
    return finetune(model, plan(hp, "FINETUNE"), data["train"])


@pytest.mark.parametrize("kind", ["majority_token", "contains_bigram"])
def test_accuracy_retention(hp, kind):
    data = splits(hp, kind)
    teacher = trained_teacher(hp, data)
    rewire(teacher, data["dev"])
    teacher_acc = evaluate_all(teacher, data["dev"], [1.0], [1.0])[FULL_SPEC]

    final = distil(hp, teacher, data)
    table = evaluate_all(final, data["dev"])
    baseline = mean_accuracy(evaluate_all(vanilla(hp, teacher, data), data["dev"]))
    logger.info(
        f"{kind}: teacher {teacher_acc:.4f}, full {table[FULL_SPEC]:.4f}, "
        f"mean {mean_accuracy(table):.4f}, vanilla mean {baseline:.4f}"
    )
    assert table[FULL_SPEC] >= teacher_acc - 0.02
    assert mean_accuracy(table) >= teacher_acc - 0.08
    assert mean_accuracy(table) > baseline


def test_taylor_scores_track_head_ablation(hp):
    data = splits(hp, "contains_bigram")
    teacher = trained_teacher(hp, data)
    train_acc = evaluate_all(teacher, data["train"], [1.0], [1.0])[FULL_SPEC]
    assert train_acc >= 0.98
    taylor = head_importance(teacher, data["dev"])
    ablation = ablation_head_importance(teacher, data["dev"])
    rho = rank_agreement(taylor, ablation)
    logger.info(f"Rank agreement between Taylor and ablation head scores: {rho:.3f}")
    assert rho >= 0.7


def test_width_stage_helps_as_intermediate_teacher(hp):
    wins = 0
    for kind in ("majority_token", "first_last_match", "contains_bigram"):
        data = splits(hp, kind)
        teacher = trained_teacher(hp, data)
        rewire(teacher, data["dev"])
        assisted = mean_accuracy(evaluate_all(distil(hp, teacher, data), data["dev"]))
        direct = mean_accuracy(
            evaluate_all(distil(hp, teacher, data, with_width_stage=False), data["dev"])
        )
        logger.info(f"{kind}: with width stage {assisted:.4f}, direct {direct:.4f}")
        wins += assisted >= direct
    assert wins >= 2
