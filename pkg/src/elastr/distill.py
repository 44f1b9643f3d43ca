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

"""
Two-stage distillation of width- and depth-adaptive sub-networks.

Stage W distils every width of a student from a fixed full-size teacher.
Stage WD then uses the trained width-adaptive model as a fixed teacher
assistant for every (width, depth) pair. Per batch, gradients of all
sub-networks accumulate into one buffer and a single clipped Adam step is
taken.
"""

# Global imports
import copy
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
import torch

# Local imports
from . import numerics as nx
from .dataset import Example, iterate_batches, num_batches
from .logging import P, T, logger
from .metrics import MetricsLogger
from .model import AdaptiveModel, Batch, ForwardTrace, forward, iter_specs, layer_keep_sets
from .schemas import FULL_SPEC, ConfigurationError, DistillPlan, ModelConfig, SubNetSpec

AccuracyTable = dict[SubNetSpec, float]


class TrainingDivergedError(RuntimeError):
    """Raised when a loss turns NaN or infinite; the message names step, spec and components."""


class MissingMetricError(KeyError):
    """Raised when an accuracy table lacks a configuration of the grid."""


@dataclass
class TrainedPair:
    """A frozen teacher and the trainable student distilled from it."""

    teacher: AdaptiveModel
    student: AdaptiveModel

    @classmethod
    def from_teacher(cls, teacher: AdaptiveModel) -> "TrainedPair":
        student = copy.deepcopy(teacher)
        student.requires_grad_(True)
        teacher.requires_grad_(False)
        teacher.eval()
        return cls(teacher=teacher, student=student)


@dataclass
class LossTerms:
    total: torch.Tensor
    pred: torch.Tensor
    emb: torch.Tensor
    hidn: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            "loss": float(self.total),
            "pred": float(self.pred),
            "emb": float(self.emb),
            "hidn": float(self.hidn),
        }


def distill_loss(
    student: ForwardTrace,
    teacher: ForwardTrace,
    lambda1: float,
    lambda2: float,
    layer_pairs: Sequence[tuple[int, int]],
) -> LossTerms:
    """
    ``lambda1 * SCE(logits) + lambda2 * (MSE(embeddings) + sum MSE(hidden))``.

    ``layer_pairs`` holds (student position, teacher position) indices into
    the two traces' hidden-state lists.
    """
    pred = nx.soft_cross_entropy(student.logits, teacher.logits)
    emb = nx.mse(student.embedding_out, teacher.embedding_out)
    hidn = torch.zeros((), dtype=nx.DTYPE)
    for s, t in layer_pairs:
        hidn = hidn + nx.mse(student.hidden[s], teacher.hidden[t])
    total = lambda1 * pred + lambda2 * (emb + hidn)
    return LossTerms(total=total, pred=pred, emb=emb, hidn=hidn)


def loss_stage1(
    student: ForwardTrace, teacher: ForwardTrace, lambda1: float, lambda2: float
) -> LossTerms:
    """Width-stage loss; student and teacher run the same layers, matched one to one."""
    if len(student.hidden) != len(teacher.hidden):
        raise nx.DimensionError(
            f"student ran {len(student.hidden)} layers, teacher {len(teacher.hidden)}"
        )
    pairs = [(i, i) for i in range(len(student.hidden))]
    return distill_loss(student, teacher, lambda1, lambda2, pairs)


def loss_stage2(
    student: ForwardTrace,
    teacher: ForwardTrace,
    lambda1: float,
    lambda2: float,
    num_layers: int,
    depth_mult: float,
) -> LossTerms:
    """Width-and-depth loss; kept student layers match teacher layers by the Every-Other rule."""
    _, match = layer_keep_sets(num_layers, depth_mult)
    if len(student.hidden) != len(match):
        raise nx.DimensionError(
            f"student ran {len(student.hidden)} layers but depth {depth_mult} "
            f"matches {len(match)} teacher layers"
        )
    if len(teacher.hidden) != num_layers:
        raise nx.DimensionError(
            f"stage-2 teacher must run all {num_layers} layers, ran {len(teacher.hidden)}"
        )
    pairs = [(i, t - 1) for i, t in enumerate(match)]
    return distill_loss(student, teacher, lambda1, lambda2, pairs)


def label_loss(trace: ForwardTrace, labels: torch.Tensor) -> LossTerms:
    ce = nx.cross_entropy(trace.logits, labels)
    zero = torch.zeros((), dtype=nx.DTYPE)
    return LossTerms(total=ce, pred=ce.detach(), emb=zero, hidn=zero)


class _TeacherCache:
    """Teacher traces for the current batch, one per requested spec, no graph."""

    def __init__(self, teacher: AdaptiveModel, batch: Batch):
        self.teacher = teacher
        self.batch = batch
        self.traces: dict[SubNetSpec, ForwardTrace] = {}

    def get(self, spec: SubNetSpec) -> ForwardTrace:
        if spec not in self.traces:
            with torch.no_grad():
                self.traces[spec] = forward(self.teacher, spec, self.batch, train_mode=False)
        return self.traces[spec]


BatchLosses = Callable[[Batch, int], Iterator[tuple[SubNetSpec, LossTerms]]]


def _draw_widths(plan: DistillPlan, rng: np.random.Generator) -> list[float]:
    """Sandwich draw: largest width, ``us_random_widths`` uniform draws, smallest width."""
    high, low = max(plan.width_list), min(plan.width_list)
    drawn = [float(high - (high - low) * rng.random()) for _ in range(plan.us_random_widths)]
    widths = [high, *drawn]
    if low != high:
        widths.append(low)
    return widths


def _distill_losses(pair: TrainedPair, plan: DistillPlan) -> BatchLosses:
    cfg = pair.student.cfg
    rng = np.random.default_rng(plan.seed)

    def teacher_spec(width: float) -> SubNetSpec:
        # Stage W and direct stage WD distil from the full teacher; stage WD
        # otherwise from the teacher assistant at the student's width and full depth.
        if plan.stage == "W" or plan.direct:
            return FULL_SPEC
        return SubNetSpec(width_mult=width, depth_mult=1.0)

    def external_loss(student: ForwardTrace, teacher: ForwardTrace, spec: SubNetSpec) -> LossTerms:
        if plan.stage == "W":
            return loss_stage1(student, teacher, plan.lambda1, plan.lambda2)
        return loss_stage2(
            student, teacher, plan.lambda1, plan.lambda2, cfg.num_hidden_layers, spec.depth_mult
        )

    def losses(batch: Batch, step: int) -> Iterator[tuple[SubNetSpec, LossTerms]]:
        cache = _TeacherCache(pair.teacher, batch)
        for depth in plan.depth_list:
            if plan.mode == "conventional":
                for width in plan.width_list:
                    spec = SubNetSpec(width_mult=width, depth_mult=depth)
                    student = forward(pair.student, spec, batch, train_mode=True)
                    yield spec, external_loss(student, cache.get(teacher_spec(width)), spec)
                continue

            if plan.mode == "inplace":
                widths = sorted(plan.width_list, reverse=True)
            else:
                widths = _draw_widths(plan, rng)
            largest = None
            for width in widths:
                spec = SubNetSpec(width_mult=width, depth_mult=depth)
                student = forward(pair.student, spec, batch, train_mode=True)
                if largest is None:
                    terms = external_loss(student, cache.get(teacher_spec(width)), spec)
                    # targets for the narrower widths come from a dropout-free pass
                    with torch.no_grad():
                        largest = forward(pair.student, spec, batch, train_mode=False)
                else:
                    terms = loss_stage1(student, largest, plan.lambda1, plan.lambda2)
                yield spec, terms

    return losses


def _label_losses(model: AdaptiveModel, specs: Sequence[SubNetSpec]) -> BatchLosses:
    def losses(batch: Batch, step: int) -> Iterator[tuple[SubNetSpec, LossTerms]]:
        for spec in specs:
            trace = forward(model, spec, batch, train_mode=True)
            yield spec, label_loss(trace, batch.labels)

    return losses


def check_plan(plan: DistillPlan, cfg: ModelConfig) -> None:
    """Refuses multipliers outside the model's configured grid."""
    for name, values, allowed in (
        ("width", plan.width_list, cfg.width_list),
        ("depth", plan.depth_list, cfg.depth_list),
    ):
        outside = [v for v in values if v not in allowed]
        if outside:
            logger.error(f"Stage {plan.stage} plan has {name} multipliers {outside} outside the grid")
            raise ConfigurationError(
                f"{name} multipliers {outside} are not in the model's {name}_list {list(allowed)}"
            )


def _fit(
    model: AdaptiveModel,
    plan: DistillPlan,
    train_data: Sequence[Example],
    batch_losses: BatchLosses,
    dev_data: Sequence[Example] | None,
    metrics: MetricsLogger | None,
) -> AdaptiveModel:
    """Runs ``plan.epochs`` epochs with one optimizer step per batch."""
    if not train_data:
        raise ValueError(f"stage {plan.stage}: training data is empty")
    check_plan(plan, model.cfg)
    torch.manual_seed(plan.seed)
    optimizer = nx.LinearDecayAdam(model.parameters(), plan.base_lr)
    total_steps = plan.epochs * num_batches(train_data, plan.batch_size)
    model.train()

    for epoch in range(plan.epochs):
        epoch_start = T()
        for batch in iterate_batches(
            train_data, plan.batch_size, seed=plan.seed, epoch=epoch, shuffle=True
        ):
            step = optimizer.step_count
            step_start = T()
            optimizer.zero_grad()
            totals = []
            for spec, terms in batch_losses(batch, step):
                if not torch.isfinite(terms.total):
                    values = terms.as_floats()
                    logger.error(f"Loss diverged at step {step}, sub-network {spec}: {values}")
                    raise TrainingDivergedError(
                        f"non-finite loss at step {step} for sub-network {spec}: {values}"
                    )
                nx.backward(terms.total)
                values = terms.as_floats()
                totals.append(values["loss"])
                if metrics is not None:
                    metrics.log(
                        epoch=epoch,
                        step=step,
                        m_w=spec.width_mult,
                        m_d=spec.depth_mult,
                        **values,
                    )
            grad_norm = nx.clip_global_norm(optimizer.params, plan.max_grad_norm)
            lr = nx.adam_step(optimizer, step / total_steps)
            logger.info(
                f"{P(step, T() - step_start)} loss {sum(totals) / len(totals):.4f} "
                f"over {len(totals)} sub-networks, grad norm {grad_norm:.3f}, lr {lr:.2e}"
            )

        if dev_data:
            table = evaluate_all(model, dev_data, plan.width_list, plan.depth_list)
            model.train()
            logger.info(
                f"Epoch {epoch + 1}/{plan.epochs} done in {T() - epoch_start:.2f}s, "
                f"mean dev accuracy {mean_accuracy(table):.4f}"
            )
            if metrics is not None:
                for spec, accuracy in table.items():
                    metrics.log(
                        epoch=epoch,
                        step=optimizer.step_count,
                        m_w=spec.width_mult,
                        m_d=spec.depth_mult,
                        dev_accuracy=accuracy,
                    )
    model.eval()
    return model


def train_teacher(
    model: AdaptiveModel,
    plan: DistillPlan,
    train_data: Sequence[Example],
    dev_data: Sequence[Example] | None = None,
    metrics: MetricsLogger | None = None,
) -> AdaptiveModel:
    """Fits the full model with cross-entropy against the labels."""
    logger.info(f"Training teacher for {plan.epochs} epochs on {len(train_data)} examples")
    return _fit(model, plan, train_data, _label_losses(model, [FULL_SPEC]), dev_data, metrics)


def train_stage(
    pair: TrainedPair,
    plan: DistillPlan,
    train_data: Sequence[Example],
    dev_data: Sequence[Example] | None = None,
    metrics: MetricsLogger | None = None,
) -> AdaptiveModel:
    """
    Distils ``pair.student`` from the fixed ``pair.teacher``.

    For each batch the student's gradients are cleared once, every
    sub-network of the plan adds its gradient, and a single clipped Adam
    step with linearly decaying rate follows. Returns the trained student.
    """
    if plan.stage not in ("W", "WD"):
        raise ValueError(f"train_stage runs stages W and WD, not {plan.stage}")
    logger.info(
        f"Stage {plan.stage} ({plan.mode}): widths {list(plan.width_list)}, depths "
        f"{list(plan.depth_list)}, lambdas ({plan.lambda1}, {plan.lambda2})"
    )
    pair.teacher.eval()
    return _fit(pair.student, plan, train_data, _distill_losses(pair, plan), dev_data, metrics)


def finetune(
    model: AdaptiveModel,
    plan: DistillPlan,
    train_data: Sequence[Example],
    dev_data: Sequence[Example] | None = None,
    metrics: MetricsLogger | None = None,
) -> AdaptiveModel:
    """Label-only training over the same width and depth loop, in place."""
    logger.info(f"Fine-tuning {len(plan.specs())} sub-networks for {plan.epochs} epochs")
    return _fit(model, plan, train_data, _label_losses(model, plan.specs()), dev_data, metrics)


@torch.no_grad()
def evaluate_all(
    model: AdaptiveModel,
    data: Sequence[Example],
    width_list: Sequence[float] | None = None,
    depth_list: Sequence[float] | None = None,
    batch_size: int = 256,
) -> AccuracyTable:
    """Accuracy of every (width, depth) sub-network, evaluation mode."""
    if not data:
        raise ValueError("cannot evaluate on an empty dataset")
    cfg = model.cfg
    specs = iter_specs(width_list or cfg.width_list, depth_list or cfg.depth_list)
    model.eval()
    batches = list(iterate_batches(data, batch_size))
    table: AccuracyTable = {}
    for spec in specs:
        correct = 0
        for batch in batches:
            logits = forward(model, spec, batch, train_mode=False).logits
            correct += int((logits.argmax(dim=-1) == batch.labels).sum())
        table[spec] = correct / len(data)
    return table


def mean_accuracy(table: AccuracyTable, grid: Sequence[SubNetSpec] | None = None) -> float:
    grid = list(table) if grid is None else list(grid)
    missing = [str(spec) for spec in grid if spec not in table]
    if missing:
        raise MissingMetricError(f"no accuracy for sub-networks {', '.join(missing)}")
    return sum(table[spec] for spec in grid) / len(grid)


def select_model(
    before: tuple[AdaptiveModel, AccuracyTable],
    after: tuple[AdaptiveModel, AccuracyTable],
) -> AdaptiveModel:
    """Keeps the model with the higher mean dev accuracy; a tie keeps ``after``."""
    model_before, table_before = before
    model_after, table_after = after
    cfg = model_after.cfg
    grid = iter_specs(cfg.width_list, cfg.depth_list)
    mean_before = mean_accuracy(table_before, grid)
    mean_after = mean_accuracy(table_after, grid)
    chosen = "fine-tuned" if mean_after >= mean_before else "pre-fine-tuning"
    logger.info(
        f"Mean dev accuracy before {mean_before:.4f}, after {mean_after:.4f}: keeping {chosen} model"
    )
    return model_after if mean_after >= mean_before else model_before
