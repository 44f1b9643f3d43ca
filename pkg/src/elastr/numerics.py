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

"""Double-precision tensor primitives, losses and the optimizer.

Tensors are ``torch.Tensor`` in float64; the autograd graph torch records
during a forward pass plays the role of the gradient tape. A graph is
consumed by one ``backward`` call and re-use raises.
"""

# Global imports
from typing import Iterable, Sequence

import torch
import torch.nn.functional as F

# Local imports
from .logging import logger

DTYPE = torch.float64
LAYER_NORM_EPS = 1e-12


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class GradientError(RuntimeError):
    """Raised when a backward pass or optimizer step cannot proceed."""


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Batched matrix product over the last two dimensions."""
    if a.dim() < 1 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {tuple(a.shape)} @ {tuple(b.shape)}"
        )
    return torch.matmul(a, b)


def softmax_rows(a: torch.Tensor) -> torch.Tensor:
    """
    Exp-normalises every last-dimension slice.

    torch subtracts the row maximum before exponentiating, so large logits
    never overflow. NaN inputs propagate to NaN rows.
    """
    if a.shape[-1] < 1:
        raise DimensionError("softmax over an empty dimension")
    return torch.softmax(a, dim=-1)


def gelu(a: torch.Tensor) -> torch.Tensor:
    """Exact GeLU, x * Phi(x) with Phi computed through erf."""
    return F.gelu(a, approximate="none")


def layer_norm(a: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Standardises each row (epsilon inside the square root), then scales and shifts."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/bias {tuple(gain.shape)}/{tuple(bias.shape)} "
            f"do not match feature size {d}"
        )
    return F.layer_norm(a, (d,), gain, bias, eps=LAYER_NORM_EPS)


def inverted_dropout(a: torch.Tensor, rate: float, train_mode: bool) -> torch.Tensor:
    """Drops activations with probability ``rate`` and rescales the survivors."""
    if not train_mode or rate == 0.0:
        return a
    return F.dropout(a, p=rate, training=True)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean over all elements of the squared difference."""
    _check_same_shape(a, b, "mse")
    return torch.mean((a - b) ** 2)


def soft_cross_entropy(
    student_logits: torch.Tensor, teacher_logits: torch.Tensor
) -> torch.Tensor:
    """Batch mean of -sum_c softmax(teacher)_c * log softmax(student)_c at temperature 1."""
    _check_same_shape(student_logits, teacher_logits, "soft_cross_entropy")
    if student_logits.dim() != 2 or student_logits.shape[1] < 2:
        raise DimensionError(
            f"soft_cross_entropy expects B x C logits with C >= 2, got {tuple(student_logits.shape)}"
        )
    targets = torch.softmax(teacher_logits, dim=-1)
    log_probs = torch.log_softmax(student_logits, dim=-1)
    return torch.mean(-(targets * log_probs).sum(dim=-1))


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor | Sequence[int]) -> torch.Tensor:
    """Mean negative log-probability of the true class."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    num_classes = logits.shape[-1]
    if labels.shape != logits.shape[:1]:
        raise DimensionError(
            f"cross_entropy: {labels.numel()} labels for {logits.shape[0]} rows"
        )
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label outside [0, {num_classes}): {labels.tolist()}")
    return F.cross_entropy(logits, labels)


def backward(loss: torch.Tensor) -> None:
    """
    Back-propagates a scalar loss, summing into existing ``.grad`` buffers.

    Buffers are never cleared here; callers zero them once per batch.
    """
    if loss.numel() != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if not loss.requires_grad or loss.grad_fn is None:
        raise GradientError("backward called on a tensor with no recorded graph")
    loss.backward()


def clip_global_norm(params: Iterable[torch.nn.Parameter], max_norm: float = 1.0) -> float:
    """Rescales gradients so their global L2 norm is at most ``max_norm``."""
    params = [p for p in params if p.grad is not None]
    if not params:
        return 0.0
    return float(torch.nn.utils.clip_grad_norm_(params, max_norm))


class LinearDecayAdam:
    """
    Adam with a linearly decaying learning rate and no warmup.

    The effective rate at a step is ``base_lr * (1 - schedule_fraction)``.
    """

    def __init__(
        self,
        params: Iterable[torch.nn.Parameter],
        base_lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = [p for p in params if p.requires_grad]
        self.base_lr = base_lr
        self.optimizer = torch.optim.Adam(
            self.params, lr=base_lr, betas=betas, eps=eps, weight_decay=0.0
        )
        self.step_count = 0

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=False)
        for p in self.params:
            if p.grad is None:
                p.grad = torch.zeros_like(p)

    def step(self, schedule_fraction: float) -> float:
        if not 0.0 <= schedule_fraction <= 1.0:
            raise ValueError(f"schedule_fraction {schedule_fraction} outside [0, 1]")
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise GradientError(f"{len(missing)} parameters have no gradient")
        lr = self.base_lr * (1.0 - schedule_fraction)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.step()
        self.step_count += 1
        logger.debug(f"Adam step {self.step_count} at lr {lr:.3e}")
        return lr


def adam_step(optimizer: LinearDecayAdam, schedule_fraction: float) -> float:
    """Applies one update; returns the learning rate used."""
    return optimizer.step(schedule_fraction)
