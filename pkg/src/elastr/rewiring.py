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

"""Importance scoring of heads and FFN neurons, and function-preserving rewiring.

A head's importance is the first-order Taylor estimate of the loss change
when its output ``h`` is removed, ``|dL/dh . h|``; a neuron's is
``|sum_i dL/dw_i * w_i|`` over the 2d weights connected to it. Rewiring
sorts both leftward by descending importance so that narrow sub-networks
keep the most useful units.
"""

# Global imports
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch
from einops import rearrange
from scipy.stats import spearmanr

# Local imports
from . import numerics as nx
from .dataset import Example, atomic_write_text, iterate_batches
from .logging import T, logger
from .model import AdaptiveModel, forward
from .schemas import FULL_SPEC, ModelConfig


class PermutationError(ValueError):
    """Raised when a rewiring order is not a valid permutation or scores are NaN."""


@dataclass
class ImportanceReport:
    head_scores: torch.Tensor  # num_layers x num_heads
    neuron_scores: torch.Tensor  # num_layers x intermediate_size
    dev_examples_used: int

    def to_csv(self, path: str | os.PathLike) -> None:
        """Writes ``layer,kind,index,score`` rows, layers 1-based."""
        rows = ["layer,kind,index,score\n"]
        for kind, scores in (("head", self.head_scores), ("neuron", self.neuron_scores)):
            for layer, row in enumerate(scores.tolist(), start=1):
                rows.extend(f"{layer},{kind},{i},{s!r}\n" for i, s in enumerate(row))
        atomic_write_text(Path(path), "".join(rows))


@dataclass
class RewirePermutation:
    head_orders: list[torch.Tensor]
    neuron_orders: list[torch.Tensor]

    def validate(self, cfg: ModelConfig) -> None:
        if len(self.head_orders) != cfg.num_hidden_layers or len(self.neuron_orders) != cfg.num_hidden_layers:
            raise PermutationError(
                f"expected orders for {cfg.num_hidden_layers} layers, got "
                f"{len(self.head_orders)} head / {len(self.neuron_orders)} neuron"
            )
        for kind, orders, size in (
            ("head", self.head_orders, cfg.num_attention_heads),
            ("neuron", self.neuron_orders, cfg.intermediate_size),
        ):
            for layer, order in enumerate(orders, start=1):
                if order.shape != (size,) or not torch.equal(
                    torch.sort(order).values, torch.arange(size)
                ):
                    raise PermutationError(f"layer {layer} {kind} order is not a permutation of 0..{size - 1}")


def _taylor_scores(
    model: AdaptiveModel, dev_set: Sequence[Example], batch_size: int
) -> ImportanceReport:
    if not dev_set:
        raise ValueError("importance scoring needs a non-empty dev set")
    cfg = model.cfg
    layers = list(model.layers)
    head_scores = torch.zeros(cfg.num_hidden_layers, cfg.num_attention_heads, dtype=nx.DTYPE)
    neuron_scores = torch.zeros(cfg.num_hidden_layers, cfg.intermediate_size, dtype=nx.DTYPE)
    gates = [
        torch.ones(cfg.num_attention_heads, dtype=nx.DTYPE, requires_grad=True)
        for _ in layers
    ]
    weights = [w for layer in layers for w in (layer.intermediate, layer.ffn_output)]
    saved_flags = [w.requires_grad for w in weights]
    try:
        for w in weights:
            w.requires_grad_(True)
        with torch.enable_grad():
            for batch in iterate_batches(dev_set, batch_size):
                trace = forward(model, FULL_SPEC, batch, train_mode=False, head_gates=gates)
                loss = nx.cross_entropy(trace.logits, batch.labels)
                grads = torch.autograd.grad(loss, gates + weights)
                gate_grads, weight_grads = grads[: len(gates)], grads[len(gates) :]
                for i, layer in enumerate(layers):
                    # d loss / d gate is the head output dotted with its gradient
                    head_scores[i] += gate_grads[i].abs()
                    g1, g2 = weight_grads[2 * i], weight_grads[2 * i + 1]
                    contribution = (g1 * layer.intermediate).sum(dim=0) + (
                        g2 * layer.ffn_output
                    ).sum(dim=1)
                    neuron_scores[i] += contribution.detach().abs()
    finally:
        for w, flag in zip(weights, saved_flags):
            w.requires_grad_(flag)
    return ImportanceReport(head_scores, neuron_scores, len(dev_set))


def head_importance(
    model: AdaptiveModel, dev_set: Sequence[Example], batch_size: int = 32
) -> torch.Tensor:
    """Per-layer Taylor head scores, one absolute value per dev batch, summed."""
    return _taylor_scores(model, dev_set, batch_size).head_scores


def neuron_importance(
    model: AdaptiveModel, dev_set: Sequence[Example], batch_size: int = 32
) -> torch.Tensor:
    """Per-layer Taylor scores of FFN intermediate neurons."""
    return _taylor_scores(model, dev_set, batch_size).neuron_scores


def importance_report(
    model: AdaptiveModel, dev_set: Sequence[Example], batch_size: int = 32
) -> ImportanceReport:
    start = T()
    report = _taylor_scores(model, dev_set, batch_size)
    logger.info(
        f"Scored {report.head_scores.numel()} heads and {report.neuron_scores.numel()} "
        f"neurons on {report.dev_examples_used} dev examples in {T() - start:.2f}s"
    )
    return report


def descending_order(scores: torch.Tensor) -> torch.Tensor:
    """Stable descending sort; equal scores keep ascending original index."""
    if torch.isnan(scores).any():
        raise PermutationError("cannot order NaN importance scores")
    return torch.sort(scores, descending=True, stable=True).indices


def build_permutation(report: ImportanceReport) -> RewirePermutation:
    return RewirePermutation(
        head_orders=[descending_order(row) for row in report.head_scores],
        neuron_orders=[descending_order(row) for row in report.neuron_scores],
    )


@torch.no_grad()
def apply_rewiring(model: AdaptiveModel, perm: RewirePermutation) -> AdaptiveModel:
    """
    Reorders heads and FFN neurons in place.

    Head blocks move together across the Q/K/V columns, their bias segments
    and the output-projection rows; neuron ``i`` moves its intermediate
    column, bias entry and output row. The full-width function is unchanged.
    """
    cfg = model.cfg
    perm.validate(cfg)
    e = cfg.head_size
    for layer, heads, neurons in zip(model.layers, perm.head_orders, perm.neuron_orders):
        for weight, bias in (
            (layer.query, layer.query_bias),
            (layer.key, layer.key_bias),
            (layer.value, layer.value_bias),
        ):
            blocks = rearrange(weight, "d (h e) -> d h e", e=e)[:, heads]
            weight.copy_(rearrange(blocks, "d h e -> d (h e)"))
            bias.copy_(rearrange(rearrange(bias, "(h e) -> h e", e=e)[heads], "h e -> (h e)"))
        rows = rearrange(layer.output, "(h e) d -> h e d", e=e)[heads]
        layer.output.copy_(rearrange(rows, "h e d -> (h e) d"))

        layer.intermediate.copy_(layer.intermediate[:, neurons])
        layer.intermediate_bias.copy_(layer.intermediate_bias[neurons])
        layer.ffn_output.copy_(layer.ffn_output[neurons])
    return model


def rewire(
    model: AdaptiveModel, dev_set: Sequence[Example], batch_size: int = 32
) -> ImportanceReport:
    """Scores, sorts and rewires ``model`` in place; returns the scores used."""
    report = importance_report(model, dev_set, batch_size)
    apply_rewiring(model, build_permutation(report))
    logger.info("Rewired heads and neurons by descending importance")
    return report


@torch.no_grad()
def _dev_loss(
    model: AdaptiveModel,
    dev_set: Sequence[Example],
    batch_size: int,
    gates: list[torch.Tensor] | None = None,
) -> float:
    total = 0.0
    for batch in iterate_batches(dev_set, batch_size):
        trace = forward(model, FULL_SPEC, batch, train_mode=False, head_gates=gates)
        total += float(nx.cross_entropy(trace.logits, batch.labels)) * len(batch)
    return total / len(dev_set)


def ablation_head_importance(
    model: AdaptiveModel, dev_set: Sequence[Example], batch_size: int = 32
) -> torch.Tensor:
    """Brute-force |L - L(head removed)| per head, removing one head at a time."""
    if not dev_set:
        raise ValueError("ablation scoring needs a non-empty dev set")
    cfg = model.cfg
    base = _dev_loss(model, dev_set, batch_size)
    scores = torch.zeros(cfg.num_hidden_layers, cfg.num_attention_heads, dtype=nx.DTYPE)
    for layer in range(cfg.num_hidden_layers):
        for head in range(cfg.num_attention_heads):
            gates = [torch.ones(cfg.num_attention_heads, dtype=nx.DTYPE) for _ in model.layers]
            gates[layer][head] = 0.0
            scores[layer, head] = abs(base - _dev_loss(model, dev_set, batch_size, gates))
    return scores


def _is_constant(scores: torch.Tensor) -> bool:
    return bool(torch.all(scores == scores.flatten()[0]))


def rank_agreement(
    taylor: torch.Tensor, ablation: torch.Tensor, per_layer: bool = False
) -> float:
    """
    Spearman rank correlation between two head-score tables over all heads.

    With ``per_layer`` the correlation is taken within each layer and
    averaged instead; layers where either table is constant are skipped.
    """
    if taylor.shape != ablation.shape:
        raise ValueError(
            f"score tables differ in shape: {tuple(taylor.shape)} vs {tuple(ablation.shape)}"
        )
    if not per_layer:
        if _is_constant(taylor) or _is_constant(ablation):
            raise ValueError("constant scores; rank agreement is undefined")
        return float(spearmanr(taylor.flatten().numpy(), ablation.flatten().numpy()).statistic)
    rhos = []
    for layer, (a, b) in enumerate(zip(taylor, ablation), start=1):
        if _is_constant(a) or _is_constant(b):
            logger.debug(f"Skipping constant-score layer {layer} in rank agreement")
            continue
        rhos.append(float(spearmanr(a.numpy(), b.numpy()).statistic))
    if not rhos:
        raise ValueError("every layer has constant scores; rank agreement is undefined")
    return sum(rhos) / len(rhos)
