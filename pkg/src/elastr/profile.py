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
Parameter and FLOPs accounting per sub-network.

FLOPs count two per multiply-accumulate in every matrix product of the
forward pass at batch size 1: the Q/K/V projections, attention scores,
attention-weighted values, the output projection, both FFN products and the
classifier on the first position. Embedding lookups are never counted;
element-wise work is counted only with ``include_elementwise``.
"""

# Global imports
import csv
import io
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

# Local imports
from .dataset import atomic_write_text
from .distill import AccuracyTable, MissingMetricError
from .logging import logger
from .model import kept_heads, kept_neurons, layer_keep_sets
from .schemas import ConfigurationError, ModelConfig, SubNetSpec

FLOPS_PER_MAC = 2
LAYER_NORM_FLOPS = 5  # mean, centre, variance, normalise, affine
SOFTMAX_FLOPS = 3  # exp, sum, divide
SCALE_MASK_FLOPS = 2
DEFAULT_SEQ_LEN = 128


def layer_param_count(cfg: ModelConfig, width_mult: float) -> int:
    """Parameters one layer touches at ``width_mult``."""
    d = cfg.hidden_size
    inner = kept_heads(cfg, width_mult) * cfg.head_size
    f = kept_neurons(cfg, width_mult)
    qkv = 3 * (d * inner + inner)
    attn_out = inner * d + d
    norms = 4 * d
    ffn = (d * f + f) + (f * d + d)
    return qkv + attn_out + norms + ffn


def embedding_param_count(cfg: ModelConfig) -> int:
    d = cfg.hidden_size
    return cfg.vocab_size * d + cfg.max_position_embeddings * d + 2 * d


def param_count(cfg: ModelConfig, spec: SubNetSpec, include_embeddings: bool = False) -> int:
    """Parameters used by a sub-network: kept layers plus the classifier."""
    kept, _ = layer_keep_sets(cfg.num_hidden_layers, spec.depth_mult)
    total = len(kept) * layer_param_count(cfg, spec.width_mult)
    total += cfg.hidden_size * cfg.num_classes + cfg.num_classes
    if include_embeddings:
        total += embedding_param_count(cfg)
    return total


def _check_seq_len(cfg: ModelConfig, seq_len: int | None) -> int:
    if seq_len is None:
        return min(DEFAULT_SEQ_LEN, cfg.max_position_embeddings)
    if not 1 <= seq_len <= cfg.max_position_embeddings:
        raise ConfigurationError(
            f"seq_len {seq_len} outside [1, {cfg.max_position_embeddings}]"
        )
    return seq_len


def layer_macs(cfg: ModelConfig, width_mult: float, seq_len: int) -> int:
    n, d = seq_len, cfg.hidden_size
    heads = kept_heads(cfg, width_mult)
    inner = heads * cfg.head_size
    f = kept_neurons(cfg, width_mult)
    projections = 3 * n * d * inner
    scores = heads * n * n * cfg.head_size
    context = heads * n * n * cfg.head_size
    attn_out = n * inner * d
    ffn = 2 * n * d * f
    return projections + scores + context + attn_out + ffn


def layer_elementwise_flops(cfg: ModelConfig, width_mult: float, seq_len: int) -> int:
    n, d = seq_len, cfg.hidden_size
    heads = kept_heads(cfg, width_mult)
    inner = heads * cfg.head_size
    f = kept_neurons(cfg, width_mult)
    biases = 3 * n * inner + n * d + n * f + n * d
    residuals = 2 * n * d
    norms = 2 * LAYER_NORM_FLOPS * n * d
    softmax = (SOFTMAX_FLOPS + SCALE_MASK_FLOPS) * heads * n * n
    gelu = n * f
    return biases + residuals + norms + softmax + gelu


def flops_count(
    cfg: ModelConfig,
    spec: SubNetSpec,
    seq_len: int | None = None,
    include_elementwise: bool = False,
) -> int:
    """
    Forward FLOPs of one sequence of ``seq_len`` tokens.

    ``seq_len`` defaults to 128 capped at ``max_position_embeddings``.
    """
    n = _check_seq_len(cfg, seq_len)
    kept, _ = layer_keep_sets(cfg.num_hidden_layers, spec.depth_mult)
    macs = len(kept) * layer_macs(cfg, spec.width_mult, n)
    macs += cfg.hidden_size * cfg.num_classes
    flops = FLOPS_PER_MAC * macs
    if include_elementwise:
        d = cfg.hidden_size
        # position add and embedding norm; the lookup itself is free
        flops += n * d + LAYER_NORM_FLOPS * n * d
        flops += len(kept) * layer_elementwise_flops(cfg, spec.width_mult, n)
        flops += cfg.num_classes
    return flops


@dataclass(frozen=True)
class CostRow:
    spec: SubNetSpec
    params_transformer: int
    params_total: int
    flops: int
    accuracy: float | None = None


@dataclass
class CostReport:
    rows: list[CostRow]
    seq_len: int
    include_elementwise: bool = False

    def __len__(self) -> int:
        return len(self.rows)


def enumerate_grid(
    cfg: ModelConfig,
    seq_len: int | None = None,
    include_elementwise: bool = False,
    width_list: tuple[float, ...] | None = None,
    depth_list: tuple[float, ...] | None = None,
) -> CostReport:
    """Costs of every (width, depth) pair of the configured grid, depth-major."""
    n = _check_seq_len(cfg, seq_len)
    rows = []
    for depth in depth_list or cfg.depth_list:
        for width in width_list or cfg.width_list:
            spec = SubNetSpec(width_mult=width, depth_mult=depth)
            rows.append(
                CostRow(
                    spec=spec,
                    params_transformer=param_count(cfg, spec),
                    params_total=param_count(cfg, spec, include_embeddings=True),
                    flops=flops_count(cfg, spec, n, include_elementwise),
                )
            )
    return CostReport(rows=rows, seq_len=n, include_elementwise=include_elementwise)


def with_accuracy(report: CostReport, accuracy: Mapping[SubNetSpec, float]) -> CostReport:
    missing = [str(row.spec) for row in report.rows if row.spec not in accuracy]
    if missing:
        raise MissingMetricError(f"no accuracy for sub-networks {', '.join(missing)}")
    rows = [replace(row, accuracy=accuracy[row.spec]) for row in report.rows]
    return replace(report, rows=rows)


def _dominates(a: CostRow, b: CostRow, cost: str) -> bool:
    cost_a, cost_b = getattr(a, cost), getattr(b, cost)
    no_worse = cost_a <= cost_b and a.accuracy >= b.accuracy
    better = cost_a < cost_b or a.accuracy > b.accuracy
    return no_worse and better


def pareto(report: CostReport, accuracy: AccuracyTable, cost: str = "flops") -> list[CostRow]:
    """Rows no other row beats in both ``cost`` (lower) and accuracy (higher), cheapest first."""
    if cost not in ("flops", "params_transformer", "params_total"):
        raise ValueError(f"unknown cost column {cost}")
    rows = with_accuracy(report, accuracy).rows
    frontier = [r for r in rows if not any(_dominates(o, r, cost) for o in rows)]
    frontier.sort(key=lambda r: (getattr(r, cost), -r.accuracy))
    logger.debug(f"Pareto frontier over {cost}: {[str(r.spec) for r in frontier]}")
    return frontier


def write_cost_csv(
    report: CostReport,
    path: str | os.PathLike,
    accuracy: AccuracyTable | None = None,
) -> None:
    if accuracy is not None:
        report = with_accuracy(report, accuracy)
    buf = io.StringIO()
    buf.write(f"# 1 MAC = {FLOPS_PER_MAC} FLOPs; seq_len={report.seq_len}\n")
    writer = csv.writer(buf, lineterminator="\n")
    header = ["spec", "m_w", "m_d", "params_transformer", "params_total", "flops"]
    if accuracy is not None:
        header.append("accuracy")
    writer.writerow(header)
    for row in report.rows:
        values = [
            str(row.spec),
            repr(row.spec.width_mult),
            repr(row.spec.depth_mult),
            row.params_transformer,
            row.params_total,
            row.flops,
        ]
        if accuracy is not None:
            values.append(repr(row.accuracy))
        writer.writerow(values)
    atomic_write_text(Path(path), buf.getvalue())
    logger.info(f"Wrote {len(report)} cost rows to {path}")
