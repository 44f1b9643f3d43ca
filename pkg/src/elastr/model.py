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

"""The weight-sharing transformer and its sub-network forward pass.

Every sub-network reads a leftmost prefix of the full parameter arrays:
head ``h`` owns columns ``[h*d_h, (h+1)*d_h)`` of the Q/K/V projections and
the same rows of the output projection; FFN neuron ``i`` owns column ``i`` of
the intermediate weight and row ``i`` of the output weight.
"""

# Global imports
import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import torch
import torch.nn as nn
from einops import rearrange

# Local imports
from . import numerics as nx
from .schemas import ConfigurationError, ModelConfig, SubNetSpec, drop_period

MASK_VALUE = -1e9
INIT_STD = 0.02


@dataclass
class Batch:
    input_ids: torch.Tensor  # B x n, long
    attention_mask: torch.Tensor  # B x n, 1.0 for real tokens
    labels: torch.Tensor  # B, long

    def __len__(self) -> int:
        return self.input_ids.shape[0]


def collate(examples: Sequence[tuple[int, Sequence[int]]]) -> Batch:
    """Pads ragged (label, token ids) pairs to the longest sequence in the batch."""
    if not examples:
        raise ValueError("cannot collate an empty batch")
    longest = max(len(ids) for _, ids in examples)
    input_ids = torch.zeros(len(examples), longest, dtype=torch.long)
    attention_mask = torch.zeros(len(examples), longest, dtype=nx.DTYPE)
    for row, (_, ids) in enumerate(examples):
        input_ids[row, : len(ids)] = torch.as_tensor(list(ids), dtype=torch.long)
        attention_mask[row, : len(ids)] = 1.0
    labels = torch.as_tensor([label for label, _ in examples], dtype=torch.long)
    return Batch(input_ids=input_ids, attention_mask=attention_mask, labels=labels)


@dataclass
class ForwardTrace:
    """Everything distillation reads from one forward pass."""

    logits: torch.Tensor
    embedding_out: torch.Tensor
    hidden: list[torch.Tensor] = field(default_factory=list)
    # per executed layer: B x kept_heads x n x n
    attention_maps: list[torch.Tensor] = field(default_factory=list)
    # 1-based physical indices of the executed layers
    layers: list[int] = field(default_factory=list)


def _floor(mult: float, total: int) -> int:
    # tolerance absorbs products like 0.7 * 10 = 6.999...
    return math.floor(mult * total + 1e-9)


def kept_heads(cfg: ModelConfig, width_mult: float) -> int:
    """Number of leftmost heads retained at a width multiplier."""
    if not 0.0 < width_mult <= 1.0:
        raise ConfigurationError(f"Width multiplier {width_mult} is outside (0, 1]")
    heads = _floor(width_mult, cfg.num_attention_heads)
    if heads < 1:
        raise ConfigurationError(f"Width multiplier {width_mult} keeps no attention head")
    return heads


def kept_neurons(cfg: ModelConfig, width_mult: float) -> int:
    """Number of leftmost FFN neurons retained at a width multiplier."""
    if not 0.0 < width_mult <= 1.0:
        raise ConfigurationError(f"Width multiplier {width_mult} is outside (0, 1]")
    neurons = _floor(width_mult, cfg.intermediate_size)
    if neurons < 1:
        raise ConfigurationError(f"Width multiplier {width_mult} keeps no FFN neuron")
    return neurons


def layer_keep_sets(num_layers: int, depth_mult: float) -> tuple[list[int], list[int]]:
    """
    Every-Other layer selection.

    Returns the 1-based student layers kept at ``depth_mult`` (depths with
    ``d mod p != 0``) and the teacher layers their hidden states are matched
    to (depths with ``(d + 1) mod p != 0``), where ``p = 1 / (1 - m_d)``.
    The last teacher layer is always among the matches.
    """
    period = drop_period(depth_mult)
    depths = range(1, num_layers + 1)
    if period is None:
        return list(depths), list(depths)
    kept = [d for d in depths if d % period != 0]
    match = [d for d in depths if (d + 1) % period != 0]
    if len(kept) != len(match):
        raise ConfigurationError(
            f"{num_layers} layers cannot be thinned evenly at depth multiplier {depth_mult}"
        )
    return kept, match


def _param(*shape: int) -> nn.Parameter:
    return nn.Parameter(torch.empty(*shape, dtype=nx.DTYPE))


class Embeddings(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.word = _param(cfg.vocab_size, cfg.hidden_size)
        self.position = _param(cfg.max_position_embeddings, cfg.hidden_size)
        self.norm_gain = _param(cfg.hidden_size)
        self.norm_bias = _param(cfg.hidden_size)


class TransformerLayer(nn.Module):
    """One post-norm BERT layer; weights are stored input-major (x @ W)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, f = cfg.hidden_size, cfg.intermediate_size
        self.cfg = cfg
        self.query = _param(d, d)
        self.query_bias = _param(d)
        self.key = _param(d, d)
        self.key_bias = _param(d)
        self.value = _param(d, d)
        self.value_bias = _param(d)
        self.output = _param(d, d)
        self.output_bias = _param(d)
        self.attention_norm_gain = _param(d)
        self.attention_norm_bias = _param(d)
        self.intermediate = _param(d, f)
        self.intermediate_bias = _param(f)
        self.ffn_output = _param(f, d)
        self.ffn_output_bias = _param(d)
        self.ffn_norm_gain = _param(d)
        self.ffn_norm_bias = _param(d)


class AdaptiveModel(nn.Module):
    """Full-width, full-depth parameter store shared by every sub-network."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.embeddings = Embeddings(cfg)
        self.layers = nn.ModuleList(
            [TransformerLayer(cfg) for _ in range(cfg.num_hidden_layers)]
        )
        self.classifier_weight = _param(cfg.hidden_size, cfg.num_classes)
        self.classifier_bias = _param(cfg.num_classes)
        self.reset_parameters(seed)

    @torch.no_grad()
    def reset_parameters(self, seed: int) -> None:
        generator = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            if name.endswith("norm_gain"):
                p.fill_(1.0)
            elif name.endswith("bias"):
                p.zero_()
            else:
                p.normal_(0.0, INIT_STD, generator=generator)

    def forward(  # type: ignore[override]
        self,
        spec: SubNetSpec,
        batch: Batch,
        train_mode: bool = False,
        head_gates: Sequence[torch.Tensor | None] | None = None,
    ) -> ForwardTrace:
        return forward(self, spec, batch, train_mode=train_mode, head_gates=head_gates)


def mha_forward(
    layer: TransformerLayer,
    x: torch.Tensor,
    num_heads: int,
    padding_mask: torch.Tensor | None = None,
    train_mode: bool = False,
    head_gates: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Multi-head attention over the leftmost ``num_heads`` heads.

    Concatenating the kept heads and projecting through the matching rows of
    the output weight equals summing each head's own projection. Returns the
    post-norm layer output and the B x num_heads x n x n attention maps.
    """
    cfg = layer.cfg
    if not 1 <= num_heads <= cfg.num_attention_heads:
        raise ConfigurationError(
            f"kept heads {num_heads} outside [1, {cfg.num_attention_heads}]"
        )
    cols = num_heads * cfg.head_size

    q = nx.matmul(x, layer.query[:, :cols]) + layer.query_bias[:cols]
    k = nx.matmul(x, layer.key[:, :cols]) + layer.key_bias[:cols]
    v = nx.matmul(x, layer.value[:, :cols]) + layer.value_bias[:cols]
    q, k, v = (rearrange(t, "b n (h e) -> b h n e", h=num_heads) for t in (q, k, v))

    scores = nx.matmul(q, k.transpose(-1, -2)) * cfg.attention_scale
    if padding_mask is not None:
        scores = scores + (1.0 - padding_mask)[:, None, None, :] * MASK_VALUE
    maps = nx.softmax_rows(scores)
    probs = nx.inverted_dropout(maps, cfg.attention_dropout_prob, train_mode)

    context = nx.matmul(probs, v)
    if head_gates is not None:
        context = context * head_gates[:num_heads].view(1, -1, 1, 1)
    context = rearrange(context, "b h n e -> b n (h e)")

    out = nx.matmul(context, layer.output[:cols]) + layer.output_bias
    out = nx.inverted_dropout(out, cfg.hidden_dropout_prob, train_mode)
    out = nx.layer_norm(x + out, layer.attention_norm_gain, layer.attention_norm_bias)
    return out, maps


def ffn_forward(
    layer: TransformerLayer,
    a: torch.Tensor,
    num_neurons: int,
    train_mode: bool = False,
) -> torch.Tensor:
    """Position-wise feed-forward over the leftmost ``num_neurons`` intermediate neurons."""
    cfg = layer.cfg
    if not 1 <= num_neurons <= cfg.intermediate_size:
        raise ConfigurationError(
            f"kept neurons {num_neurons} outside [1, {cfg.intermediate_size}]"
        )
    h = nx.gelu(
        nx.matmul(a, layer.intermediate[:, :num_neurons])
        + layer.intermediate_bias[:num_neurons]
    )
    out = nx.matmul(h, layer.ffn_output[:num_neurons]) + layer.ffn_output_bias
    out = nx.inverted_dropout(out, cfg.hidden_dropout_prob, train_mode)
    return nx.layer_norm(a + out, layer.ffn_norm_gain, layer.ffn_norm_bias)


def embed(model: AdaptiveModel, batch: Batch, train_mode: bool = False) -> torch.Tensor:
    cfg = model.cfg
    ids = batch.input_ids
    n = ids.shape[1]
    if n > cfg.max_position_embeddings:
        raise ConfigurationError(
            f"sequence length {n} exceeds max_position_embeddings {cfg.max_position_embeddings}"
        )
    if ids.numel() and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ConfigurationError(f"token id outside [0, {cfg.vocab_size})")
    emb = model.embeddings.word[ids] + model.embeddings.position[:n]
    emb = nx.layer_norm(emb, model.embeddings.norm_gain, model.embeddings.norm_bias)
    return nx.inverted_dropout(emb, cfg.hidden_dropout_prob, train_mode)


def forward(
    model: AdaptiveModel,
    spec: SubNetSpec,
    batch: Batch,
    train_mode: bool = False,
    head_gates: Sequence[torch.Tensor | None] | None = None,
) -> ForwardTrace:
    """
    Runs the sub-network selected by ``spec``.

    ``head_gates``, when given, holds one optional length-N_H tensor per
    physical layer that scales each head's context before the output
    projection (1 leaves the head untouched, 0 removes it).
    """
    cfg = model.cfg
    heads = kept_heads(cfg, spec.width_mult)
    neurons = kept_neurons(cfg, spec.width_mult)
    kept, _ = layer_keep_sets(cfg.num_hidden_layers, spec.depth_mult)

    emb = embed(model, batch, train_mode)
    hidden: list[torch.Tensor] = []
    maps_per_layer: list[torch.Tensor] = []
    x = emb
    for depth in kept:
        layer = model.layers[depth - 1]
        gates = head_gates[depth - 1] if head_gates is not None else None
        x, maps = mha_forward(layer, x, heads, batch.attention_mask, train_mode, gates)
        x = ffn_forward(layer, x, neurons, train_mode)
        hidden.append(x)
        maps_per_layer.append(maps)

    logits = nx.matmul(x[:, 0], model.classifier_weight) + model.classifier_bias
    return ForwardTrace(
        logits=logits,
        embedding_out=emb,
        hidden=hidden,
        attention_maps=maps_per_layer,
        layers=list(kept),
    )


def predict(model: AdaptiveModel, spec: SubNetSpec, batch: Batch) -> torch.Tensor:
    """Arg-max class per example, evaluation mode, no graph recorded."""
    with torch.no_grad():
        return forward(model, spec, batch, train_mode=False).logits.argmax(dim=-1)


def iter_specs(widths: Iterable[float], depths: Iterable[float]) -> list[SubNetSpec]:
    return [SubNetSpec(width_mult=w, depth_mult=d) for d in depths for w in widths]


def param_checksum(model: nn.Module) -> str:
    """SHA-256 over every parameter's float64 bytes, in state-dict order."""
    digest = hashlib.sha256()
    for name, tensor in model.state_dict().items():
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
