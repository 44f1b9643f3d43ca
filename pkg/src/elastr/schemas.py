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

# Global imports
import math
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ConfigurationError(ValueError):
    """Raised when a model configuration or sub-network selection is unusable."""


def drop_period(depth_mult: float) -> int | None:
    """
    Returns the layer-drop period 1/(1 - m_d), or None when no layer is dropped.

    Raises:
        ConfigurationError: If 1/(1 - m_d) is not an integer >= 2.
    """
    if depth_mult == 1.0:
        return None
    if not 0.0 < depth_mult < 1.0:
        raise ConfigurationError(f"Depth multiplier {depth_mult} is outside (0, 1]")
    ratio = 1.0 / (1.0 - depth_mult)
    period = round(ratio)
    if abs(ratio - period) > 1e-9 or period < 2:
        raise ConfigurationError(
            f"Depth multiplier {depth_mult} gives non-integral drop period {ratio:.6g}"
        )
    return period


class ModelConfig(BaseModel):
    """Shape and regularisation of the full-width, full-depth transformer."""

    model_config = ConfigDict(frozen=True)

    num_hidden_layers: int = Field(4, ge=1)
    hidden_size: int = Field(64, ge=1)
    num_attention_heads: int = Field(4, ge=1)
    intermediate_size: int = Field(128, ge=1)
    vocab_size: int = Field(32, ge=2)
    max_position_embeddings: int = Field(16, ge=1)
    num_classes: int = Field(2, ge=2)
    hidden_dropout_prob: float = Field(0.1, ge=0.0, lt=1.0)
    attention_dropout_prob: float = Field(0.1, ge=0.0, lt=1.0)
    width_list: tuple[float, ...] = (1.0, 0.75, 0.5, 0.25)
    depth_list: tuple[float, ...] = (1.0, 0.75, 0.5)
    # "head" scales scores by 1/sqrt(d_h) (BERT); "hidden" by 1/sqrt(d)
    score_scale: Literal["head", "hidden"] = "head"

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_attention_heads

    @property
    def attention_scale(self) -> float:
        if self.score_scale == "hidden":
            return 1.0 / math.sqrt(self.hidden_size)
        return 1.0 / math.sqrt(self.head_size)

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.hidden_size % self.num_attention_heads != 0:
            raise ConfigurationError(
                f"hidden_size {self.hidden_size} is not divisible by "
                f"{self.num_attention_heads} heads"
            )
        for name, values in (("width_list", self.width_list), ("depth_list", self.depth_list)):
            if 1.0 not in values:
                raise ConfigurationError(f"{name} must contain 1.0, got {list(values)}")
            if list(values) != sorted(values, reverse=True) or len(set(values)) != len(values):
                raise ConfigurationError(f"{name} must be strictly descending, got {list(values)}")
        for width in self.width_list:
            if not 0.0 < width <= 1.0:
                raise ConfigurationError(f"Width multiplier {width} is outside (0, 1]")
            if math.floor(width * self.num_attention_heads) < 1:
                raise ConfigurationError(f"Width multiplier {width} keeps no attention head")
            if math.floor(width * self.intermediate_size) < 1:
                raise ConfigurationError(f"Width multiplier {width} keeps no FFN neuron")
        for depth in self.depth_list:
            period = drop_period(depth)
            if period is not None and self.num_hidden_layers % period != 0:
                raise ConfigurationError(
                    f"Depth multiplier {depth} does not drop a whole number of "
                    f"layers from {self.num_hidden_layers}"
                )
        return self


class SubNetSpec(BaseModel):
    """A (width multiplier, depth multiplier) pair selecting a sub-network."""

    model_config = ConfigDict(frozen=True)

    width_mult: float = Field(1.0, gt=0.0, le=1.0)
    depth_mult: float = Field(1.0, gt=0.0, le=1.0)

    def __str__(self) -> str:
        return f"({self.width_mult:g}, {self.depth_mult:g})"


FULL_SPEC = SubNetSpec(width_mult=1.0, depth_mult=1.0)

Stage = Literal["TEACHER", "W", "WD", "FINETUNE"]
Mode = Literal["conventional", "inplace", "universally_slimmable"]

DEFAULT_LAMBDAS: dict[str, tuple[float, float]] = {
    "W": (1.0, 0.1),
    "WD": (1.0, 1.0),
    "FINETUNE": (0.0, 0.0),
    "TEACHER": (0.0, 0.0),
}


class DistillPlan(BaseModel):
    """Stage, loss weights, multiplier lists and schedule of one training run."""

    stage: Stage
    lambda1: float = Field(ge=0.0)
    lambda2: float = Field(ge=0.0)
    width_list: tuple[float, ...] = (1.0, 0.75, 0.5, 0.25)
    depth_list: tuple[float, ...] = (1.0,)
    epochs: int = Field(3, ge=0)
    batch_size: int = Field(32, ge=1)
    base_lr: float = Field(2e-4, ge=0.0)
    mode: Mode = "conventional"
    seed: int = 42
    us_random_widths: int = Field(2, ge=0)
    max_grad_norm: float = Field(1.0, gt=0.0)
    # stage WD from a teacher that was never trained narrow: distil from its full width
    direct: bool = False

    @model_validator(mode="before")
    @classmethod
    def _fill_stage_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        stage = data.get("stage")
        lambda1, lambda2 = DEFAULT_LAMBDAS.get(stage, (1.0, 1.0))
        if data.get("lambda1") is None:
            data["lambda1"] = lambda1
        if data.get("lambda2") is None:
            data["lambda2"] = lambda2
        # Width-only stages never drop layers
        if stage in ("W", "TEACHER"):
            data["depth_list"] = (1.0,)
        if stage == "TEACHER":
            data["width_list"] = (1.0,)
        return data

    @field_validator("width_list", "depth_list")
    @classmethod
    def _check_multipliers(cls, values: tuple[float, ...]) -> tuple[float, ...]:
        if not values:
            raise ValueError("multiplier list is empty")
        if any(not 0.0 < v <= 1.0 for v in values):
            raise ValueError(f"multipliers must lie in (0, 1], got {list(values)}")
        return tuple(values)

    def specs(self) -> list[SubNetSpec]:
        """Sub-networks visited per batch, depth-major as in the training loop."""
        return [
            SubNetSpec(width_mult=w, depth_mult=d)
            for d in self.depth_list
            for w in self.width_list
        ]


class SyntheticTask(BaseModel):
    """Parameters of a desk-scale binary sequence classification task."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["majority_token", "first_last_match", "contains_bigram"]
    vocab_size: int = Field(32, ge=4)
    seq_len: int = Field(16, ge=3)
    size: int = Field(2000, ge=10)
    seed: int = 42
