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

# ruff: noqa

__version__ = "0.1.0"

# Import package.
from .logging import *
from .schemas import *
from .hparams import *
from .numerics import (
    DTYPE,
    DimensionError,
    GradientError,
    LinearDecayAdam,
    adam_step,
    backward,
    clip_global_norm,
)
from .model import AdaptiveModel, Batch, ForwardTrace, collate, forward, iter_specs
from .dataset import Example, generate_task, iterate_batches, read_dataset, write_task
from .checkpoint import (
    Checkpoint,
    CheckpointFormatError,
    StageOrderError,
    load_checkpoint,
    save_checkpoint,
)
from .rewiring import ImportanceReport, PermutationError, RewirePermutation, rewire
from .distill import (
    MissingMetricError,
    TrainedPair,
    TrainingDivergedError,
    evaluate_all,
    finetune,
    select_model,
    train_stage,
    train_teacher,
)
from .profile import enumerate_grid, flops_count, param_count, pareto
from .attention import dump_attention
from .metrics import MetricsLogger
