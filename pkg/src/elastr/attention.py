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
import io
import os
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

# Local imports
from .dataset import atomic_write_text
from .logging import logger
from .model import AdaptiveModel, collate, forward
from .schemas import SubNetSpec


@torch.no_grad()
def dump_attention(
    model: AdaptiveModel,
    spec: SubNetSpec,
    token_ids: Sequence[int],
    out_dir: str | os.PathLike,
) -> list[Path]:
    """
    Writes one n x n CSV of attention probabilities per executed layer and kept head.

    Files are named ``layer<L>_head<H>.csv`` with 1-based physical layer and
    head numbers; row i holds the distribution of query position i.
    """
    if not token_ids:
        raise ValueError("dump_attention needs at least one token")
    out_dir = Path(out_dir)
    trace = forward(model, spec, collate([(0, token_ids)]), train_mode=False)
    paths = []
    for layer, maps in zip(trace.layers, trace.attention_maps):
        for head, matrix in enumerate(maps[0].numpy(), start=1):
            buf = io.StringIO()
            np.savetxt(buf, matrix, fmt="%.17g", delimiter=",")
            path = out_dir / f"layer{layer:02d}_head{head:02d}.csv"
            atomic_write_text(path, buf.getvalue())
            paths.append(path)
    logger.info(f"Wrote {len(paths)} attention maps for sub-network {spec} to {out_dir}")
    return paths
