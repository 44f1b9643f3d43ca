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
import csv
import io
import os
from pathlib import Path
from threading import Lock

# Local imports
from .logging import logger

FIELDS = (
    "stage",
    "epoch",
    "step",
    "m_w",
    "m_d",
    "loss",
    "pred",
    "emb",
    "hidn",
    "dev_accuracy",
)


class MetricsLogger:
    """
    Append-only CSV log of training metrics.

    One row per (optimizer step, sub-network) plus one row per (epoch,
    sub-network) carrying dev accuracy. Values are written with ``repr`` so
    identical runs produce identical files.
    """

    def __init__(self, path: str | os.PathLike | None, stage: str = ""):
        self.path = Path(path) if path is not None else None
        self.stage = stage
        self.lock = Lock()
        if self.path is not None and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._write([FIELDS])

    @staticmethod
    def process_value(v) -> str:
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    def _write(self, rows) -> None:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(buf.getvalue())

    def log(self, **fields) -> None:
        if self.path is None:
            return
        unknown = set(fields) - set(FIELDS)
        if unknown:
            raise KeyError(f"unknown metrics fields: {sorted(unknown)}")
        fields.setdefault("stage", self.stage)
        row = [self.process_value(fields.get(name)) for name in FIELDS]
        try:
            with self.lock:
                self._write([row])
        except OSError as e:
            logger.error(f"Error logging metrics to {self.path}: {e}")
            raise
