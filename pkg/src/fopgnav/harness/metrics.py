"""Per-iteration CSV logs.

Training and evaluation rows are pure functions of (config, seed); wall-clock
times go to their own file so the metric files stay byte-identical across
repeated runs.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

TRAIN_FIELDS = ("iteration", "env_steps", "episode_return", "collision_rate", "tracking_error",
                "grad_norm", "loss", "value_loss")
EVAL_FIELDS = ("iteration", "env_steps", "avoidance_rate", "tracking_error", "mean_return")
TIMING_FIELDS = ("iteration", "wall_clock")


class SchemaError(ValueError):
    """A metrics file does not have the expected header."""


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


class CsvLog:
    """Append-only CSV with a fixed header; CRLF line endings, minimal quoting."""

    def __init__(self, path, fields):
        self.path = Path(path)
        self.fields = tuple(fields)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\r\n")
        self._w.writerow(self.fields)
        self._last_steps = None

    def append(self, row: dict) -> None:
        missing = [k for k in self.fields if k not in row]
        if missing:
            raise SchemaError(f"row lacks {missing}")
        if "env_steps" in self.fields:
            s = int(row["env_steps"])
            if self._last_steps is not None and s <= self._last_steps:
                raise ValueError("cumulative env steps must strictly increase")
            self._last_steps = s
        self._w.writerow([_fmt(row[k]) for k in self.fields])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_csv(path, expected=None) -> dict[str, np.ndarray]:
    """Columns as float arrays; checks the header against ``expected`` when given."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = tuple(rows[0])
    if expected is not None and header != tuple(expected):
        raise SchemaError(f"{path}: header {header} != {tuple(expected)}")
    body = rows[1:]
    return {k: np.array([float(r[i]) for r in body]) for i, k in enumerate(header)}
