"""Ablation matrix over trainer, nose and renderer-gradient settings.

A matrix file is TOML with a ``[base]`` table (any run-config keys) and the
axes to sweep::

    name = "ablation"
    output_dir = "runs/ablation"
    seeds = [0, 1, 2, 3, 4]
    algorithms = ["shac", "bptt", "ppo"]
    pinocchio = [true, false]
    render_grad = ["none", "full", "clipped"]
    ppo_budget_multiplier = 50

    [base]
    total_env_steps = 400000

Every cell shares the evaluation scenes and the per-seed scene sequence, so
comparisons between cells are paired. PPO never differentiates through the
renderer, so it only runs with ``render_grad = "none"``.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from ..algos.fopg import TrainerAbort
from . import config as config_mod
from .config import ALGORITHMS, ConfigError, ExperimentConfig
from .plot import plot
from .run import run

log = logging.getLogger(__name__)

MATRIX_KEYS = {"name", "output_dir", "seeds", "algorithms", "pinocchio", "render_grad",
               "ppo_budget_multiplier", "base"}


@dataclass
class Matrix:
    name: str = "ablation"
    output_dir: str = "runs/ablation"
    seeds: tuple[int, ...] = (0,)
    algorithms: tuple[str, ...] = ALGORITHMS
    pinocchio: tuple[bool, ...] = (True, False)
    render_grad: tuple[str, ...] = ("none", "full", "clipped")
    ppo_budget_multiplier: float = 50.0
    base: dict = field(default_factory=dict)

    def cells(self) -> list[tuple[str, ExperimentConfig]]:
        """``(cell name, config)`` for every (algorithm, nose, render mode, seed)."""
        out = []
        base = config_mod.from_dict(self.base)
        for alg in self.algorithms:
            modes = ("none",) if alg == "ppo" else self.render_grad
            for nose in self.pinocchio:
                for mode in modes:
                    cell = f"{alg}_{'nose' if nose else 'nonose'}_{mode}"
                    steps = base.total_env_steps
                    if alg == "ppo":
                        steps = int(round(steps * self.ppo_budget_multiplier))
                    for seed in self.seeds:
                        cfg = dataclasses.replace(
                            base, name=cell, algorithm=alg, pinocchio=nose, render_grad=mode,
                            seed=int(seed), total_env_steps=steps,
                            nav=base.nav.replace(nose_length=base.nav.nose_length if nose
                                                 else 0.0),
                            output_dir=str(Path(self.output_dir) / cell / f"seed{seed}"))
                        out.append((cell, cfg))
        return out


def load_matrix(path) -> Matrix:
    try:
        d = tomllib.loads(Path(path).read_text())
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read matrix {path}: {e}") from e
    unknown = set(d) - MATRIX_KEYS
    if unknown:
        raise ConfigError(f"unknown matrix keys {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    m = Matrix(**kw)
    for a in m.algorithms:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}")
    if not m.seeds:
        raise ConfigError("matrix needs at least one seed")
    if m.ppo_budget_multiplier <= 0:
        raise ConfigError("ppo_budget_multiplier must be positive")
    # validate every cell before running any of them
    m.cells()
    return m


@dataclass
class CellResult:
    cell: str
    seed: int
    status: str
    env_steps: int = 0
    avoidance_rate: float = float("nan")
    tracking_error: float = float("nan")
    final_return: float = float("nan")
    message: str = ""


def ablate(matrix: Matrix) -> tuple[list[CellResult], Path, Path]:
    """Run every cell; aborted cells are recorded and the matrix continues.

    Writes ``cells.csv`` (one row per run), ``table.csv`` (per-cell means
    over seeds) and ``curves.svg`` into the matrix output directory.
    """
    out = Path(matrix.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for cell, cfg in matrix.cells():
        try:
            r = run(cfg)
        except TrainerAbort as e:
            log.warning("cell %s seed %d aborted: %s", cell, cfg.seed, e)
            results.append(CellResult(cell, cfg.seed, "aborted", message=str(e)))
            continue
        lv = r.report.levels[min(r.report.levels)]
        results.append(CellResult(cell, cfg.seed, "ok", r.env_steps, lv.avoidance_rate,
                                  lv.tracking_error, r.final_return))
    with open(out / "cells.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        names = [f.name for f in dataclasses.fields(CellResult)]
        w.writerow(names)
        for c in results:
            w.writerow([getattr(c, k) for k in names])
    table = out / "table.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["cell", "runs", "aborted", "avoidance_rate", "tracking_error",
                    "final_return"])
        for cell in sorted({c.cell for c in results}):
            ok = [c for c in results if c.cell == cell and c.status == "ok"]
            n_abort = sum(1 for c in results if c.cell == cell and c.status != "ok")
            mean = (lambda k: float(np.mean([getattr(c, k) for c in ok])) if ok
                    else float("nan"))
            w.writerow([cell, len(ok), n_abort, mean("avoidance_rate"), mean("tracking_error"),
                        mean("final_return")])
    curves = sorted(out.glob("*/seed*/eval.csv"))
    svg = out / "curves.svg"
    if curves:
        plot(curves, svg, title=matrix.name)
    return results, table, svg


def format_table(path) -> str:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows)
