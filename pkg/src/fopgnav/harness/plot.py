"""Learning curves as SVG: mean line with a min/max band across seeds.

The output is a pure function of the input files: groups and files are
sorted before any arithmetic and the SVG writer uses a fixed id salt and no
timestamp.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import ConfigError, load as load_config
from .metrics import SchemaError, read_csv


def curve_label(csv_path) -> str:
    """Run name from the ``config.toml`` beside the CSV, else the directory name."""
    p = Path(csv_path)
    side = p.parent / "config.toml"
    if side.exists():
        try:
            return load_config(side).name
        except ConfigError:
            pass
    return p.parent.name or p.stem


def band(xs: list[np.ndarray], ys: list[np.ndarray]):
    """``(grid, mean, lo, hi)`` over seeds, each curve interpolated onto the union grid."""
    grid = np.unique(np.concatenate(xs))
    stack = np.array([np.interp(grid, x, y) for x, y in zip(xs, ys)])
    return grid, stack.mean(axis=0), stack.min(axis=0), stack.max(axis=0)


def collect(csv_paths, y: str | None = None, x: str = "env_steps", labels=None):
    """Group curves by label; returns ``(y column, {label: band})``."""
    paths = [Path(p) for p in csv_paths]
    if not paths:
        raise SchemaError("no CSV files given")
    tables = {}
    header = None
    for p in paths:
        t = read_csv(p)
        if header is None:
            header = tuple(t)
        elif tuple(t) != header:
            raise SchemaError(f"{p}: columns {tuple(t)} differ from {header}")
        tables[p] = t
    if y is None:
        y = "mean_return" if "mean_return" in header else "episode_return"
    for col in (x, y):
        if col not in header:
            raise SchemaError(f"column {col!r} not in {header}")
    groups: dict[str, list[Path]] = {}
    for p in paths:
        lab = labels[p] if labels else curve_label(p)
        groups.setdefault(lab, []).append(p)
    out = {}
    for lab in sorted(groups):
        files = sorted(groups[lab], key=lambda q: str(q))
        xs, ys = [], []
        for q in files:
            t = tables[q]
            keep = np.isfinite(t[y])
            xs.append(t[x][keep])
            ys.append(t[y][keep])
        out[lab] = band(xs, ys)
    return y, out


def plot(csv_paths, out_svg, y: str | None = None, title: str = "", log_x: bool = False,
         labels=None) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    y, groups = collect(csv_paths, y=y, labels=labels)
    with matplotlib.rc_context({"svg.hashsalt": "fopgnav", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7.0, 4.2))
        for i, (lab, (gx, mean, lo, hi)) in enumerate(groups.items()):
            color = f"C{i % 10}"
            ax.fill_between(gx, lo, hi, color=color, alpha=0.2, linewidth=0)
            ax.plot(gx, mean, color=color, label=lab, linewidth=1.5)
        ax.set_xlabel("environment steps")
        ax.set_ylabel(y.replace("_", " "))
        if log_x:
            ax.set_xscale("symlog", linthresh=1e4)
        if title:
            ax.set_title(title)
        ax.legend(fontsize=8)
        fig.tight_layout()
        out = Path(out_svg)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return out
