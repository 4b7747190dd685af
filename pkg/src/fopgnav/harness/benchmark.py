"""Fixed benchmark scenes: corridors, slaloms, dense fields and empty fields.

Scenes are stored in the robot's start frame (robot at the origin facing +x)
as plain-text files under ``fopgnav/scenes``. ``write_benchmark`` is the
generator that produced the committed files; ``load_benchmark`` reads them.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..navenv import NavConfig, sample_field
from ..renderer import ObstacleField

SCENES_DIR = Path(__file__).resolve().parent.parent / "scenes"
FAMILIES = ("corridor", "slalom", "dense", "empty")
PER_FAMILY = 8


def corridor(k: int) -> ObstacleField:
    """Two walls of posts, gently curving left or right, half-width 1.6 to 2.3 m."""
    half = 1.6 + 0.1 * k
    bend = (0.02 if k % 2 else -0.02) * (1 + k // 4)
    circles = []
    for x in np.arange(3.0, 13.0, 1.1):
        yc = bend * (x - 3.0) ** 2
        for side in (-1.0, 1.0):
            circles.append(((x, yc + side * (half + 0.4)), 0.4))
    return ObstacleField.from_circles(circles)


def slalom(k: int) -> ObstacleField:
    """Posts alternating across the start line; the straight path is blocked."""
    gap = 2.4 + 0.15 * k
    offset = 0.6 + 0.05 * k
    first = 1.0 if k % 2 == 0 else -1.0
    circles = []
    for j, x in enumerate(np.arange(3.5, 12.5, gap)):
        side = first if j % 2 == 0 else -first
        circles.append(((x, side * offset), 0.45))
    return ObstacleField.from_circles(circles)


def dense(k: int) -> ObstacleField:
    """Twelve obstacles from the training sampler, fixed by seed."""
    cfg = NavConfig(obstacle_count=(12, 12))
    return sample_field(np.random.default_rng([4242, k]), cfg, heading=0.0)


def empty(k: int) -> ObstacleField:
    return ObstacleField()


def benchmark_fields() -> list[tuple[str, ObstacleField]]:
    makers = {"corridor": corridor, "slalom": slalom, "dense": dense, "empty": empty}
    out = []
    for fam in FAMILIES:
        for k in range(PER_FAMILY):
            f = makers[fam](k)
            # short decimals keep the committed files readable
            out.append((f"{fam}_{k:02d}", ObstacleField(np.round(f.centers, 4),
                                                       np.round(f.radii, 4))))
    return out


def write_benchmark(directory=SCENES_DIR) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, f in benchmark_fields():
        p = d / f"{name}.txt"
        p.write_text(f"# {name}: robot starts at the origin facing +x; cx cy r in meters\n"
                     + f.to_text())
        paths.append(p)
    return paths


def load_benchmark(directory=None) -> list[tuple[str, ObstacleField]]:
    """All ``*.txt`` scenes in ``directory`` (default: the packaged set), sorted by name."""
    d = Path(directory) if directory else SCENES_DIR
    files = sorted(d.glob("*.txt"))
    if not files:
        raise FileNotFoundError(f"no scene files in {d}")
    return [(p.stem, ObstacleField.load(p)) for p in files]
