"""Declarative experiment description loaded from a TOML file.

Top-level keys describe the run; ``[nav]``, ``[shac]``, ``[ppo]`` and
``[eval]`` override the defaults of the matching config objects. Unknown
keys anywhere are rejected.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..algos.fopg import ShacConfig
from ..algos.ppo import PpoConfig
from ..dynamics import DynParams
from ..navenv import NavConfig
from ..renderer import GRAD_MODES, CameraModel

ALGORITHMS = ("bptt", "shac", "ppo")
ANCHORS = ("hand", "net")


class ConfigError(ValueError):
    """The experiment description is malformed or inconsistent."""


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 512
    curve_episodes: int = 256
    noise_levels: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0)
    benchmark_fraction: float = 0.5
    heading_jitter_deg: float = 5.0
    seed: int = 9001
    scenes_dir: str = ""

    def __post_init__(self):
        if self.episodes < 1 or self.curve_episodes < 1:
            raise ConfigError("eval.episodes and eval.curve_episodes must be positive")
        if not 0.0 <= self.benchmark_fraction <= 1.0:
            raise ConfigError("eval.benchmark_fraction must lie in [0, 1]")
        if any(s < 0 for s in self.noise_levels) or not self.noise_levels:
            raise ConfigError("eval.noise_levels must be nonnegative and nonempty")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "run"
    algorithm: str = "shac"
    rpl: bool = False
    anchor: str = "hand"
    render_grad: str = "none"
    clip_norm: float = 1.0
    pinocchio: bool = True
    seed: int = 0
    total_env_steps: int = 400_000
    output_dir: str = "runs/run"
    eval_every: int = 25_600
    checkpoint_every: int = 50
    nav: NavConfig = field(default_factory=NavConfig)
    shac: ShacConfig = field(default_factory=ShacConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.anchor not in ANCHORS:
            raise ConfigError(f"anchor must be one of {ANCHORS}, got {self.anchor!r}")
        if self.render_grad not in GRAD_MODES:
            raise ConfigError(f"render_grad must be one of {GRAD_MODES}")
        if self.total_env_steps < 0:
            raise ConfigError("total_env_steps must be nonnegative")
        if self.eval_every < 0 or self.checkpoint_every < 0:
            raise ConfigError("eval_every and checkpoint_every must be nonnegative")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if not self.pinocchio and self.nav.nose_length != 0.0:
            # keep the two views of the nose consistent
            object.__setattr__(self, "nav", self.nav.replace(nose_length=0.0))

    @property
    def env_count(self) -> int:
        return self.ppo.env_count if self.algorithm == "ppo" else self.shac.env_count

    def replace(self, **kw) -> ExperimentConfig:
        return dataclasses.replace(self, **kw)


def _coerce(cls, section: str, values: dict):
    """Build a dataclass from a TOML table, turning lists into tuples."""
    known = {f.name: f for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in values.items():
        if k not in known:
            raise ConfigError(f"unknown key {section}.{k}")
        if isinstance(v, dict):
            raise ConfigError(f"unexpected table {section}.{k}")
        kw[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}] {e}") from e


def from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    sections = {"nav": NavConfig, "shac": ShacConfig, "ppo": PpoConfig, "eval": EvalConfig}
    built = {}
    for name, cls in sections.items():
        table = d.pop(name, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        if name == "nav":
            table = dict(table)
            dyn = table.pop("dyn", {})
            cam = table.pop("cam", {})
            nav = _coerce(NavConfig, "nav", table)
            built[name] = nav.replace(dyn=_coerce(DynParams, "nav.dyn", dyn),
                                      cam=_coerce(CameraModel, "nav.cam", cam))
        else:
            built[name] = _coerce(cls, name, table)
    for k, v in d.items():
        if isinstance(v, dict):
            raise ConfigError(f"unknown section [{k}]")
    cfg = _coerce(ExperimentConfig, "top-level", {**d})
    return dataclasses.replace(cfg, **built)


def loads(text: str) -> ExperimentConfig:
    try:
        d = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}") from e
    return from_dict(d)


def load(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from e
    return loads(text)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {v!r}")


def dumps(cfg: ExperimentConfig) -> str:
    """TOML text that ``loads`` maps back to an equal config."""
    lines = []
    nested = ("nav", "shac", "ppo", "eval")
    for f in dataclasses.fields(cfg):
        if f.name not in nested:
            lines.append(f"{f.name} = {_toml_value(getattr(cfg, f.name))}")

    def table(name, obj, skip=()):
        lines.append("")
        lines.append(f"[{name}]")
        for f in dataclasses.fields(obj):
            if f.name not in skip:
                lines.append(f"{f.name} = {_toml_value(getattr(obj, f.name))}")

    table("nav", cfg.nav, skip=("dyn", "cam"))
    table("nav.dyn", cfg.nav.dyn)
    table("nav.cam", cfg.nav.cam)
    table("shac", cfg.shac)
    table("ppo", cfg.ppo)
    table("eval", cfg.eval)
    return "\n".join(lines) + "\n"
