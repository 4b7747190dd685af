"""One training run: build, train, log, checkpoint, evaluate."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..algos.anchor import train_anchor
from ..algos.fopg import FopgTrainer
from ..algos.policy import GaussianPolicy, HandAnchor, ValueNet, make_anchor
from ..algos.ppo import PpoTrainer
from ..diffcore import checkpoint
from ..diffcore.checkpoint import CheckpointError
from ..navenv import OBS_DIM, NavEnv, RunningNorm
from . import config as config_mod
from .config import ConfigError, ExperimentConfig
from .evaluate import EvalReport, evaluate
from .metrics import EVAL_FIELDS, TIMING_FIELDS, TRAIN_FIELDS, CsvLog

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    output_dir: Path
    report: EvalReport
    iterations: int
    env_steps: int
    final_return: float


def build_anchor(cfg: ExperimentConfig):
    if not cfg.rpl:
        return None
    if cfg.anchor == "hand":
        return HandAnchor(cfg.nav.target_speed)
    return train_anchor(HandAnchor(cfg.nav.target_speed), cfg.nav, seed=cfg.seed)


def build_policy(cfg: ExperimentConfig, anchor=None):
    """Policy and value net for the configured algorithm (``value`` is None for BPTT)."""
    a = cfg.ppo if cfg.algorithm == "ppo" else cfg.shac
    policy = GaussianPolicy(hidden=a.policy_hidden, activation=a.activation,
                            layer_norm=a.layer_norm, init_log_std=a.init_log_std,
                            anchor=anchor, variance_scale=a.variance_scale if cfg.rpl else 1.0,
                            final_layer_scale=0.0 if cfg.rpl else a.policy_init_scale,
                            seed=cfg.seed)
    value = None
    if cfg.algorithm != "bptt":
        value = ValueNet(hidden=a.value_hidden, activation=a.activation,
                         layer_norm=a.layer_norm, seed=cfg.seed + 1000)
    return policy, value


def iterations_for(cfg: ExperimentConfig) -> int:
    per = (cfg.ppo.steps_per_iteration if cfg.algorithm == "ppo"
           else cfg.shac.horizon * cfg.shac.env_count)
    return -(-cfg.total_env_steps // per)


def checkpoint_tensors(policy: GaussianPolicy, value, norm: RunningNorm, iteration: int,
                       env_steps: int) -> dict[str, np.ndarray]:
    t = policy.state_dict()
    if value is not None:
        t.update({k: v.copy() for k, v in value.params.items()})
    t.update(norm.state_dict())
    t["meta/iteration"] = np.array([float(iteration)])
    t["meta/env_steps"] = np.array([float(env_steps)])
    return t


def restore(cfg: ExperimentConfig, tensors: dict[str, np.ndarray]):
    """Rebuild ``(policy, value, obs_norm)`` from checkpoint tensors."""
    anchor = None
    if cfg.rpl:
        if cfg.anchor == "hand":
            if "anchor/target_speed" not in tensors:
                raise CheckpointError("checkpoint lacks the hand anchor's target speed")
            anchor = HandAnchor(float(tensors["anchor/target_speed"][0]))
        else:
            sub = {k[len("anchor/"):]: v for k, v in tensors.items() if k.startswith("anchor/")}
            anchor = make_anchor("net", cfg.nav, sub) if sub else None
            if anchor is None:
                raise CheckpointError("checkpoint lacks anchor network tensors")
    policy, value = build_policy(cfg, anchor)
    nets = [policy.params] + ([value.params] if value is not None else [])
    for params in nets:
        for k in params:
            if k not in tensors:
                raise CheckpointError(f"checkpoint lacks {k}")
            if tensors[k].shape != params[k].shape:
                raise CheckpointError(f"{k}: checkpoint shape {tensors[k].shape} does not match "
                                      f"config shape {params[k].shape}")
            params[k] = tensors[k].copy()
    norm = RunningNorm(OBS_DIM)
    try:
        norm.load_state_dict(tensors)
    except KeyError as e:
        raise CheckpointError(f"checkpoint lacks normalization statistics {e}") from e
    return policy, value, norm


def _make_trainer(cfg: ExperimentConfig, env: NavEnv, policy, value):
    if cfg.algorithm == "ppo":
        return PpoTrainer(env, policy, value, cfg.ppo, iterations_for(cfg), seed=cfg.seed)
    return FopgTrainer(env, policy, cfg.shac, value if cfg.algorithm == "shac" else None,
                       seed=cfg.seed)


def run(cfg: ExperimentConfig, config_text: str | None = None, output_dir=None,
        stop_return: float | None = None, quiet: bool = False) -> RunResult:
    """Train per ``cfg`` and write ``config.toml``, ``metrics.csv``, ``eval.csv``,
    ``timing.csv``, checkpoints and ``summary.json`` into the output directory.

    ``stop_return`` ends training early once a learning-curve evaluation
    reaches that mean return.
    """
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(config_text if config_text is not None
                                     else config_mod.dumps(cfg))
    anchor = build_anchor(cfg)
    policy, value = build_policy(cfg, anchor)
    env = NavEnv(cfg.nav, cfg.env_count, seed=cfg.seed, render_grad=cfg.render_grad,
                 clip_norm=cfg.clip_norm)
    trainer = _make_trainer(cfg, env, policy, value)
    anchor_sum = anchor.checksum() if anchor is not None else None

    def curve_point(it, steps, elog):
        rep = evaluate(policy, env.obs_norm, cfg.nav, cfg.eval, episodes=cfg.eval.curve_episodes,
                       noise_levels=(0.0,), benchmark_only=True)
        lv = rep.levels[0.0]
        elog.append({"iteration": it, "env_steps": steps, "avoidance_rate": lv.avoidance_rate,
                     "tracking_error": lv.tracking_error, "mean_return": lv.mean_return})
        return lv.mean_return

    final_return = float("nan")
    with CsvLog(out / "metrics.csv", TRAIN_FIELDS) as mlog, \
            CsvLog(out / "eval.csv", EVAL_FIELDS) as elog, \
            CsvLog(out / "timing.csv", TIMING_FIELDS) as tlog:
        final_return = curve_point(0, 0, elog)
        next_eval = cfg.eval_every
        while trainer.env_steps < cfg.total_env_steps:
            m = trainer.step()
            mlog.append(m)
            tlog.append(m)
            it, steps = m["iteration"], m["env_steps"]
            done = steps >= cfg.total_env_steps
            if cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                checkpoint.save(out / f"ckpt_{it:06d}.fopg",
                                checkpoint_tensors(policy, value, env.obs_norm, it, steps))
            if done or (cfg.eval_every and steps >= next_eval):
                while cfg.eval_every and next_eval <= steps:
                    next_eval += cfg.eval_every
                final_return = curve_point(it, steps, elog)
                if not quiet:
                    log.info("%s it=%d steps=%d eval_return=%.2f", cfg.name, it, steps,
                             final_return)
                if stop_return is not None and final_return >= stop_return:
                    break
    if anchor is not None and anchor.checksum() != anchor_sum:
        raise RuntimeError("anchor parameters changed during training")
    checkpoint.save(out / "final.fopg",
                    checkpoint_tensors(policy, value, env.obs_norm, trainer.iteration,
                                       trainer.env_steps))
    report = evaluate(policy, env.obs_norm, cfg.nav, cfg.eval)
    summary = {
        "name": cfg.name, "algorithm": cfg.algorithm, "rpl": cfg.rpl, "seed": cfg.seed,
        "iterations": trainer.iteration, "env_steps": trainer.env_steps,
        "final_curve_return": final_return,
        "anchor_checksum": anchor_sum,
        "eval": {
            "episodes": report.episodes, "avoidance_rate": report.avoidance_rate,
            "tracking_error": report.tracking_error, "mean_return": report.mean_return,
            "levels": {repr(k): vars(v) for k, v in report.levels.items()},
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunResult(out, report, trainer.iteration, trainer.env_steps, final_return)


def run_file(path, output_dir=None) -> RunResult:
    text = Path(path).read_text()
    cfg = config_mod.loads(text)
    return run(cfg, config_text=text, output_dir=output_dir)


def load_checkpoint(path, cfg: ExperimentConfig | None = None):
    """``(policy, obs_norm, cfg)`` from a checkpoint; the config defaults to the
    ``config.toml`` stored next to it."""
    p = Path(path)
    if cfg is None:
        side = p.parent / "config.toml"
        if not side.exists():
            raise ConfigError(f"no config given and {side} does not exist")
        cfg = config_mod.load(side)
    tensors = checkpoint.load(p)
    policy, _, norm = restore(cfg, tensors)
    return policy, norm, cfg
