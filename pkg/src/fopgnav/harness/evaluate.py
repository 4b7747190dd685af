"""Deterministic-mode evaluation on benchmark and freshly sampled scenes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..diffcore.tensor import Tensor
from ..navenv import NavConfig, NavEnv, RunningNorm, reset
from ..renderer import ObstacleField
from .benchmark import load_benchmark
from .config import EvalConfig

MAX_BATCH = 512


@dataclass
class LevelReport:
    noise: float
    episodes: int
    avoidance_rate: float
    tracking_error: float
    mean_return: float
    benchmark_avoidance: float
    sampled_avoidance: float


@dataclass
class EvalReport:
    episodes: int
    avoidance_rate: float
    tracking_error: float
    mean_return: float
    levels: dict[float, LevelReport] = field(default_factory=dict)

    def summary(self) -> str:
        parts = [f"episodes={self.episodes} avoidance={self.avoidance_rate:.4f} "
                 f"tracking_error={self.tracking_error:.4f} return={self.mean_return:.2f}"]
        for lv in self.levels.values():
            parts.append(f"sigma={lv.noise:g}: avoidance={lv.avoidance_rate:.4f} "
                         f"tracking_error={lv.tracking_error:.4f}")
        return "; ".join(parts)


def as_actor(policy):
    """Deterministic actor ``(obs, raw_obs) -> (n, 2)`` from a policy object or callable."""
    if hasattr(policy, "mean"):
        return lambda obs, raw: policy.mean(obs, raw).data

    def actor(obs, raw):
        out = policy(obs, raw)
        return out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)
    return actor


def episode_plan(episodes: int, ecfg: EvalConfig, nav: NavConfig,
                 scenes: list[tuple[str, ObstacleField]]):
    """``(field, heading, is_benchmark)`` per episode, a pure function of its inputs."""
    n_bench = int(round(episodes * ecfg.benchmark_fraction)) if scenes else 0
    plan = []
    if n_bench:
        reps = -(-n_bench // len(scenes))
        jit = np.deg2rad(ecfg.heading_jitter_deg)
        angles = np.linspace(-jit, jit, reps) if reps > 1 else np.zeros(1)
        for i in range(n_bench):
            _, f = scenes[i % len(scenes)]
            a = float(angles[i // len(scenes)])
            # the robot starts slightly off the scene's nominal direction
            plan.append((f, a, True))
    for i in range(episodes - n_bench):
        st, f, _ = reset([int(ecfg.seed), 1, i], nav)
        plan.append((f, float(st.heading.data[0]), False))
    return plan


def _run_batch(actor, norm: RunningNorm, nav: NavConfig, plan, noise_seed) -> dict:
    env = NavEnv(nav, len(plan), obs_norm=norm, scenes=[(f, h) for f, h, _ in plan],
                 auto_reset=False, noise_seed=noise_seed)
    err_sum = np.zeros(env.n)
    err_cnt = np.zeros(env.n)
    for _ in range(nav.episode_length):
        alive = env.alive.copy()
        res = env.step(actor(env.obs, env.raw_obs_t))
        err_sum += np.where(alive, res.speed_error, 0.0)
        err_cnt += alive
        if not env.alive.any():
            break
    fin = sorted(env.pop_finished(), key=lambda d: d["env"])
    return {"collided": np.array([d["collided"] for d in fin]),
            "ret": np.array([d["return"] for d in fin]),
            "err_sum": err_sum, "err_cnt": err_cnt}


def evaluate(policy, obs_norm: RunningNorm, nav: NavConfig = NavConfig(),
             ecfg: EvalConfig = EvalConfig(), episodes: int | None = None,
             noise_levels=None, scenes=None, benchmark_only: bool = False) -> EvalReport:
    """Roll out the deterministic policy; training state is never touched.

    ``scenes`` defaults to the packaged benchmark set. Depth noise is
    applied to observations only.
    """
    episodes = ecfg.episodes if episodes is None else int(episodes)
    noise_levels = tuple(ecfg.noise_levels if noise_levels is None else noise_levels)
    if scenes is None:
        scenes = load_benchmark(ecfg.scenes_dir or None)
    if benchmark_only:
        ecfg = EvalConfig(**{**ecfg.__dict__, "benchmark_fraction": 1.0})
    actor = as_actor(policy)
    norm = obs_norm.copy()
    norm.frozen = True
    plan = episode_plan(episodes, ecfg, nav, scenes)
    is_bench = np.array([b for _, _, b in plan])

    levels = {}
    for sigma in noise_levels:
        cfg = nav.replace(depth_noise=float(sigma))
        parts = [_run_batch(actor, norm, cfg, plan[s:s + MAX_BATCH], [int(ecfg.seed), 2, s])
                 for s in range(0, len(plan), MAX_BATCH)]
        col = np.concatenate([p["collided"] for p in parts])
        ret = np.concatenate([p["ret"] for p in parts])
        es = np.concatenate([p["err_sum"] for p in parts])
        ec = np.concatenate([p["err_cnt"] for p in parts])
        levels[float(sigma)] = LevelReport(
            noise=float(sigma), episodes=len(plan),
            avoidance_rate=float(1.0 - col.mean()),
            tracking_error=float(es.sum() / ec.sum()),
            mean_return=float(ret.mean()),
            benchmark_avoidance=float(1.0 - col[is_bench].mean()) if is_bench.any() else float("nan"),
            sampled_avoidance=float(1.0 - col[~is_bench].mean()) if (~is_bench).any() else float("nan"),
        )
    lv = list(levels.values())
    return EvalReport(
        episodes=sum(x.episodes for x in lv),
        avoidance_rate=float(np.mean([x.avoidance_rate for x in lv])),
        tracking_error=float(np.mean([x.tracking_error for x in lv])),
        mean_return=float(np.mean([x.mean_return for x in lv])),
        levels=levels,
    )
