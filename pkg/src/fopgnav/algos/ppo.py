"""PPO with GAE on the same environment, treated as a black box.

Batching follows the usual on-policy layout: each iteration collects
``batch_size * minibatches`` unrolls of ``unroll_length`` steps (spread over
``env_count`` parallel envs), then runs ``updates_per_batch`` epochs of
``minibatches`` clipped-surrogate steps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..diffcore import Adam, backward, clip_grad_norm, ops
from ..diffcore.tensor import NonFiniteError, Tape, Tensor
from ..navenv import NavEnv
from .fopg import TrainerAbort
from .policy import GaussianPolicy, ValueNet
from .targets import gae


@dataclass
class PpoConfig:
    unroll_length: int = 20
    minibatches: int = 32
    batch_size: int = 256
    updates_per_batch: int = 4
    env_count: int = 256
    lr_start: float = 3e-4
    lr_end: float = 1e-4
    entropy_cost: float = 0.01
    discount: float = 0.97
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    grad_clip: float | None = 1.0
    init_log_std: float = 0.0
    policy_hidden: tuple = (64,)
    value_hidden: tuple = (64, 64)
    activation: str = "elu"
    layer_norm: bool = True
    variance_scale: float = 0.1
    # initial scale of the policy output layer; residual policies always start at zero
    policy_init_scale: float = 0.01
    normalize_advantage: bool = True

    def __post_init__(self):
        for k in ("unroll_length", "minibatches", "batch_size", "updates_per_batch",
                  "env_count"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be positive")
        for k in ("lr_start", "lr_end", "clip_ratio"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        for k in ("discount", "gae_lambda"):
            if not 0.0 <= getattr(self, k) <= 1.0:
                raise ValueError(f"{k} must lie in [0, 1]")
        if self.lr_end > self.lr_start:
            raise ValueError("learning rate must decay")

    @property
    def rounds(self) -> int:
        """Sequential unroll rounds per iteration."""
        return max(1, (self.batch_size * self.minibatches) // self.env_count)

    @property
    def steps_per_iteration(self) -> int:
        return self.rounds * self.env_count * self.unroll_length


def linear_decay(start: float, end: float, i: int, n: int) -> float:
    if n <= 1:
        return start
    frac = min(max(i / (n - 1), 0.0), 1.0)
    return start + (end - start) * frac


def clipped_surrogate(logp, logp_old, adv, clip_ratio: float) -> Tensor:
    """Negative mean of ``min(r * A, clip(r) * A)`` with ``r = exp(logp - logp_old)``."""
    ratio = ops.exp(logp - logp_old)
    s1 = ratio * adv
    s2 = ops.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * adv
    return -ops.mean(ops.where(s1.data <= s2.data, s1, s2))


class PpoTrainer:
    def __init__(self, env: NavEnv, policy: GaussianPolicy, value: ValueNet, cfg: PpoConfig,
                 total_iterations: int, seed: int = 0):
        if env.n != cfg.env_count:
            raise ValueError("env count does not match config")
        self.env = env
        self.policy = policy
        self.value = value
        self.cfg = cfg
        self.total_iterations = max(1, total_iterations)
        self.rng = np.random.default_rng([int(seed), 202])
        self.opt = Adam({**policy.params, **value.params}, lr=cfg.lr_start)
        self.iteration = 0
        self.env_steps = 0
        self.last_return = float("nan")
        self.last_collision_rate = float("nan")

    @property
    def lr(self) -> float:
        return linear_decay(self.cfg.lr_start, self.cfg.lr_end, self.iteration,
                            self.total_iterations)

    def collect(self):
        """One batch of unrolls without gradients. Arrays are ``(seq, T, ...)``."""
        cfg, env, pol = self.cfg, self.env, self.policy
        keys = ("obs", "raw", "act", "logp", "rew", "done", "col", "next_obs", "spd")
        buf = {k: [] for k in keys}
        std = pol.std().data
        for _ in range(cfg.rounds):
            seq = {k: [] for k in keys}
            for _ in range(cfg.unroll_length):
                mu = pol.mean(env.obs, env.raw_obs_t).data
                a = mu + std * self.rng.standard_normal(mu.shape)
                logp = pol.log_prob(env.obs, env.raw_obs_t, a).data
                seq["obs"].append(env.obs.data)
                seq["raw"].append(env.raw_obs)
                res = env.step(a)
                pre = res.terminal_obs if res.terminal_obs is not None else res.obs
                seq["act"].append(a)
                seq["logp"].append(logp)
                seq["rew"].append(res.reward.data)
                seq["done"].append(res.done)
                seq["col"].append(res.collided)
                seq["next_obs"].append(pre.data)
                seq["spd"].append(res.speed_error)
            for k in keys:
                # (T, n, ...) -> (n, T, ...)
                buf[k].append(np.swapaxes(np.array(seq[k]), 0, 1))
        return {k: np.concatenate(v, axis=0) for k, v in buf.items()}

    def advantages(self, b):
        cfg = self.cfg
        s, T = b["rew"].shape
        d = b["obs"].shape[-1]
        v = self.value.predict(b["obs"].reshape(-1, d)).reshape(s, T)
        nv = self.value.predict(b["next_obs"].reshape(-1, d)).reshape(s, T)
        nv = np.where(b["col"], 0.0, nv)
        # truncated steps end the sequence but bootstrap from nv
        adv = gae(b["rew"].T, v.T, nv.T, b["done"].T, cfg.discount, cfg.gae_lambda).T
        return adv, adv + v

    def update(self, b, adv, ret) -> tuple[float, float, float]:
        """Run the epochs; returns the last ``(grad norm, surrogate loss, value loss)``."""
        cfg = self.cfg
        s = adv.shape[0]
        d = b["obs"].shape[-1]
        mb = max(1, s // cfg.minibatches)
        lr = self.lr
        gnorm = pg_last = vl_last = float("nan")
        for _ in range(cfg.updates_per_batch):
            perm = self.rng.permutation(s)
            for k in range(cfg.minibatches):
                idx = perm[k * mb:(k + 1) * mb]
                if idx.size == 0:
                    continue
                obs = b["obs"][idx].reshape(-1, d)
                raw = b["raw"][idx].reshape(-1, d)
                act = b["act"][idx].reshape(-1, 2)
                lp_old = b["logp"][idx].reshape(-1)
                a = adv[idx].reshape(-1)
                if cfg.normalize_advantage:
                    a = (a - a.mean()) / (a.std() + 1e-8)
                tape = Tape()
                try:
                    logp = self.policy.log_prob(Tensor(obs), Tensor(raw), act, tape)
                    pg = clipped_surrogate(logp, lp_old, a, cfg.clip_ratio)
                    vpred = self.value(Tensor(obs), tape)
                    verr = vpred - ret[idx].reshape(-1)
                    vl = ops.mean(verr * verr)
                    loss = pg + cfg.value_coef * vl - cfg.entropy_cost * self.policy.entropy(tape)
                    g = backward(tape, loss)
                except NonFiniteError as e:
                    raise TrainerAbort(f"ppo iteration {self.iteration}: {e}") from e
                g, gnorm = clip_grad_norm(g, cfg.grad_clip)
                self.opt.step(g, lr=lr)
                pg_last, vl_last = float(pg.data), float(vl.data)
        return gnorm, pg_last, vl_last

    def step(self) -> dict:
        t0 = time.perf_counter()
        try:
            b = self.collect()
        except NonFiniteError as e:
            raise TrainerAbort(f"ppo iteration {self.iteration}: rollout: {e}") from e
        adv, ret = self.advantages(b)
        gnorm, pg, vl = self.update(b, adv, ret)
        self.env.obs_norm.update(b["raw"].reshape(-1, b["raw"].shape[-1]))
        self.env.detach()
        self.iteration += 1
        self.env_steps += self.cfg.steps_per_iteration
        finished = self.env.pop_finished()
        if finished:
            self.last_return = float(np.mean([f["return"] for f in finished]))
            self.last_collision_rate = float(np.mean([f["collided"] for f in finished]))
        return {
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "episode_return": self.last_return,
            "collision_rate": self.last_collision_rate,
            "tracking_error": float(b["spd"].mean()),
            "grad_norm": gnorm,
            "loss": pg,
            "value_loss": vl,
            "wall_clock": time.perf_counter() - t0,
        }


def ppo_iteration(trainer: PpoTrainer) -> dict:
    return trainer.step()
