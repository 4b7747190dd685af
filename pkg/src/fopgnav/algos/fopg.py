"""First-order policy gradient trainers: truncated BPTT and SHAC.

Both unroll ``horizon`` differentiable environment steps, backpropagate the
discounted window return to the policy, clip the gradient norm and take an
Adam step. SHAC additionally bootstraps the truncated tail with a frozen copy
of a learned value network and regresses that network on TD(lambda) targets.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..diffcore import Adam, backward, clip_grad_norm, ops
from ..diffcore.tensor import NonFiniteError, Tape, Tensor
from ..navenv import NavEnv
from .policy import GaussianPolicy, ValueNet
from .targets import td_lambda_targets

log = logging.getLogger(__name__)


class TrainerAbort(RuntimeError):
    """Training stopped on a non-finite loss or a diverging value function."""


@dataclass
class ShacConfig:
    horizon: int = 16
    gamma: float = 0.99
    lam: float = 0.95
    policy_lr: float = 1e-3
    value_lr: float = 1e-3
    value_epochs: int = 16
    value_minibatches: int = 4
    env_count: int = 64
    grad_clip: float | None = 1.0
    init_log_std: float = -1.0
    policy_hidden: tuple = (64,)
    value_hidden: tuple = (64, 64)
    activation: str = "elu"
    layer_norm: bool = True
    variance_scale: float = 0.1
    # initial scale of the policy output layer; residual policies always start at zero
    policy_init_scale: float = 0.01
    value_divergence: float = 1e6

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in [0, 1]")
        if self.env_count < 1:
            raise ValueError("env_count must be >= 1")


@dataclass
class WindowRecord:
    """Detached per-step data from one window, shaped ``(horizon, n, ...)``."""

    obs: np.ndarray
    raw_obs: np.ndarray
    next_obs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    collided: np.ndarray
    speed_error: np.ndarray
    finished: list = field(default_factory=list)


def window_loss(env: NavEnv, policy: GaussianPolicy, horizon: int, gamma: float,
                tape: Tape | None, rng: np.random.Generator | None = None,
                value: ValueNet | None = None, deterministic: bool = False):
    """Negative mean (over envs) discounted return of one window.

    Returns ``(loss, record)``. The value net, when given, enters with
    constant parameters: bootstrap terms are differentiable only through the
    observation of the state they evaluate.
    """
    n = env.n
    disc = np.ones(n)
    total = Tensor(np.zeros(n))
    obs_l, raw_l, next_l, rew_l, done_l, col_l, spd_l = [], [], [], [], [], [], []
    for t in range(horizon):
        obs_l.append(env.obs.data)
        raw_l.append(env.raw_obs)
        if deterministic:
            a = policy.mean(env.obs, env.raw_obs_t, tape)
        else:
            a = policy.sample(env.obs, env.raw_obs_t, tape, rng)
        res = env.step(a, tape)
        pre = res.terminal_obs if res.terminal_obs is not None else res.obs
        total = total + disc * res.reward
        if value is not None:
            boot = ~res.collided if t == horizon - 1 else res.truncated
            if boot.any():
                total = total + (gamma * disc * boot) * value(pre)
        disc = np.where(res.done, 1.0, disc * gamma)
        next_l.append(pre.data)
        rew_l.append(res.reward.data)
        done_l.append(res.done)
        col_l.append(res.collided)
        spd_l.append(res.speed_error)
    loss = -ops.mean(total)
    rec = WindowRecord(np.array(obs_l), np.array(raw_l), np.array(next_l), np.array(rew_l),
                       np.array(done_l), np.array(col_l), np.array(spd_l))
    return loss, rec


class FopgTrainer:
    """Truncated BPTT (``value=None``) or SHAC over a live ``NavEnv``."""

    def __init__(self, env: NavEnv, policy: GaussianPolicy, cfg: ShacConfig,
                 value: ValueNet | None = None, seed: int = 0):
        self.env = env
        self.policy = policy
        self.cfg = cfg
        self.value = value
        self.rng = np.random.default_rng([int(seed), 101])
        self.opt = Adam(policy.net.params, lr=cfg.policy_lr)
        self.value_opt = Adam(value.params, lr=cfg.value_lr) if value is not None else None
        self.iteration = 0
        self.env_steps = 0
        self.last_return = float("nan")
        self.last_collision_rate = float("nan")

    @property
    def algorithm(self) -> str:
        return "shac" if self.value is not None else "bptt"

    def step(self) -> dict:
        cfg = self.cfg
        t0 = time.perf_counter()
        target = self.value.copy() if self.value is not None else None
        tape = Tape()
        try:
            loss, rec = window_loss(self.env, self.policy, cfg.horizon, cfg.gamma, tape,
                                    self.rng, target)
        except NonFiniteError as e:
            raise TrainerAbort(f"{self.algorithm} window {self.iteration}: forward pass: {e}") from e
        try:
            grads = backward(tape, loss)
        except NonFiniteError as e:
            bad = np.flatnonzero(~np.isfinite(rec.rewards).all(axis=0))
            raise TrainerAbort(f"{self.algorithm} window {self.iteration}: {e}; "
                               f"envs with bad rewards: {bad.tolist()}") from e
        grads = {k: g for k, g in grads.items() if k in self.policy.params}
        grads, gnorm = clip_grad_norm(grads, cfg.grad_clip)
        self.opt.step(grads)

        value_loss = float("nan")
        if self.value is not None:
            value_loss = self._fit_value(target, rec)

        self.env.obs_norm.update(rec.raw_obs.reshape(-1, rec.raw_obs.shape[-1]))
        self.env.detach()
        self.iteration += 1
        self.env_steps += cfg.horizon * self.env.n

        finished = self.env.pop_finished()
        if finished:
            self.last_return = float(np.mean([f["return"] for f in finished]))
            self.last_collision_rate = float(np.mean([f["collided"] for f in finished]))
        return {
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "episode_return": self.last_return,
            "collision_rate": self.last_collision_rate,
            "tracking_error": float(rec.speed_error.mean()),
            "grad_norm": gnorm,
            "loss": float(loss.data),
            "value_loss": value_loss,
            "wall_clock": time.perf_counter() - t0,
        }

    def _fit_value(self, target: ValueNet, rec: WindowRecord) -> float:
        cfg = self.cfg
        h, n = rec.rewards.shape
        nv = target.predict(rec.next_obs.reshape(h * n, -1)).reshape(h, n)
        nv = np.where(rec.collided, 0.0, nv)
        targets = td_lambda_targets(rec.rewards, nv, rec.dones, cfg.gamma, cfg.lam).reshape(-1)
        obs = rec.obs.reshape(h * n, -1)
        m = h * n
        mb = max(1, m // cfg.value_minibatches)
        last = float("nan")
        for _ in range(cfg.value_epochs):
            perm = self.rng.permutation(m)
            for k in range(cfg.value_minibatches):
                idx = perm[k * mb:(k + 1) * mb]
                tape = Tape()
                pred = self.value(Tensor(obs[idx]), tape)
                err = pred - targets[idx]
                vl = ops.mean(err * err)
                last = float(vl.data)
                if last > cfg.value_divergence:
                    raise TrainerAbort(f"value loss diverged ({last:.3g}) at iteration "
                                       f"{self.iteration}")
                g = backward(tape, vl)
                g, _ = clip_grad_norm(g, cfg.grad_clip)
                self.value_opt.step(g)
        return last


def bptt_iteration(trainer: FopgTrainer) -> dict:
    if trainer.value is not None:
        raise ValueError("bptt trainer must not carry a value network")
    return trainer.step()


def shac_iteration(trainer: FopgTrainer) -> dict:
    if trainer.value is None:
        raise ValueError("shac trainer needs a value network")
    return trainer.step()
