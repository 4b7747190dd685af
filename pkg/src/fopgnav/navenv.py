"""Local-navigation task on the point mass.

The robot tracks a body-frame forward velocity while a depth camera shows it
circular obstacles ahead. Collisions are penalized at a virtual nose
projected ahead of the body; episodes terminate only when the body itself
touches an obstacle, so the nose shapes the reward without ending episodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from . import dynamics as dyn
from .diffcore import ops
from .diffcore.tensor import Tape, Tensor
from .dynamics import ActionCmd, BodyState, DynParams
from .renderer import (CameraModel, FieldBatch, ObstacleField, RenderDiagnostics, normalize_depth,
                       render_depth_diff)

OBS_DEPTH = 192
OBS_DIM = OBS_DEPTH + 2
TRACK_WIDTH = 0.25
NORM_CLIP = 5.0


class SceneSamplingError(RuntimeError):
    """Obstacle placement exceeded the retry bound; the config is too dense."""


@dataclass(frozen=True)
class NavConfig:
    target_speed: float = 1.0
    episode_length: int = 200
    obstacle_count: tuple[int, int] = (4, 12)
    obstacle_radius: tuple[float, float] = (0.3, 1.0)
    annulus: tuple[float, float] = (2.0, 12.0)
    annulus_half_angle: float = np.deg2rad(40.0)
    spawn_protection: float = 2.0
    collision_radius: float = 0.5
    nose_length: float = 1.0
    ema_alpha: float = 0.2
    w_track: float = 1.0
    w_collide: float = 5.0
    w_effort: float = 0.005
    w_heading_rate: float = 0.05
    collide_sharpness: float = 10.0
    depth_noise: float = 0.0
    depth_features: str = "inverse"
    min_noisy_depth: float = 0.05
    max_placement_tries: int = 1000
    dyn: DynParams = field(default_factory=DynParams)
    cam: CameraModel = field(default_factory=CameraModel)

    def __post_init__(self):
        for w in ("w_track", "w_collide", "w_effort", "w_heading_rate"):
            if getattr(self, w) < 0:
                raise ValueError(f"{w} must be nonnegative")
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must lie in (0, 1]")
        if self.target_speed <= 0:
            raise ValueError("target_speed must be positive")
        if self.nose_length < 0 or self.collision_radius <= 0:
            raise ValueError("bad nose_length or collision_radius")
        lo, hi = self.obstacle_count
        if lo < 0 or hi < lo:
            raise ValueError("bad obstacle_count range")
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        if self.depth_features not in ("metric", "inverse"):
            raise ValueError("depth_features must be 'metric' or 'inverse'")
        if self.depth_noise < 0:
            raise ValueError("depth_noise must be nonnegative")

    def replace(self, **kw) -> NavConfig:
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return NavConfig(**vals)


# ---------------------------------------------------------------- smoothing and normalization

@dataclass
class EmaState:
    y: Tensor

    @classmethod
    def zeros(cls, n: int) -> EmaState:
        return cls(Tensor(np.zeros((n, 2))))


def ema_update(state: EmaState, v, alpha: float) -> EmaState:
    """``y <- alpha * v + (1 - alpha) * y``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    return EmaState(alpha * v + (1.0 - alpha) * state.y)


class RunningNorm:
    """Per-feature running mean and variance (parallel-merge update)."""

    def __init__(self, dim: int, eps: float = 1e-8, clip: float = NORM_CLIP):
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
        self.eps = eps
        self.clip = clip
        self.frozen = False

    @property
    def var(self) -> np.ndarray:
        return self.m2 / self.count if self.count > 0 else np.ones_like(self.mean)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var + self.eps)

    def update(self, batch: np.ndarray) -> None:
        if self.frozen:
            return
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.mean.shape[0])
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        tot = self.count + n
        delta = b_mean - self.mean
        self.mean = self.mean + delta * (n / tot)
        self.m2 = self.m2 + b_m2 + delta * delta * (self.count * n / tot)
        self.count = tot

    def normalize(self, x):
        out = (x - self.mean) / self.std
        if isinstance(out, Tensor):
            return ops.clip(out, -self.clip, self.clip)
        return np.clip(out, -self.clip, self.clip)

    def state_dict(self, prefix: str = "obsnorm/") -> dict[str, np.ndarray]:
        return {prefix + "count": np.array([self.count]), prefix + "mean": self.mean.copy(),
                prefix + "m2": self.m2.copy()}

    def load_state_dict(self, d: dict[str, np.ndarray], prefix: str = "obsnorm/") -> None:
        self.count = float(d[prefix + "count"][0])
        self.mean = np.array(d[prefix + "mean"], dtype=np.float64)
        self.m2 = np.array(d[prefix + "m2"], dtype=np.float64)

    def copy(self) -> RunningNorm:
        other = RunningNorm(self.mean.shape[0], self.eps, self.clip)
        other.count, other.mean, other.m2 = self.count, self.mean.copy(), self.m2.copy()
        other.frozen = self.frozen
        return other


# ---------------------------------------------------------------- episodes

def sample_field(rng: np.random.Generator, cfg: NavConfig, heading: float) -> ObstacleField:
    """Obstacles in an annular sector ahead of a robot at the origin."""
    lo, hi = cfg.obstacle_count
    count = int(rng.integers(lo, hi + 1))
    centers, radii = [], []
    r_in, r_out = cfg.annulus
    for _ in range(count):
        for _attempt in range(cfg.max_placement_tries):
            rad = rng.uniform(*cfg.obstacle_radius)
            # area-uniform radial distance
            dist = np.sqrt(rng.uniform(r_in * r_in, r_out * r_out))
            ang = heading + rng.uniform(-cfg.annulus_half_angle, cfg.annulus_half_angle)
            c = np.array([dist * np.cos(ang), dist * np.sin(ang)])
            if np.hypot(*c) < cfg.spawn_protection + rad:
                continue
            if any(np.hypot(*(c - c2)) < rad + r2 for c2, r2 in zip(centers, radii)):
                continue
            centers.append(c)
            radii.append(rad)
            break
        else:
            raise SceneSamplingError(
                f"could not place obstacle {len(centers) + 1}/{count} in "
                f"{cfg.max_placement_tries} tries")
    return ObstacleField(np.array(centers).reshape(-1, 2), np.array(radii))


def reset(seed, cfg: NavConfig = NavConfig()):
    """Fresh episode: robot at rest at the origin with a uniform heading."""
    rng = np.random.default_rng(seed)
    heading = rng.uniform(-np.pi, np.pi)
    f = sample_field(rng, cfg, heading)
    return BodyState.make(0.0, 0.0, heading), f, EmaState.zeros(1)


def episode_seed(base_seed: int, env_index: int, episode_index: int) -> list[int]:
    return [int(base_seed), int(env_index), int(episode_index)]


# ---------------------------------------------------------------- reward

def _obstacle_dist(px, py, fb: FieldBatch):
    dx = ops.reshape(px, (-1, 1)) - fb.centers[:, :, 0]
    dy = ops.reshape(py, (-1, 1)) - fb.centers[:, :, 1]
    # smooth at the center so the penalty gradient stays finite
    return ops.sqrt(dx * dx + dy * dy + 1e-12)


def collision_penalty(nose_x, nose_y, fb: FieldBatch, cfg: NavConfig) -> Tensor:
    """Sum over circles of ``softplus(k * (collision_radius + radius - dist))``."""
    dist = _obstacle_dist(nose_x, nose_y, fb)
    depth = (cfg.collision_radius + fb.radii) - dist
    pen = ops.softplus(cfg.collide_sharpness * depth) * fb.mask.astype(np.float64)
    return ops.tsum(pen, axis=-1)


def reward(state: BodyState, action: ActionCmd, prev_action: ActionCmd, nose_point,
           field_: FieldBatch, cfg: NavConfig) -> Tensor:
    """Per-env reward ``(n,)``: tracking bonus minus nose-collision, action-rate and yaw-rate costs."""
    err = state.v - cfg.target_speed
    r = cfg.w_track * ops.exp(err * err * (-1.0 / TRACK_WIDTH))
    if cfg.w_collide:
        r = r - cfg.w_collide * collision_penalty(nose_point[0], nose_point[1], field_, cfg)
    if cfg.w_effort:
        du = action.forward_velocity - prev_action.forward_velocity
        dw = action.yaw_rate - prev_action.yaw_rate
        r = r - cfg.w_effort * (du * du + dw * dw)
    if cfg.w_heading_rate:
        r = r - cfg.w_heading_rate * ops.square(state.omega)
    return r


def body_collision(state: BodyState, fb: FieldBatch, cfg: NavConfig) -> np.ndarray:
    d = np.hypot(state.x.data[:, None] - fb.centers[:, :, 0],
                 state.y.data[:, None] - fb.centers[:, :, 1])
    return ((d < cfg.collision_radius + fb.radii) & fb.mask).any(axis=-1)


# ---------------------------------------------------------------- vectorized environment

@dataclass
class StepResult:
    obs: Tensor
    reward: Tensor
    done: np.ndarray
    collided: np.ndarray
    truncated: np.ndarray
    terminal_obs: Tensor | None
    raw_obs: np.ndarray
    speed_error: np.ndarray


class NavEnv:
    """``n`` independent navigation episodes stepped in lockstep.

    Each env resets from a seed derived from ``(seed, env index, episode
    index)`` so scene sequences are reproducible per env slot. With
    ``scenes`` given, env ``i`` starts from ``scenes[i]`` (a field and a
    heading) and ``auto_reset`` should be off for one-episode evaluation.
    """

    def __init__(self, cfg: NavConfig, n: int, seed: int = 0, render_grad: str = "none",
                 clip_norm: float = 1.0, obs_norm: RunningNorm | None = None,
                 scenes: list[tuple[ObstacleField, float]] | None = None,
                 auto_reset: bool = True, noise_seed: int | None = None):
        self.cfg = cfg
        self.n = n
        self.seed = seed
        self.render_grad = render_grad
        self.clip_norm = clip_norm
        self.obs_norm = obs_norm if obs_norm is not None else RunningNorm(OBS_DIM)
        self.auto_reset = auto_reset
        self.diagnostics = RenderDiagnostics()
        self.noise_rng = np.random.default_rng([int(seed), 7919] if noise_seed is None
                                               else noise_seed)
        self.episode_index = np.zeros(n, dtype=np.int64)
        self.t = np.zeros(n, dtype=np.int64)
        self.finished: list[dict] = []
        self.ep_return = np.zeros(n)
        self.alive = np.ones(n, dtype=bool)

        if scenes is not None:
            if len(scenes) != n:
                raise ValueError("need one scene per env")
            fields_ = [f for f, _ in scenes]
            heading = np.array([h for _, h in scenes], dtype=np.float64)
        else:
            fields_, heading = [], np.zeros(n)
            for i in range(n):
                st, f, _ = reset(episode_seed(seed, i, 0), cfg)
                fields_.append(f)
                heading[i] = st.heading.data[0]
        self.fields = FieldBatch.stack(fields_)
        self.state = BodyState.make(np.zeros(n), np.zeros(n), heading)
        self.ema = EmaState.zeros(n)
        self.prev_action = ActionCmd(Tensor(np.zeros(n)), Tensor(np.zeros(n)))
        self.raw_obs = self._observe(self.state, self.ema, None).data
        self.raw_obs_t = Tensor(self.raw_obs)
        self.obs = Tensor(self.obs_norm.normalize(self.raw_obs))

    # observations
    def _observe(self, state: BodyState, ema: EmaState, tape: Tape | None) -> Tensor:
        cfg = self.cfg
        depth = render_depth_diff(state, self.fields, cfg.cam, self.render_grad, self.clip_norm,
                                  tape, self.diagnostics)
        if cfg.depth_noise > 0:
            noise = self.noise_rng.normal(0.0, cfg.depth_noise, size=depth.shape)
            # floor only: an upper clip would bias the noise at empty pixels
            noisy = np.maximum(depth.data + noise, cfg.min_noisy_depth)
            depth = depth + (noisy - depth.data)
        feats = depth if cfg.depth_features == "metric" else normalize_depth(depth, cfg.cam.max_range)
        return ops.concat([feats, ema.y], axis=-1)

    def detach(self) -> None:
        """Cut gradient flow from everything carried into the next window."""
        self.state = self.state.detach()
        self.ema = EmaState(self.ema.y.detach())
        self.prev_action = ActionCmd(self.prev_action.forward_velocity.detach(),
                                     self.prev_action.yaw_rate.detach())
        self.raw_obs_t = Tensor(self.raw_obs)
        # statistics may have moved since these were computed
        self.obs = Tensor(self.obs_norm.normalize(self.raw_obs))

    def step(self, raw_action, tape: Tape | None = None) -> StepResult:
        """Apply raw (pre-squash) actions ``(n, 2)``; auto-resets finished envs."""
        cfg = self.cfg
        raw = raw_action if isinstance(raw_action, Tensor) else Tensor(raw_action)
        action = dyn.squash(ActionCmd.from_array(raw), cfg.dyn)
        state = dyn.step(self.state, action, cfg.dyn, tape)
        nose = dyn.nose_position(state, cfg.nose_length)
        r = reward(state, action, self.prev_action, nose, self.fields, cfg)
        ema = ema_update(self.ema, ops.stack([state.v, state.omega], axis=-1), cfg.ema_alpha)
        raw_obs = self._observe(state, ema, tape)
        obs = self.obs_norm.normalize(raw_obs)

        self.t += 1
        collided = body_collision(state, self.fields, cfg)
        truncated = (self.t >= cfg.episode_length) & ~collided
        done = collided | truncated
        speed_err = np.abs(state.v.data - cfg.target_speed)

        self.ep_return += np.where(self.alive, r.data, 0.0)
        terminal_obs = None
        if done.any():
            terminal_obs = obs
            for i in np.flatnonzero(done & self.alive):
                self.finished.append({"env": int(i), "return": float(self.ep_return[i]),
                                      "collided": bool(collided[i]), "length": int(self.t[i])})
            if self.auto_reset:
                state, ema, action, obs, raw_obs = self._reset_envs(done, state, ema, action,
                                                                    obs, raw_obs)
            else:
                self.alive &= ~done

        self.state, self.ema, self.prev_action = state, ema, action
        self.raw_obs, self.raw_obs_t, self.obs = raw_obs.data, raw_obs, obs
        return StepResult(obs, r, done, collided, truncated, terminal_obs, raw_obs.data, speed_err)

    def _reset_envs(self, done, state, ema, action, obs, raw_obs):
        cfg = self.cfg
        n = self.n
        heading = state.heading.data.copy()
        for i in np.flatnonzero(done):
            self.episode_index[i] += 1
            st, f, _ = reset(episode_seed(self.seed, i, self.episode_index[i]), cfg)
            self.fields.replace(i, f)
            heading[i] = st.heading.data[0]
            self.t[i] = 0
            self.ep_return[i] = 0.0
        fresh = BodyState.make(np.zeros(n), np.zeros(n), heading)
        state = state.select(done, fresh)
        ema = EmaState(ops.where(done[:, None], np.zeros((n, 2)), ema.y))
        zeros = np.zeros(n)
        action = ActionCmd(ops.where(done, zeros, action.forward_velocity),
                           ops.where(done, zeros, action.yaw_rate))
        # fresh envs observe their new scene; the rest keep their taped observation
        fresh_raw = self._observe(state.detach(), EmaState(ema.y.detach()), None)
        raw_obs = ops.where(done[:, None], fresh_raw.data, raw_obs)
        obs = ops.where(done[:, None], self.obs_norm.normalize(fresh_raw.data), obs)
        return state, ema, action, obs, raw_obs

    def pop_finished(self) -> list[dict]:
        out, self.finished = self.finished, []
        return out


# ---------------------------------------------------------------- anchor and rollouts

def anchor_policy(obs, cfg: NavConfig = NavConfig()) -> np.ndarray:
    """Blind straight-ahead controller: ``(target_speed, 0)`` for every observation."""
    obs = obs.data if isinstance(obs, Tensor) else np.asarray(obs)
    n = obs.shape[0] if obs.ndim > 1 else 1
    out = np.zeros((n, 2))
    out[:, 0] = cfg.target_speed
    return out


@dataclass
class Trajectory:
    states: list[BodyState]
    obs: list[Tensor]
    actions: list[Tensor]
    rewards: list[Tensor]
    dones: list[np.ndarray]
    tape: Tape | None
    final_state: BodyState

    def total_reward(self) -> Tensor:
        tot = self.rewards[0]
        for r in self.rewards[1:]:
            tot = tot + r
        return tot

    def detached_final(self) -> BodyState:
        return self.final_state.detach()


def rollout(env: NavEnv, policy: Callable[[Tensor, Tensor], Tensor], horizon: int,
            tape: Tape | None = None) -> Trajectory:
    """Run ``horizon`` steps of ``policy(obs, raw_obs) -> raw action`` on ``env``.

    Starts from the env's current state; the returned trajectory keeps the
    tape so the summed reward can be backpropagated to policy parameters.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    states, obs_l, acts, rews, dones = [], [], [], [], []
    for _ in range(horizon):
        obs_l.append(env.obs)
        a = policy(env.obs, env.raw_obs_t)
        res = env.step(a, tape)
        acts.append(a)
        rews.append(res.reward)
        dones.append(res.done)
        states.append(env.state)
    return Trajectory(states, obs_l, acts, rews, dones, tape, env.state)
