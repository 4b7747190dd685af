"""Policies, anchors and the value network."""

from __future__ import annotations

import numpy as np

from ..diffcore import Mlp, ops, params_checksum
from ..diffcore.tensor import Tape, Tensor
from ..dynamics import ActionCmd
from ..navenv import OBS_DEPTH, OBS_DIM, NavConfig

LOG_2PI = float(np.log(2.0 * np.pi))


class HandAnchor:
    """Blind straight-ahead controller, constant ``(target_speed, 0)``."""

    params: dict[str, np.ndarray] = {}

    def __init__(self, target_speed: float = 1.0):
        self.target_speed = float(target_speed)

    def __call__(self, raw_obs) -> Tensor:
        n = raw_obs.shape[0]
        out = np.zeros((n, 2))
        out[:, 0] = self.target_speed
        return Tensor(out)

    def checksum(self) -> str:
        return params_checksum({"target_speed": np.array([self.target_speed])})


class NetAnchor:
    """Frozen network reading the raw smoothed-velocity slice of the observation."""

    def __init__(self, net: Mlp):
        if net.in_dim != OBS_DIM - OBS_DEPTH:
            raise ValueError("anchor network must take the 2 velocity features")
        self.net = net

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.net.params

    def __call__(self, raw_obs) -> Tensor:
        raw = raw_obs if isinstance(raw_obs, Tensor) else Tensor(raw_obs)
        # constants: never recorded as leaves, so no optimizer can reach them
        return self.net.forward(raw[:, OBS_DEPTH:], tape=None)

    def checksum(self) -> str:
        return self.net.checksum()


def rpl_compose(anchor_out, residual_out):
    """Anchor action plus residual, component-wise; squashing happens in the env."""
    if isinstance(anchor_out, ActionCmd):
        return ActionCmd(anchor_out.forward_velocity + residual_out.forward_velocity,
                         anchor_out.yaw_rate + residual_out.yaw_rate)
    return anchor_out + residual_out


class GaussianPolicy:
    """Diagonal Gaussian over raw (pre-squash) actions.

    The mean comes from ``net``; the log standard deviation is a free
    parameter. With an ``anchor`` the policy is residual: the network also
    sees the anchor action and its output is added to it, and the sampling
    standard deviation is multiplied by ``variance_scale``.
    """

    def __init__(self, hidden=(), activation="elu", layer_norm=False, init_log_std=-1.0,
                 anchor=None, variance_scale=1.0, final_layer_scale=None, seed=0,
                 prefix="policy/"):
        self.anchor = anchor
        in_dim = OBS_DIM + (2 if anchor is not None else 0)
        if final_layer_scale is None:
            final_layer_scale = 0.0 if anchor is not None else 1.0
        self.net = Mlp([in_dim, *hidden, 2], activation, layer_norm, final_layer_scale,
                       seed=seed, prefix=prefix)
        self.prefix = prefix
        self.net.params[prefix + "log_std"] = np.full(2, float(init_log_std))
        self.variance_scale = float(variance_scale)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.net.params

    def _bind_log_std(self, tape: Tape | None) -> Tensor:
        key = self.prefix + "log_std"
        return tape.watch(self.params[key], key) if tape is not None else Tensor(self.params[key])

    def mean(self, obs, raw_obs=None, tape: Tape | None = None) -> Tensor:
        obs = obs if isinstance(obs, Tensor) else Tensor(obs)
        if self.anchor is None:
            return self.net.forward(obs, tape)
        if raw_obs is None:
            raise ValueError("residual policy needs raw observations for its anchor")
        a = self.anchor(raw_obs)
        delta = self.net.forward(ops.concat([obs, a], axis=-1), tape)
        return rpl_compose(a, delta)

    def std(self, tape: Tape | None = None) -> Tensor:
        return ops.exp(self._bind_log_std(tape)) * self.variance_scale

    def sample(self, obs, raw_obs, tape: Tape | None, rng: np.random.Generator) -> Tensor:
        """Reparameterized sample ``mean + std * eps``."""
        mu = self.mean(obs, raw_obs, tape)
        eps = rng.standard_normal(mu.shape)
        return mu + self.std(tape) * eps

    def log_prob(self, obs, raw_obs, actions, tape: Tape | None = None) -> Tensor:
        mu = self.mean(obs, raw_obs, tape)
        log_std = self._bind_log_std(tape) + float(np.log(self.variance_scale))
        z = (actions - mu) * ops.exp(-log_std)
        return ops.tsum(-0.5 * ops.square(z) - log_std - 0.5 * LOG_2PI, axis=-1)

    def entropy(self, tape: Tape | None = None) -> Tensor:
        log_std = self._bind_log_std(tape) + float(np.log(self.variance_scale))
        return ops.tsum(log_std + 0.5 * (LOG_2PI + 1.0))

    def act_deterministic(self, obs, raw_obs) -> np.ndarray:
        return self.mean(obs, raw_obs).data

    def state_dict(self) -> dict[str, np.ndarray]:
        d = {k: v.copy() for k, v in self.params.items()}
        if isinstance(self.anchor, NetAnchor):
            d.update({"anchor/" + k: v.copy() for k, v in self.anchor.params.items()})
        elif isinstance(self.anchor, HandAnchor):
            d["anchor/target_speed"] = np.array([self.anchor.target_speed])
        return d


class ValueNet:
    """Observation to scalar value estimate."""

    def __init__(self, hidden=(64, 64), activation="elu", layer_norm=True, seed=0,
                 prefix="value/"):
        self.net = Mlp([OBS_DIM, *hidden, 1], activation, layer_norm, 1.0, seed=seed,
                       prefix=prefix)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.net.params

    def __call__(self, obs, tape: Tape | None = None) -> Tensor:
        out = self.net.forward(obs, tape)
        return ops.reshape(out, (-1,))

    def predict(self, obs: np.ndarray) -> np.ndarray:
        return self(Tensor(obs)).data

    def copy(self) -> ValueNet:
        other = object.__new__(ValueNet)
        other.net = self.net.copy()
        return other


def make_anchor(kind: str, cfg: NavConfig, params: dict | None = None):
    if kind == "hand":
        return HandAnchor(cfg.target_speed)
    if kind == "net":
        net = Mlp([2, 32, 2], "tanh", False, 0.1, seed=0, prefix="")
        if params is not None:
            for k in net.params:
                net.params[k] = np.array(params[k], dtype=np.float64)
        return NetAnchor(net)
    raise ValueError(f"unknown anchor kind {kind!r}")
