"""Fitting a small frozen anchor network to a hand-coded velocity tracker."""

from __future__ import annotations

import numpy as np

from ..diffcore import Adam, Mlp, backward, clip_grad_norm, ops
from ..diffcore.tensor import Tape, Tensor
from ..navenv import OBS_DEPTH, NavConfig, NavEnv
from .policy import NetAnchor


class AnchorFitError(RuntimeError):
    """Imitation did not reach the deviation target within the iteration budget."""


def _reference_actions(reference, raw_obs) -> np.ndarray:
    out = reference(raw_obs)
    return out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)


def anchor_deviation(anchor: NetAnchor, reference, raw_obs: np.ndarray) -> float:
    """Mean absolute action difference over a batch of raw observations."""
    return float(np.mean(np.abs(anchor(raw_obs).data - _reference_actions(reference, raw_obs))))


def train_anchor(reference, cfg: NavConfig = NavConfig(), env_count: int = 32,
                 horizon: int = 40, lr: float = 3e-3, max_iterations: int = 400,
                 tolerance: float = 0.025, explore_std: float = 0.3,
                 seed: int = 0) -> NetAnchor:
    """BPTT imitation of ``reference`` in an empty field.

    The student drives the robot, so the states it is scored on are the ones
    it visits, widened by Gaussian exploration noise on the executed action.
    The squared action error is backpropagated through dynamics and velocity
    smoothing. Stops once the mean absolute deviation over a
    window drops below ``tolerance``.
    """
    if isinstance(reference, NetAnchor):
        net = reference.net.copy()
    else:
        net = Mlp([2, 32, 2], "tanh", False, 0.1, seed=seed, prefix="")
    empty = cfg.replace(obstacle_count=(0, 0))
    opt = Adam(net.params, lr=lr)
    rng = np.random.default_rng([int(seed), 303])
    dev = [np.inf]
    for it in range(max_iterations):
        # every window starts from rest so the spin-up transient is covered
        env = NavEnv(empty, env_count, seed=int(seed) * 100_003 + it)
        tape = Tape()
        loss = Tensor(0.0)
        dev = []
        for _ in range(horizon):
            raw = env.raw_obs_t
            target = _reference_actions(reference, env.raw_obs)
            a = net.forward(raw[:, OBS_DEPTH:], tape)
            err = a - target
            loss = loss + ops.mean(err * err)
            dev.append(np.abs(err.data).mean())
            env.step(a + explore_std * rng.standard_normal(a.shape), tape)
        if float(np.mean(dev)) < tolerance:
            return NetAnchor(net)
        grads = backward(tape, loss * (1.0 / horizon))
        grads, _ = clip_grad_norm(grads, 1.0)
        opt.step(grads)
    raise AnchorFitError(f"anchor imitation stalled at deviation {np.mean(dev):.4f} after "
                         f"{max_iterations} iterations")
