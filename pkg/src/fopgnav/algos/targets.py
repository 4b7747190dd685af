"""Return and advantage estimators over ``(time, env)`` arrays."""

from __future__ import annotations

import numpy as np


def td_lambda_targets(rewards, next_values, dones, gamma: float, lam: float) -> np.ndarray:
    """TD(lambda) value targets for one window.

    ``next_values[t]`` is the value of the state reached after step ``t``
    (already zero for terminal states, the bootstrap value for truncations).
    A done step does not continue into the following episode, and the last
    step of the window bootstraps from ``next_values[-1]``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    h = rewards.shape[0]
    out = np.zeros_like(rewards)
    g = next_values[-1]
    for t in reversed(range(h)):
        if t == h - 1:
            cont = next_values[t]
        else:
            cont = np.where(dones[t], next_values[t],
                            (1.0 - lam) * next_values[t] + lam * g)
        g = rewards[t] + gamma * cont
        out[t] = g
    return out


def gae(rewards, values, next_values, dones, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates.

    ``values[t]`` estimates the state at step ``t``; ``next_values[t]`` the
    state after it (zero when terminal). Episodes never leak across ``dones``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    deltas = rewards + gamma * next_values - values
    adv = np.zeros_like(rewards)
    acc = np.zeros_like(rewards[0])
    for t in reversed(range(rewards.shape[0])):
        acc = deltas[t] + gamma * lam * np.where(dones[t], 0.0, acc)
        adv[t] = acc
    return adv
