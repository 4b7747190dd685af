"""Differentiate a whole rollout with respect to the policy weights.

A short deterministic window is unrolled on the tape, the discounted return
is reverse-differentiated, and one weight's derivative is compared against
central differences. With ``render_grad="none"`` the depth image is treated
as a constant, so the tape gradient leaves out the path through the camera
and differs from the finite difference; ``"full"`` recovers it. Then the same reward is differentiated with respect to
the heading for two nose lengths, to show how the projected nose turns an
obstacle several meters ahead into a gradient now.

    python3 demos/01_gradient_through_a_rollout.py
"""

import numpy as np

from fopgnav.algos import GaussianPolicy
from fopgnav.algos.fopg import window_loss
from fopgnav.diffcore import Tape, Tensor, backward, ops
from fopgnav.dynamics import ActionCmd, BodyState, nose_position
from fopgnav.navenv import OBS_DIM, NavConfig, NavEnv, RunningNorm, reward
from fopgnav.renderer import FieldBatch, ObstacleField

cfg = NavConfig()
norm = RunningNorm(OBS_DIM)
norm.frozen = True
policy = GaussianPolicy(seed=0)


def loss_for(w, mode, tape=None):
    policy.params["policy/w0"] = w
    env = NavEnv(cfg, 4, seed=3, obs_norm=norm, render_grad=mode)
    return window_loss(env, policy, horizon=8, gamma=0.99, tape=tape, deterministic=True)[0]


w = policy.params["policy/w0"].copy()
eps = 1e-6
for mode in ("none", "full"):
    tape = Tape()
    grads = backward(tape, loss_for(w.copy(), mode, tape))["policy/w0"]
    i, j = 90, 0  # a depth-pixel weight
    wp, wm = w.copy(), w.copy()
    wp[i, j] += eps
    wm[i, j] -= eps
    fd = (loss_for(wp, mode).data - loss_for(wm, mode).data) / (2 * eps)
    print(f"render_grad={mode:>4}: d loss / d w0[{i},{j}] reverse mode {grads[i, j]:+.10f}, "
          f"central difference {float(fd):+.10f}")
policy.params["policy/w0"] = w

# an obstacle 3 m dead ahead: with the nose, turning away pays off immediately
field = FieldBatch.stack([ObstacleField.from_circles([((3.0, 0.4), 0.6)])])
zero = ActionCmd(Tensor(np.zeros(1)), Tensor(np.zeros(1)))
for length in (0.0, 1.0, 2.0):
    tape = Tape()
    s = BodyState(Tensor(np.zeros(1)), Tensor(np.zeros(1)), tape.watch(np.zeros(1), "heading"),
                  Tensor(np.ones(1)), Tensor(np.zeros(1)))
    r = reward(s, zero, zero, nose_position(s, length), field, cfg.replace(nose_length=length))
    g = backward(tape, ops.tsum(r))["heading"][0]
    print(f"nose {length:.1f} m: reward {r.data[0]:+.4f}, d reward / d heading {g:+.4f}")
