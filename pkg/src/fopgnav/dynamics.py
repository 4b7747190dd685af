"""Planar differential-drive point mass with a low-level velocity controller.

States are batched: every field of :class:`BodyState` is a Tensor of shape
``(n_envs,)``. Operations work identically on taped and constant tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .diffcore import ops
from .diffcore.tensor import NonFiniteError, Tape, Tensor


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass
class BodyState:
    x: Tensor
    y: Tensor
    heading: Tensor
    v: Tensor
    omega: Tensor

    @classmethod
    def make(cls, x, y, heading, v=0.0, omega=0.0) -> BodyState:
        arrs = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, dtype=np.float64))
                                     for a in (x, y, heading, v, omega)))
        return cls(*(Tensor(a.copy()) for a in arrs))

    @classmethod
    def at_rest(cls, n: int, heading=0.0) -> BodyState:
        return cls.make(np.zeros(n), np.zeros(n), heading)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def position(self) -> np.ndarray:
        return np.stack([self.x.data, self.y.data], axis=-1)

    @property
    def wrapped_heading(self) -> np.ndarray:
        return wrap_angle(self.heading.data)

    def detach(self) -> BodyState:
        return BodyState(*(getattr(self, f.name).detach() for f in fields(self)))

    def numpy(self) -> np.ndarray:
        """``(n, 5)`` array of x, y, heading, v, omega."""
        return np.stack([getattr(self, f.name).data for f in fields(self)], axis=-1)

    @classmethod
    def from_numpy(cls, arr) -> BodyState:
        arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
        return cls(*(Tensor(arr[:, i].copy()) for i in range(5)))

    def select(self, mask, other: BodyState) -> BodyState:
        """Take ``other`` where ``mask`` is true (gradient-free for those envs)."""
        return BodyState(*(ops.where(mask, getattr(other, f.name), getattr(self, f.name))
                           for f in fields(self)))


@dataclass
class ActionCmd:
    forward_velocity: Tensor
    yaw_rate: Tensor

    @classmethod
    def from_array(cls, a) -> ActionCmd:
        """Split an ``(n, 2)`` Tensor or array into components."""
        a = a if isinstance(a, Tensor) else Tensor(np.atleast_2d(a))
        return cls(a[:, 0], a[:, 1])

    def stacked(self) -> Tensor:
        return ops.stack([self.forward_velocity, self.yaw_rate], axis=-1)


@dataclass(frozen=True)
class DynParams:
    dt: float = 0.05
    velocity_gain: float = 5.0
    yaw_gain: float = 5.0
    max_accel: float = 4.0
    max_yaw_accel: float = 4.0
    max_velocity: float = 2.0
    max_yaw_rate: float = 2.0

    def __post_init__(self):
        for name in ("dt", "velocity_gain", "yaw_gain", "max_accel", "max_yaw_accel",
                     "max_velocity", "max_yaw_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def squash(action: ActionCmd, params: DynParams) -> ActionCmd:
    """Smoothly bound raw commands to the velocity limits."""
    return ActionCmd(ops.softclip(action.forward_velocity, params.max_velocity),
                     ops.softclip(action.yaw_rate, params.max_yaw_rate))


def step(state: BodyState, action: ActionCmd, params: DynParams,
         tape: Tape | None = None) -> BodyState:
    """Semi-implicit Euler step; ``action`` must already be squashed.

    Velocities are updated first from the softly clamped controller
    accelerations, then the pose integrates the new velocities along the new
    heading. Recording happens implicitly on whatever tape the inputs carry.
    """
    dt = params.dt
    acc_v = ops.softclip(params.velocity_gain * (action.forward_velocity - state.v), params.max_accel)
    acc_w = ops.softclip(params.yaw_gain * (action.yaw_rate - state.omega), params.max_yaw_accel)
    v = state.v + dt * acc_v
    omega = state.omega + dt * acc_w
    heading = state.heading + dt * omega
    x = state.x + dt * (v * ops.cos(heading))
    y = state.y + dt * (v * ops.sin(heading))
    out = BodyState(x, y, heading, v, omega)
    for f in fields(out):
        if not np.isfinite(getattr(out, f.name).data).all():
            raise NonFiniteError(f"non-finite {f.name} after step; check dt and gains")
    return out


def nose_position(state: BodyState, nose_length: float):
    """Point ``nose_length`` ahead of the body along its heading."""
    if nose_length < 0:
        raise ValueError("nose_length must be nonnegative")
    if nose_length == 0:
        return state.x, state.y
    return (state.x + nose_length * ops.cos(state.heading),
            state.y + nose_length * ops.sin(state.heading))
