"""Adam and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: np.ndarray, **kw) -> AdamState:
        return cls(np.zeros_like(params, dtype=np.float64),
                   np.zeros_like(params, dtype=np.float64), **kw)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not (params.shape == grads.shape == state.first_moment.shape == state.second_moment.shape):
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, "
                         f"moments {state.first_moment.shape}")
    if not np.isfinite(grads).all():
        raise NonFiniteError("non-finite gradient passed to adam_step")
    b1, b2 = state.beta1, state.beta2
    t = state.step_count + 1
    m = b1 * state.first_moment + (1.0 - b1) * grads
    v = b2 * state.second_moment + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new, AdamState(m, v, t, b1, b2, state.epsilon)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float | None):
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns ``(clipped, pre_clip_norm)``. ``max_norm=None`` disables clipping.
    """
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NonFiniteError("non-finite gradient norm")
    if max_norm is None or norm <= max_norm:
        return dict(grads), norm
    s = max_norm / (norm + 1e-12)
    return {k: g * s for k, g in grads.items()}, norm


@dataclass
class Adam:
    """Adam over a named parameter dict, updated in place."""

    params: dict[str, np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for k, p in self.params.items():
            self.states[k] = AdamState.zeros_like(p, beta1=self.beta1, beta2=self.beta2,
                                                  epsilon=self.epsilon)

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        # sorted for a fixed update order
        for k in sorted(self.params):
            if k not in grads:
                continue
            new, self.states[k] = adam_step(self.params[k], grads[k], self.states[k], lr)
            self.params[k][...] = new

    @property
    def step_count(self) -> int:
        return max((s.step_count for s in self.states.values()), default=0)
