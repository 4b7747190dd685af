"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor, backward


class NondeterministicFunctionError(RuntimeError):
    pass


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f(np.ndarray) -> float``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Worst component-wise ``|a-b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def tape_grad(fn, x: np.ndarray):
    """Value and reverse-mode gradient of ``fn(Tensor) -> scalar Tensor`` at ``x``."""
    tape = Tape()
    xt = tape.watch(np.array(x, dtype=np.float64), "x")
    out = fn(xt)
    if out.data.size != 1:
        raise ValueError("function under test must be scalar-valued")
    grads = backward(tape, out, np.ones_like(out.data))
    return float(out.data.reshape(())), grads["x"]


def grad_check(fn, x, eps: float = 1e-6, floor: float = 1e-8) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn`` maps a Tensor to a scalar Tensor and must be deterministic; it is
    evaluated twice at ``x`` to confirm that before differencing.
    """
    x = np.asarray(x, dtype=np.float64)

    def value(z):
        return float(fn(Tensor(z)).data.reshape(()))

    v1, v2 = value(x), value(x)
    if v1 != v2:
        raise NondeterministicFunctionError(f"repeated evaluation differs: {v1!r} vs {v2!r}")
    _, g_rev = tape_grad(fn, x)
    g_num = numeric_grad(value, x, eps)
    return relative_error(g_rev, g_num, floor)
