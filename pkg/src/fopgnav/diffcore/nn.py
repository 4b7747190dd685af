"""Multilayer perceptrons on top of the tape."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor

ACTIVATIONS = {"tanh": T.tanh, "elu": T.elu}
LN_EPS = 1e-5


def layer_norm(x: Tensor, gain=None, offset=None, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last (feature) axis, then apply gain and offset."""
    mu = T.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = T.mean(T.square(xc), axis=-1, keepdims=True)
    y = xc / T.sqrt(var + eps)
    if gain is not None:
        y = y * gain
    if offset is not None:
        y = y + offset
    return y


class Mlp:
    """Dense network ``layer_sizes[0] -> ... -> layer_sizes[-1]``.

    Parameters live in ``self.params`` as plain arrays keyed ``"{prefix}w0"``,
    ``"{prefix}b0"``, ... so optimizers and checkpoints can treat them as a
    flat dict. ``final_layer_scale`` multiplies the initial weights of the
    output layer; 0 makes the initial output exactly the (zero) final bias.
    """

    def __init__(self, layer_sizes, activation="elu", layer_norm=False,
                 final_layer_scale=1.0, seed=0, prefix=""):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"bad layer sizes {layer_sizes}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if final_layer_scale < 0:
            raise ValueError("final_layer_scale must be nonnegative")
        n_hidden = len(sizes) - 2
        if isinstance(layer_norm, bool):
            layer_norm = [layer_norm] * n_hidden
        if len(layer_norm) != n_hidden:
            raise ValueError("layer_norm needs one flag per hidden layer")

        self.layer_sizes = sizes
        self.activation = activation
        self.layer_norm = list(layer_norm)
        self.final_layer_scale = float(final_layer_scale)
        self.prefix = prefix

        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            # Glorot-uniform
            lim = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-lim, lim, size=(n_in, n_out))
            if i == len(sizes) - 2:
                w = w * self.final_layer_scale
            self.params[f"{prefix}w{i}"] = w
            self.params[f"{prefix}b{i}"] = np.zeros(n_out)
            if i < n_hidden and self.layer_norm[i]:
                self.params[f"{prefix}g{i}"] = np.ones(n_out)
                self.params[f"{prefix}o{i}"] = np.zeros(n_out)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def bind(self, tape: Tape | None) -> dict[str, Tensor]:
        """Parameters as tape leaves, or constants when ``tape`` is None."""
        if tape is None:
            return {k: Tensor(v) for k, v in self.params.items()}
        return {k: tape.watch(v, k) for k, v in self.params.items()}

    def forward(self, x, tape: Tape | None = None) -> Tensor:
        """Evaluate the network.

        With a tape the parameters are recorded as leaves; without one they
        are constants (the input may still carry its own tape).
        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input width {x.shape[-1]} != {self.in_dim}")
        p = self.bind(tape)
        act = ACTIVATIONS[self.activation]
        n_layers = len(self.layer_sizes) - 1
        h = x
        for i in range(n_layers):
            h = h @ p[f"{self.prefix}w{i}"] + p[f"{self.prefix}b{i}"]
            if i < n_layers - 1:
                if self.layer_norm[i]:
                    h = layer_norm(h, p[f"{self.prefix}g{i}"], p[f"{self.prefix}o{i}"])
                h = act(h)
        return h

    __call__ = forward

    def forward_numpy(self, x: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(x)).data

    def copy(self) -> Mlp:
        other = object.__new__(Mlp)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.layer_norm = list(self.layer_norm)
        return other

    def checksum(self) -> str:
        from .checkpoint import params_checksum
        return params_checksum(self.params)
