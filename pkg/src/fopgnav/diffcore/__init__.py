from . import tensor as ops
from .checkpoint import CheckpointError, load as load_checkpoint, params_checksum, save as save_checkpoint
from .gradcheck import NondeterministicFunctionError, grad_check, numeric_grad, relative_error
from .nn import Mlp, layer_norm
from .optim import Adam, AdamState, adam_step, clip_grad_norm, global_norm
from .tensor import NonFiniteError, Tape, TapeError, Tensor, backward

__all__ = [
    "Adam", "AdamState", "CheckpointError", "Mlp", "NonFiniteError",
    "NondeterministicFunctionError", "Tape", "TapeError", "Tensor",
    "adam_step", "backward", "clip_grad_norm", "global_norm", "grad_check",
    "layer_norm", "load_checkpoint", "numeric_grad", "ops", "params_checksum",
    "relative_error", "save_checkpoint",
]
