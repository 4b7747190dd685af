"""Trainers (truncated BPTT, SHAC, PPO) and residual-policy composition."""

from .anchor import AnchorFitError, anchor_deviation, train_anchor
from .fopg import (FopgTrainer, ShacConfig, TrainerAbort, WindowRecord, bptt_iteration,
                   shac_iteration, window_loss)
from .policy import GaussianPolicy, HandAnchor, NetAnchor, ValueNet, make_anchor, rpl_compose
from .ppo import PpoConfig, PpoTrainer, clipped_surrogate, linear_decay, ppo_iteration
from .targets import gae, td_lambda_targets

__all__ = [
    "AnchorFitError", "FopgTrainer", "GaussianPolicy", "HandAnchor", "NetAnchor", "PpoConfig",
    "PpoTrainer", "ShacConfig", "TrainerAbort", "ValueNet", "WindowRecord", "anchor_deviation",
    "bptt_iteration", "clipped_surrogate", "gae", "linear_decay", "make_anchor",
    "ppo_iteration", "rpl_compose", "shac_iteration", "td_lambda_targets", "train_anchor",
    "window_loss",
]
