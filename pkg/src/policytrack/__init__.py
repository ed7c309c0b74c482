"""Reward-driven target localization for visual tracking.

A small laboratory around one idea: treat per-frame target localization as a
grid of candidate actions, train the action scores from tracking reward
(frame IoU plus a clip-level success-curve term) on top of a warmup-trained
regressor, and carry temporal context between frames as per-layer tokens.
Ships with a synthetic video benchmark, prior-map baselines, a tracker, and
an evaluation harness.
"""

from .errors import DataError, NumericalError
from .estimator import PolicyTracker
from .geometry import CropWindow, crop_window, giou, iou
from .metrics import auc, evaluate_sequences, success_curve
from .model import ModelConfig, PolicyTrackNet, create_model, load_checkpoint, save_checkpoint
from .rl import actor_critic_loss, clip_rewards, grpo_loss, ppo_loss
from .tracker import Tracker, track_sequence
from .train import TrainConfig, run_rl, run_warmup

__version__ = "0.1.0"

__all__ = [
    "CropWindow",
    "DataError",
    "ModelConfig",
    "NumericalError",
    "PolicyTrackNet",
    "PolicyTracker",
    "TrainConfig",
    "Tracker",
    "actor_critic_loss",
    "auc",
    "clip_rewards",
    "create_model",
    "crop_window",
    "evaluate_sequences",
    "giou",
    "grpo_loss",
    "iou",
    "load_checkpoint",
    "ppo_loss",
    "run_rl",
    "run_warmup",
    "save_checkpoint",
    "success_curve",
    "track_sequence",
]
