"""Estimator-style wrapper around the full train/track pipeline.

``PolicyTracker`` exposes the two-stage training as a single ``fit`` over a
list of sequences, tracking as ``predict``, and held-out AUC as ``score``,
with hyperparameters as constructor arguments (``get_params`` /
``set_params`` work as usual). Handy for grid searches over the small knobs
without touching config files.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import metrics, train, tracker
from .model import ModelConfig, create_model


def _check_sequences(X):
    if not isinstance(X, (list, tuple)) or not X:
        raise ValueError("expected a non-empty list of sequences")
    for seq in X:
        for attr in ("frames", "boxes", "absent", "name"):
            if not hasattr(seq, attr):
                raise TypeError(f"sequence lacks {attr!r}; generate or load one first")
    return [train.materialize(s) for s in X]


class PolicyTracker(BaseEstimator):
    """Grid-action tracker trained with warmup regression then reward."""

    def __init__(
        self,
        embed_dim=64,
        depth=4,
        num_heads=4,
        num_temporal=4,
        propagation="aligned",
        algorithm="actor_critic",
        reward_lambda=1.0,
        warmup_epochs=12,
        rl_epochs=10,
        seed=0,
    ):
        self.embed_dim = embed_dim
        self.depth = depth
        self.num_heads = num_heads
        self.num_temporal = num_temporal
        self.propagation = propagation
        self.algorithm = algorithm
        self.reward_lambda = reward_lambda
        self.warmup_epochs = warmup_epochs
        self.rl_epochs = rl_epochs
        self.seed = seed

    def _build_config(self) -> train.TrainConfig:
        model_cfg = ModelConfig(
            embed_dim=self.embed_dim,
            depth=self.depth,
            num_heads=self.num_heads,
            num_temporal=self.num_temporal,
            propagation=self.propagation,
        )
        return train.TrainConfig(
            model=model_cfg,
            algorithm=self.algorithm,
            reward_lambda=self.reward_lambda,
            warmup_epochs=self.warmup_epochs,
            rl_epochs=self.rl_epochs,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        seqs = _check_sequences(X)
        cfg = self._build_config()
        model = create_model(cfg.model, seed=cfg.seed)
        warmup_history = train.run_warmup(model, seqs, cfg)
        rl_history = train.run_rl(model, seqs, cfg)
        self.config_ = cfg
        self.model_ = model
        self.warmup_history_ = warmup_history
        self.rl_history_ = rl_history
        return self

    def predict(self, X):
        """Track each sequence from its first annotated box; list of (T, 4)."""
        check_is_fitted(self, "model_")
        seqs = _check_sequences(X)
        cfg = self.config_
        return [
            tracker.track_sequence(
                self.model_,
                seq,
                template_factor=cfg.template_factor,
                search_factor=cfg.search_factor,
            )
            for seq in seqs
        ]

    def score(self, X, y=None):
        """Mean success AUC over sequences, absent frames excluded."""
        check_is_fitted(self, "model_")
        seqs = _check_sequences(X)
        preds = self.predict(seqs)
        report = metrics.evaluate_sequences(
            {s.name: p for s, p in zip(seqs, preds)},
            {s.name: np.asarray(s.boxes) for s in seqs},
            {s.name: np.asarray(s.absent) for s in seqs},
        )
        return report.auc
