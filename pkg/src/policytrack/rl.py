"""Rewards and policy-gradient losses for the grid-action tracker.

The per-frame reward is the frame IoU plus a sequence-level term, lambda
times the AUC of the whole clip's IoU list. The sequence term is computed
once per clip and added to every frame, so it is bit-identical across frames
by construction.

Three objectives share the sampled-trajectory interface:

- actor-critic: advantage = reward - value, plain log-prob weighting, plus a
  squared value error scaled by ``beta``;
- clipped-surrogate (PPO-style): probability ratios against a periodically
  refreshed behavior snapshot, clipped at ``1 +/- clip_eps``; at ratio 1 the
  gradient reduces to the actor-critic policy gradient;
- group-relative (GRPO-style): several trajectories per clip, advantages
  normalized per frame across the group (population std), no value term.
"""

from __future__ import annotations

import numpy as np
import torch

from . import metrics

DEFAULT_LAMBDA = 1.0
DEFAULT_BETA = 0.5
DEFAULT_CLIP_EPS = 0.2
DEFAULT_GROUP_SIZE = 8
GRPO_STD_EPS = 1e-8


def sequence_reward_term(ious, lam: float = DEFAULT_LAMBDA) -> float:
    """The clip-level reward component: lambda * AUC of the clip IoUs."""
    return lam * metrics.auc(ious)


def clip_rewards(ious, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Per-frame rewards: frame IoU plus the shared sequence term."""
    arr = np.asarray(ious, dtype=np.float64).ravel()
    term = sequence_reward_term(arr, lam)
    return arr + term


def sample_actions(logits: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    """Draw one flat cell index per row of (N, K) logits."""
    probs = torch.softmax(logits.detach(), dim=-1)
    return torch.multinomial(probs, 1, generator=generator).squeeze(-1)


def gather_log_probs(logits: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    """Log-probabilities of taken actions; logits (N, K), actions (N,)."""
    logp = torch.log_softmax(logits, dim=-1)
    return logp.gather(-1, actions.unsqueeze(-1)).squeeze(-1)


def _check_1d(*tensors):
    n = tensors[0].shape[0]
    for t in tensors:
        if t.ndim != 1 or t.shape[0] != n:
            raise ValueError("expected matching 1-d tensors along the frame axis")


def actor_critic_loss(
    logp_taken: torch.Tensor,
    values: torch.Tensor,
    rewards: torch.Tensor,
    beta: float = DEFAULT_BETA,
):
    """Policy + value loss over one trajectory of T frames."""
    _check_1d(logp_taken, values, rewards)
    advantages = (rewards - values).detach()
    policy_loss = -(advantages * logp_taken).mean()
    value_loss = ((values - rewards) ** 2).mean()
    total = policy_loss + beta * value_loss
    return total, {"policy": float(policy_loss.detach()), "value": float(value_loss.detach())}


def clipped_surrogate(
    logp_taken: torch.Tensor,
    old_logp: torch.Tensor,
    advantages: torch.Tensor,
    clip_eps: float = DEFAULT_CLIP_EPS,
) -> torch.Tensor:
    ratio = torch.exp(logp_taken - old_logp.detach())
    adv = advantages.detach()
    unclipped = ratio * adv
    clipped = ratio.clamp(1 - clip_eps, 1 + clip_eps) * adv
    return -torch.minimum(unclipped, clipped).mean()


def ppo_loss(
    logp_taken: torch.Tensor,
    old_logp: torch.Tensor,
    values: torch.Tensor,
    rewards: torch.Tensor,
    beta: float = DEFAULT_BETA,
    clip_eps: float = DEFAULT_CLIP_EPS,
):
    """Clipped-surrogate objective with the same value term as actor-critic.

    No KL penalty and no reference anchoring: the only regularizer is the
    ratio clip against the behavior snapshot.
    """
    _check_1d(logp_taken, old_logp, values, rewards)
    advantages = rewards - values.detach()
    policy_loss = clipped_surrogate(logp_taken, old_logp, advantages, clip_eps)
    value_loss = ((values - rewards) ** 2).mean()
    total = policy_loss + beta * value_loss
    return total, {"policy": float(policy_loss.detach()), "value": float(value_loss.detach())}


def group_advantages(rewards: torch.Tensor, eps: float = GRPO_STD_EPS) -> torch.Tensor:
    """Normalize (G, T) rewards per frame across the group (population std)."""
    if rewards.ndim != 2:
        raise ValueError("expected rewards of shape (group, frames)")
    if rewards.shape[0] < 2:
        raise ValueError("group normalization needs at least two trajectories")
    mean = rewards.mean(dim=0, keepdim=True)
    std = rewards.std(dim=0, unbiased=False, keepdim=True)
    return (rewards - mean) / (std + eps)


def grpo_loss(
    logp_taken: torch.Tensor,
    old_logp: torch.Tensor,
    rewards: torch.Tensor,
    clip_eps: float = DEFAULT_CLIP_EPS,
    eps: float = GRPO_STD_EPS,
):
    """Group-relative clipped surrogate over (G, T) trajectories; no value head."""
    if logp_taken.shape != old_logp.shape or logp_taken.shape != rewards.shape:
        raise ValueError("logp_taken, old_logp and rewards must share (G, T) shape")
    advantages = group_advantages(rewards, eps)
    policy_loss = clipped_surrogate(
        logp_taken.reshape(-1), old_logp.reshape(-1), advantages.reshape(-1), clip_eps
    )
    return policy_loss, {"policy": float(policy_loss.detach()), "value": 0.0}
