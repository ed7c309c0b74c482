"""Reward shaping and policy-gradient objectives."""

import numpy as np
import pytest
import torch

from policytrack import rl


def brute_auc(ious):
    thresholds = np.arange(21) / 20.0
    ious = np.asarray(ious, dtype=np.float64)
    return float(np.mean([(ious > t).mean() for t in thresholds]))


class TestClipRewards:
    def test_worked_example(self):
        # IoUs 0.5 and 0.7: both clear thresholds 0..0.45, one clears 0.5..0.65,
        # none clear 0.7..1.0 -> AUC = (10*1 + 4*0.5) / 21 = 4/7.
        rewards = rl.clip_rewards([0.5, 0.7], lam=1.0)
        assert abs(rewards[0] - (0.5 + 4.0 / 7.0)) < 1e-12
        assert abs(rewards[1] - (0.7 + 4.0 / 7.0)) < 1e-12

    def test_sequence_term_bit_identical_across_frames(self):
        rng = np.random.Generator(np.random.PCG64(7))
        for _ in range(50):
            ious = rng.random(8)
            rewards = rl.clip_rewards(ious, lam=0.7)
            term = rl.sequence_reward_term(ious, lam=0.7)
            # every frame gets the exact same shared float added
            assert np.all(rewards == ious + term)

    def test_matches_brute_force_auc(self):
        rng = np.random.Generator(np.random.PCG64(11))
        for _ in range(200):
            ious = rng.random(rng.integers(1, 12))
            lam = float(rng.random() * 2)
            expected = ious + lam * brute_auc(ious)
            assert np.allclose(rl.clip_rewards(ious, lam), expected, atol=1e-12)

    def test_lambda_zero_is_frame_iou(self):
        ious = np.array([0.1, 0.9, 0.4])
        assert np.array_equal(rl.clip_rewards(ious, lam=0.0), ious)


class TestSampling:
    def test_deterministic_given_generator(self):
        logits = torch.randn(6, 16, generator=torch.Generator().manual_seed(3))
        a = rl.sample_actions(logits, torch.Generator().manual_seed(5))
        b = rl.sample_actions(logits, torch.Generator().manual_seed(5))
        assert torch.equal(a, b)

    def test_peaked_logits_pick_the_peak(self):
        logits = torch.full((4, 10), -30.0)
        logits[torch.arange(4), torch.tensor([1, 3, 5, 7])] = 30.0
        actions = rl.sample_actions(logits, torch.Generator().manual_seed(0))
        assert actions.tolist() == [1, 3, 5, 7]

    def test_gather_log_probs(self):
        logits = torch.randn(5, 7, generator=torch.Generator().manual_seed(9))
        actions = torch.tensor([0, 6, 3, 2, 5])
        got = rl.gather_log_probs(logits, actions)
        ref = torch.log_softmax(logits, dim=-1)[torch.arange(5), actions]
        assert torch.allclose(got, ref)


class TestActorCritic:
    def test_hand_computed_values(self):
        logp = torch.tensor([-1.0, -2.0])
        values = torch.tensor([0.25, 0.5])
        rewards = torch.tensor([1.0, 0.0])
        total, parts = rl.actor_critic_loss(logp, values, rewards, beta=0.5)
        # A = (0.75, -0.5); policy = -mean(0.75*-1, -0.5*-2) = -0.125
        # value = mean(0.5625, 0.25) = 0.40625; total = -0.125 + 0.203125
        assert abs(parts["policy"] - (-0.125)) < 1e-6
        assert abs(parts["value"] - 0.40625) < 1e-6
        assert abs(float(total) - 0.078125) < 1e-6

    def test_advantage_is_constant_wrt_values(self):
        # grad through the value head must come from the MSE term alone
        torch.manual_seed(0)
        logp = torch.randn(6, requires_grad=True)
        values = torch.randn(6, requires_grad=True)
        rewards = torch.rand(6)
        total, _ = rl.actor_critic_loss(logp, values, rewards, beta=0.5)
        total.backward()
        expected = 0.5 * 2 * (values.detach() - rewards) / 6
        assert torch.allclose(values.grad, expected, atol=1e-6)

    def test_policy_gradient_direction(self):
        # positive advantage should push the taken log-prob up
        logp = torch.tensor([-1.5], requires_grad=True)
        total, _ = rl.actor_critic_loss(
            logp, torch.tensor([0.0]), torch.tensor([1.0]), beta=0.0
        )
        total.backward()
        assert logp.grad.item() < 0  # descent raises logp

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            rl.actor_critic_loss(torch.zeros(3), torch.zeros(2), torch.zeros(3))


class TestClippedSurrogate:
    def test_gradient_matches_actor_critic_at_ratio_one(self):
        torch.manual_seed(4)
        for _ in range(20):
            logits = torch.randn(8, 12, requires_grad=True)
            actions = torch.randint(12, (8,))
            adv = torch.randn(8)
            logp = rl.gather_log_probs(logits, actions)
            loss = rl.clipped_surrogate(logp, logp.detach(), adv)
            (grad_ppo,) = torch.autograd.grad(loss, logits)

            logits2 = logits.detach().clone().requires_grad_(True)
            logp2 = rl.gather_log_probs(logits2, actions)
            (grad_ac,) = torch.autograd.grad(-(adv * logp2).mean(), logits2)
            assert torch.allclose(grad_ppo, grad_ac, atol=1e-7)

    def test_clip_kills_gradient_outside_trust_region(self):
        # ratio = 2 with positive advantage: clipped branch wins, grad is zero
        logp = torch.tensor([float(np.log(2.0))], requires_grad=True)
        old = torch.tensor([0.0])
        loss = rl.clipped_surrogate(logp, old, torch.tensor([1.0]), clip_eps=0.2)
        loss.backward()
        assert abs(float(loss.detach()) + 1.2) < 1e-6
        assert torch.allclose(logp.grad, torch.zeros(1))

    def test_negative_advantage_keeps_gradient(self):
        # same ratio but negative advantage: unclipped branch is the min
        logp = torch.tensor([float(np.log(2.0))], requires_grad=True)
        old = torch.tensor([0.0])
        loss = rl.clipped_surrogate(logp, old, torch.tensor([-1.0]), clip_eps=0.2)
        loss.backward()
        assert float(loss.detach()) == pytest.approx(2.0)
        assert abs(float(logp.grad)) > 0.5


class TestPPO:
    def test_total_is_policy_plus_beta_value(self):
        torch.manual_seed(2)
        logp = torch.randn(5)
        old = logp + 0.05 * torch.randn(5)
        values = torch.randn(5)
        rewards = torch.rand(5)
        total, parts = rl.ppo_loss(logp, old, values, rewards, beta=0.5)
        assert float(total) == pytest.approx(parts["policy"] + 0.5 * parts["value"], abs=1e-6)

    def test_value_gradient_only_from_mse(self):
        values = torch.randn(4, requires_grad=True)
        logp = torch.randn(4, requires_grad=True)
        rewards = torch.rand(4)
        total, _ = rl.ppo_loss(logp, logp.detach(), values, rewards, beta=1.0)
        total.backward()
        expected = 2 * (values.detach() - rewards) / 4
        assert torch.allclose(values.grad, expected, atol=1e-6)


class TestGroupAdvantages:
    def test_per_frame_mean_zero_and_unit_variance(self):
        # numerical property, so check it in double precision
        rng = torch.Generator().manual_seed(13)
        for _ in range(50):
            rewards = (torch.rand(8, 6, generator=rng, dtype=torch.float64)) * 3
            adv = rl.group_advantages(rewards)
            assert torch.allclose(adv.mean(dim=0), torch.zeros(6, dtype=torch.float64), atol=1e-9)
            # population normalization: variance 1 up to the eps guard
            assert torch.allclose(
                adv.var(dim=0, unbiased=False), torch.ones(6, dtype=torch.float64), atol=1e-6
            )

    def test_matches_numpy_population_std(self):
        rewards = torch.tensor([[1.0, 2.0], [3.0, 2.5], [0.5, 4.0], [2.0, 1.5]])
        adv = rl.group_advantages(rewards).numpy()
        arr = rewards.numpy()
        expected = (arr - arr.mean(0)) / (arr.std(0) + 1e-8)
        assert np.allclose(adv, expected, atol=1e-6)

    def test_constant_column_is_zeroed_not_nan(self):
        rewards = torch.full((8, 3), 0.4)
        adv = rl.group_advantages(rewards)
        assert torch.all(torch.isfinite(adv))
        assert torch.allclose(adv, torch.zeros_like(adv))

    def test_input_validation(self):
        with pytest.raises(ValueError):
            rl.group_advantages(torch.zeros(8))
        with pytest.raises(ValueError):
            rl.group_advantages(torch.zeros(1, 4))


class TestGRPO:
    def test_equals_surrogate_on_normalized_advantages(self):
        torch.manual_seed(21)
        logp = torch.randn(8, 5)
        old = logp + 0.1 * torch.randn(8, 5)
        rewards = torch.rand(8, 5)
        total, parts = rl.grpo_loss(logp, old, rewards)
        adv = rl.group_advantages(rewards)
        ref = rl.clipped_surrogate(logp.reshape(-1), old.reshape(-1), adv.reshape(-1))
        assert float(total) == pytest.approx(float(ref), abs=1e-7)
        assert parts["value"] == 0.0

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            rl.grpo_loss(torch.zeros(8, 5), torch.zeros(8, 4), torch.zeros(8, 5))
