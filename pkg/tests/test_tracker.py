"""Online tracking loop over rendered sequences."""

import numpy as np
import pytest
import torch

from policytrack import synthworld, tracker, train
from policytrack.model import ModelConfig, create_model

TINY = ModelConfig(
    embed_dim=8,
    depth=2,
    num_heads=2,
    patch_size=8,
    template_size=16,
    search_size=32,
    num_temporal=2,
    head_depth=2,
)


@pytest.fixture(scope="module")
def model():
    return create_model(TINY, seed=0)


@pytest.fixture(scope="module")
def sequence():
    cfg = synthworld.WorldConfig(num_frames=10, split="train")
    return synthworld.generate_sequence(cfg, seed=70)


def test_output_shape_and_first_frame_echo(model, sequence):
    boxes = tracker.track_sequence(model, sequence)
    assert boxes.shape == (10, 4)
    assert np.allclose(boxes[0], sequence.boxes[0])


def test_boxes_stay_usable(model, sequence):
    boxes = tracker.track_sequence(model, sequence)
    sizes = boxes[:, 2:] - boxes[:, :2]
    assert np.all(sizes >= tracker.MIN_BOX_PX - 1e-9)
    centers = (boxes[:, :2] + boxes[:, 2:]) / 2
    assert np.all(centers >= 0)
    assert np.all(centers[:, 0] <= sequence.frames.shape[2])
    assert np.all(centers[:, 1] <= sequence.frames.shape[1])


def test_deterministic_per_policy(model, sequence):
    for policy in tracker.POLICIES:
        a = tracker.track_sequence(model, sequence, policy=policy, seed=9)
        b = tracker.track_sequence(model, sequence, policy=policy, seed=9)
        assert np.array_equal(a, b)


def test_random_policy_ignores_logits(model, sequence):
    # same seed, different policies: random and argmax disagree on a fresh model
    rand = tracker.track_sequence(model, sequence, policy="random", seed=1)
    argm = tracker.track_sequence(model, sequence, policy="argmax", seed=1)
    assert not np.array_equal(rand[1:], argm[1:])


def test_bad_policy_rejected(model):
    with pytest.raises(ValueError):
        tracker.Tracker(model, policy="greedy")


def test_empty_frames_rejected(model):
    with pytest.raises(ValueError):
        tracker.Tracker(model).track([], np.array([0, 0, 10, 10]))


def test_lazy_sequence_matches_in_memory(model, sequence, tmp_path):
    synthworld.write_sequence(sequence, tmp_path / "seq")
    lazy = synthworld.load_sequence(tmp_path / "seq")
    from_disk = tracker.track_sequence(model, lazy, seed=4)
    in_memory = tracker.track_sequence(model, sequence, seed=4)
    # gt text files round at 0.01 px, so the seeded window differs slightly
    assert np.allclose(from_disk, in_memory, atol=0.5)


def test_trained_model_follows_target():
    # after the reward stage the greedy policy should beat the random-action
    # control on training-distribution sequences; closed-loop rollouts need a
    # decent box head first, so the warmup here is the larger share of budget
    cfg = train.TrainConfig(
        model=TINY,
        warmup_epochs=12,
        warmup_steps_per_epoch=24,
        warmup_batch=4,
        rl_epochs=12,
        rl_steps_per_epoch=12,
        rl_clip_len=4,
        rl_batch=8,
        rl_lr=3e-3,
    )
    seqs = [
        train.materialize(
            synthworld.generate_sequence(
                synthworld.WorldConfig(num_frames=16, split="train"), seed=200 + i
            )
        )
        for i in range(3)
    ]
    net = create_model(TINY, seed=1)
    train.run_warmup(net, seqs, cfg)
    train.run_rl(net, seqs, cfg)

    from policytrack import geometry

    iou_pred, iou_rand = [], []
    for seq in seqs:
        pred = tracker.Tracker(net, policy="argmax").track(seq.frames, seq.boxes[0])
        rand = tracker.Tracker(net, policy="random", seed=3).track(seq.frames, seq.boxes[0])
        iou_pred.append(geometry.iou(pred[1:], seq.boxes[1:]).mean())
        iou_rand.append(geometry.iou(rand[1:], seq.boxes[1:]).mean())
    assert np.mean(iou_pred) > np.mean(iou_rand)
