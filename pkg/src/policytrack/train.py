"""Two-stage training for the grid-action tracker.

Stage one ("warmup") trains the encoder and the box regressor on short clips
with a GIoU + L1 loss applied at the cell containing the ground-truth
center; the cell-logit and value heads stay untouched (their final convs are
zero-init, so the policy starts uniform). Stage two freezes the encoder,
embeddings, and box head, and trains only the logit and value heads from
reward, on clips rolled out the way the tracker runs them: each frame's
search window is centered on the box the policy chose in the previous frame,
so the sequence-level part of the reward carries real credit for actions
whose consequences only show up later in the clip. Objectives: actor-critic,
clipped-surrogate, or group-relative.

Warmup and the supervised heatmap baselines use jittered ground-truth
windows (the conventional recipe); only the reward stage rolls out.
"""

from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch

from . import geometry, priors, rl, synthworld, tracker
from .errors import NumericalError
from .model import ModelConfig, PolicyTrackNet, TemporalState

LOG_HEADER = "epoch,loss,mean_reward,mean_clip_iou,lr"
ALGORITHMS = ("actor_critic", "ppo", "grpo")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    # crop geometry and jitter
    template_factor: float = 2.0
    search_factor: float = 4.0
    center_jitter: float = 0.08
    scale_jitter: float = 0.15
    # warmup stage
    warmup_epochs: int = 12
    warmup_steps_per_epoch: int = 40
    warmup_clip_len: int = 2
    warmup_batch: int = 8
    warmup_lr: float = 1e-4
    warmup_encoder_lr_scale: float = 0.1
    warmup_weight_decay: float = 1e-4
    giou_weight: float = 2.0
    l1_weight: float = 5.0
    # reward stage
    algorithm: str = "actor_critic"
    rl_epochs: int = 10
    rl_steps_per_epoch: int = 30
    rl_clip_len: int = 8
    rl_batch: int = 4
    rl_lr: float = 1e-4
    rl_weight_decay: float = 1e-4
    lr_decay_at: float = 0.8
    lr_decay_factor: float = 0.1
    reward_lambda: float = 1.0
    value_weight: float = 0.5
    clip_eps: float = 0.2
    refresh_every: int = 4
    group_size: int = 8

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")


# ---------------------------------------------------------------------------
# flat key=value config files (the run manifest embeds these lines)


def config_to_lines(cfg: TrainConfig) -> list[str]:
    flat = {}
    for key, value in asdict(cfg).items():
        if isinstance(value, dict):
            for sub, subval in value.items():
                flat[f"{key}.{sub}"] = subval
        else:
            flat[key] = value
    return [f"{k}={flat[k]!r}" if isinstance(flat[k], float) else f"{k}={flat[k]}"
            for k in sorted(flat)]


def save_config(cfg: TrainConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(config_to_lines(cfg)) + "\n")


def _coerce(type_name: str, raw: str):
    if type_name == "int":
        return int(raw)
    if type_name == "float":
        return float(raw)
    if type_name == "str":
        return raw
    raise ValueError(f"unsupported config field type {type_name!r}")


def parse_config_lines(lines) -> TrainConfig:
    own = {f.name: f.type for f in fields(TrainConfig)}
    model_types = {f.name: f.type for f in fields(ModelConfig)}
    kwargs, model_kwargs = {}, {}
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ValueError(f"malformed config line: {line!r}")
        if key.startswith("model."):
            sub = key[len("model."):]
            if sub not in model_types:
                raise ValueError(f"unknown model config key {sub!r}")
            model_kwargs[sub] = _coerce(model_types[sub], raw)
        else:
            if key not in own or key == "model":
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(own[key], raw)
    return TrainConfig(model=ModelConfig(**model_kwargs), **kwargs)


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        return parse_config_lines(fh)


def apply_overrides(cfg: TrainConfig, overrides: dict[str, str]) -> TrainConfig:
    lines = config_to_lines(cfg)
    table = dict(line.split("=", 1) for line in lines)
    for key, value in overrides.items():
        if key not in table:
            raise ValueError(f"unknown config key {key!r}")
        table[key] = str(value)
    return parse_config_lines(f"{k}={v}" for k, v in table.items())


# ---------------------------------------------------------------------------
# clip sampling


@dataclass
class ArraySequence:
    """A sequence with all frames in memory."""

    name: str
    frames: np.ndarray  # (T, H, W, 3) uint8
    boxes: np.ndarray  # (T, 4) corner boxes, pixels
    absent: np.ndarray  # (T,) uint8


def materialize(seq) -> ArraySequence:
    """Accept an in-memory sequence or a lazy on-disk one."""
    if isinstance(seq, (ArraySequence, synthworld.Sequence)):
        return ArraySequence(seq.name, seq.frames, seq.boxes, seq.absent)
    frames = np.stack([seq.load_frame(t) for t in range(len(seq))])
    return ArraySequence(seq.name, frames, seq.boxes, seq.absent)


def load_training_split(root, split: str) -> list[ArraySequence]:
    return [materialize(s) for s in synthworld.load_split(root, split)]


@dataclass
class ClipBatch:
    templates: torch.Tensor  # (B, 3, zs, zs)
    searches: torch.Tensor  # (B, T, 3, xs, xs)
    gt: torch.Tensor  # (B, T, 4) window-normalized corner boxes


def _to_chw(patch: np.ndarray) -> np.ndarray:
    return patch.transpose(2, 0, 1) / 255.0


def _jittered_window(box, factor, rng, cfg: TrainConfig) -> geometry.CropWindow:
    base = geometry.crop_window(box, factor)
    scale = float(np.exp(rng.uniform(-cfg.scale_jitter, cfg.scale_jitter)))
    side = base.side * scale
    dx = float(rng.uniform(-cfg.center_jitter, cfg.center_jitter)) * side
    dy = float(rng.uniform(-cfg.center_jitter, cfg.center_jitter)) * side
    return geometry.CropWindow(base.cx + dx, base.cy + dy, side)


def _visible_starts(seq: ArraySequence, clip_len: int) -> np.ndarray:
    ok = seq.absent == 0
    if len(ok) < clip_len:
        return np.empty(0, dtype=np.int64)
    windows = np.lib.stride_tricks.sliding_window_view(ok, clip_len)
    return np.flatnonzero(windows.all(axis=1))


def sample_clip_batch(
    sequences: list[ArraySequence],
    clip_len: int,
    batch_size: int,
    rng: np.random.Generator,
    cfg: TrainConfig,
) -> ClipBatch:
    """Draw gt-jittered template/search crops for a batch of random clips."""
    zs, xs = cfg.model.template_size, cfg.model.search_size
    templates = np.empty((batch_size, 3, zs, zs), dtype=np.float32)
    searches = np.empty((batch_size, clip_len, 3, xs, xs), dtype=np.float32)
    gt = np.empty((batch_size, clip_len, 4), dtype=np.float32)
    for b in range(batch_size):
        for _ in range(64):
            seq = sequences[int(rng.integers(len(sequences)))]
            starts = _visible_starts(seq, clip_len)
            if len(starts):
                break
        else:
            raise ValueError(f"no sequence offers {clip_len} consecutive visible frames")
        t0 = int(starts[rng.integers(len(starts))])
        zwin = geometry.crop_window(seq.boxes[t0], cfg.template_factor)
        templates[b] = _to_chw(geometry.crop_patch(seq.frames[t0], zwin, zs))
        for k in range(clip_len):
            t = t0 + k
            xwin = _jittered_window(seq.boxes[t], cfg.search_factor, rng, cfg)
            searches[b, k] = _to_chw(geometry.crop_patch(seq.frames[t], xwin, xs))
            gt[b, k] = geometry.image_to_window(seq.boxes[t], xwin)
    return ClipBatch(torch.from_numpy(templates), torch.from_numpy(searches), torch.from_numpy(gt))


# ---------------------------------------------------------------------------
# warmup stage


def gt_cell_indices(gt: torch.Tensor, grid_h: int, grid_w: int):
    """Row/col of the cell containing each box center; gt is (N, 4)."""
    cx = (gt[:, 0] + gt[:, 2]) / 2
    cy = (gt[:, 1] + gt[:, 3]) / 2
    j = (cx * grid_w).long().clamp(0, grid_w - 1)
    i = (cy * grid_h).long().clamp(0, grid_h - 1)
    return i, j


def regression_loss(boxes: torch.Tensor, gt: torch.Tensor, cfg: TrainConfig) -> torch.Tensor:
    """GIoU + L1 at the ground-truth cell; boxes (N, H, W, 4), gt (N, 4)."""
    n, h, w, _ = boxes.shape
    i, j = gt_cell_indices(gt, h, w)
    pred = boxes[torch.arange(n), i, j]
    giou_term = (1 - geometry.giou_t(pred, gt)).mean()
    l1_term = (pred - gt).abs().sum(dim=-1).mean()
    return cfg.giou_weight * giou_term + cfg.l1_weight * l1_term


def _forward_clip(model: PolicyTrackNet, batch: ClipBatch):
    """Run the model over a clip batch; returns per-frame FrameOutputs."""
    state: TemporalState | None = None
    outputs = []
    for t in range(batch.searches.shape[1]):
        out, state = model.forward_frame(batch.templates, batch.searches[:, t], state)
        outputs.append(out)
    return outputs


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    torch.set_num_threads(1)


def _check_finite(loss: torch.Tensor, stage: str) -> None:
    if not torch.isfinite(loss):
        raise NumericalError(f"{stage} loss became non-finite: {float(loss.detach())}")


def run_warmup(
    model: PolicyTrackNet,
    train_seqs: list[ArraySequence],
    cfg: TrainConfig,
    log_path=None,
) -> list[dict]:
    """Stage one: encoder + box regressor on short clips."""
    seed_everything(cfg.seed)
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 11))
    head_params = list(model.box_head.parameters())
    head_ids = {id(p) for p in head_params}
    skip = head_ids | {id(p) for p in model.logit_head.parameters()} | {
        id(p) for p in model.value_head.parameters()
    }
    encoder_params = [p for p in model.parameters() if id(p) not in skip]
    opt = torch.optim.AdamW(
        [
            {"params": head_params, "lr": cfg.warmup_lr},
            {"params": encoder_params, "lr": cfg.warmup_lr * cfg.warmup_encoder_lr_scale},
        ],
        weight_decay=cfg.warmup_weight_decay,
    )
    history = []
    model.train()
    for epoch in range(cfg.warmup_epochs):
        total = 0.0
        for _ in range(cfg.warmup_steps_per_epoch):
            batch = sample_clip_batch(train_seqs, cfg.warmup_clip_len, cfg.warmup_batch, rng, cfg)
            outputs = _forward_clip(model, batch)
            loss = torch.stack(
                [
                    regression_loss(out.boxes, batch.gt[:, t], cfg)
                    for t, out in enumerate(outputs)
                ]
            ).mean()
            _check_finite(loss, "warmup")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
        history.append(
            {
                "epoch": epoch,
                "loss": total / cfg.warmup_steps_per_epoch,
                "mean_reward": 0.0,
                "mean_clip_iou": 0.0,
                "lr": cfg.warmup_lr,
            }
        )
    if log_path:
        write_log(history, log_path)
    return history


@torch.no_grad()
def evaluate_gt_cell_iou(
    model: PolicyTrackNet,
    seqs: list[ArraySequence],
    cfg: TrainConfig,
    num_clips: int = 32,
    seed: int = 999,
) -> float:
    """Mean IoU of the regressed box at the ground-truth cell (validation)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    model.eval()
    ious = []
    for _ in range(num_clips):
        batch = sample_clip_batch(seqs, cfg.warmup_clip_len, 1, rng, cfg)
        for t, out in enumerate(_forward_clip(model, batch)):
            gt = batch.gt[:, t]
            i, j = gt_cell_indices(gt, *out.boxes.shape[1:3])
            pred = out.boxes[torch.arange(len(gt)), i, j]
            ious.append(float(geometry.iou_t(pred, gt).mean()))
    model.train()
    return float(np.mean(ious))


# ---------------------------------------------------------------------------
# reward stage


@torch.no_grad()
def _encode_clips(model: PolicyTrackNet, batch: ClipBatch):
    """Frozen-encoder pass: per-frame feature maps and regressed boxes."""
    state: TemporalState | None = None
    feats, boxes = [], []
    for t in range(batch.searches.shape[1]):
        out, state = model.forward_frame(batch.templates, batch.searches[:, t], state)
        feats.append(out.features)
        boxes.append(out.boxes)
    return torch.stack(feats, dim=1), torch.stack(boxes, dim=1)


def _reward_rows(ious: np.ndarray, lam: float) -> np.ndarray:
    return np.stack([rl.clip_rewards(row, lam) for row in ious])


@dataclass
class _ClipStart:
    seq: ArraySequence
    t0: int
    template: np.ndarray  # (3, zs, zs)
    window: geometry.CropWindow


def _pick_clip_starts(
    sequences: list[ArraySequence],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> list[_ClipStart]:
    """Choose clips for one rollout batch: template from the first frame plus
    a jittered initial search window (stands in for an imperfect previous
    prediction when entering mid-sequence)."""
    zs = cfg.model.template_size
    starts = []
    for _ in range(cfg.rl_batch):
        for _ in range(64):
            seq = sequences[int(rng.integers(len(sequences)))]
            ok = _visible_starts(seq, cfg.rl_clip_len)
            if len(ok):
                break
        else:
            raise ValueError(f"no sequence offers {cfg.rl_clip_len} consecutive visible frames")
        t0 = int(ok[rng.integers(len(ok))])
        zwin = geometry.crop_window(seq.boxes[t0], cfg.template_factor)
        template = _to_chw(geometry.crop_patch(seq.frames[t0], zwin, zs)).astype(np.float32)
        window = _jittered_window(seq.boxes[t0], cfg.search_factor, rng, cfg)
        starts.append(_ClipStart(seq, t0, template, window))
    return starts


def _rollout(
    model: PolicyTrackNet,
    starts: list[_ClipStart],
    cfg: TrainConfig,
    sampler: torch.Generator,
    behavior=None,
):
    """Roll the policy through each clip the way the tracker runs: the search
    window of frame t+1 is centered on the box chosen at frame t, so an action
    that drifts the window costs reward on every later frame.

    Actions come from ``behavior`` applied to the frozen features when given
    (off-policy variants), otherwise from the model's own logit head. Returns
    detached per-frame features (B, T, C, H, W), sampled cells (B, T), and the
    chosen boxes' IoU with the ground truth (B, T) in float64.
    """
    xs = cfg.model.search_size
    cells = cfg.model.grid_size ** 2
    b = len(starts)
    templates = torch.from_numpy(np.stack([s.template for s in starts]))
    windows = [s.window for s in starts]
    state = None
    feats, actions, ious = [], [], []
    with torch.no_grad():
        for k in range(cfg.rl_clip_len):
            searches = np.stack(
                [
                    _to_chw(geometry.crop_patch(s.seq.frames[s.t0 + k], w, xs))
                    for s, w in zip(starts, windows)
                ]
            ).astype(np.float32)
            out, state = model.forward_frame(templates, torch.from_numpy(searches), state)
            logits = out.logits.reshape(b, cells)
            if behavior is not None:
                logits = behavior(out.features).reshape(b, cells)
            acts = rl.sample_actions(logits, sampler)
            chosen = out.boxes.reshape(b, cells, 4)[torch.arange(b), acts].double().numpy()
            row = np.empty(b)
            for i, (s, w) in enumerate(zip(starts, windows)):
                gt_w = np.asarray(geometry.image_to_window(s.seq.boxes[s.t0 + k], w))
                row[i] = geometry.iou(chosen[i], gt_w)
                ih, iw = s.seq.frames[s.t0 + k].shape[:2]
                nxt = tracker._sanitize_box(
                    np.asarray(geometry.window_to_image(chosen[i], w)), iw, ih
                )
                windows[i] = geometry.crop_window(nxt, cfg.search_factor)
            feats.append(out.features)
            actions.append(acts)
            ious.append(row)
    return torch.stack(feats, dim=1), torch.stack(actions, dim=1), np.stack(ious, axis=1)


def run_rl(
    model: PolicyTrackNet,
    train_seqs: list[ArraySequence],
    cfg: TrainConfig,
    log_path=None,
) -> list[dict]:
    """Stage two: logit + value heads from reward, encoder and box head frozen."""
    seed_everything(cfg.seed + 1)
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 23))
    sampler = torch.Generator().manual_seed(cfg.seed + 37)
    model.freeze_for_rl()
    opt = torch.optim.AdamW(model.rl_parameters(), lr=cfg.rl_lr, weight_decay=cfg.rl_weight_decay)
    behavior = copy.deepcopy(model.logit_head)
    for p in behavior.parameters():
        p.requires_grad_(False)
    decay_epoch = int(round(cfg.rl_epochs * cfg.lr_decay_at))
    g = cfg.model.grid_size
    cells = g * g
    history = []
    step_count = 0
    model.train()
    for epoch in range(cfg.rl_epochs):
        lr = cfg.rl_lr * (cfg.lr_decay_factor if epoch >= decay_epoch else 1.0)
        for group in opt.param_groups:
            group["lr"] = lr
        totals = np.zeros(3)
        for _ in range(cfg.rl_steps_per_epoch):
            if cfg.algorithm in ("ppo", "grpo") and step_count % cfg.refresh_every == 0:
                behavior.load_state_dict(model.logit_head.state_dict())
            starts = _pick_clip_starts(train_seqs, cfg, rng)

            if cfg.algorithm == "grpo":
                # G trajectories of the same clips; each rollout drifts its
                # own windows, so features differ per group member.
                group_logp, group_old, group_rewards = [], [], []
                iou_accum = []
                for _ in range(cfg.group_size):
                    feats, actions, iou_rows = _rollout(model, starts, cfg, sampler, behavior)
                    b, t = feats.shape[:2]
                    flat_feats = feats.reshape(b * t, *feats.shape[2:])
                    flat_actions = actions.reshape(-1)
                    logits = model.logit_head(flat_feats).reshape(b * t, cells)
                    with torch.no_grad():
                        old_logits = behavior(flat_feats).reshape(b * t, cells)
                    rewards = _reward_rows(iou_rows, cfg.reward_lambda)
                    group_logp.append(rl.gather_log_probs(logits, flat_actions))
                    group_old.append(rl.gather_log_probs(old_logits, flat_actions))
                    group_rewards.append(rewards.reshape(-1))
                    iou_accum.append(iou_rows.mean())
                loss, parts = rl.grpo_loss(
                    torch.stack(group_logp),
                    torch.stack(group_old),
                    torch.tensor(np.stack(group_rewards), dtype=torch.float32),
                    clip_eps=cfg.clip_eps,
                )
                mean_reward = float(np.mean(group_rewards))
                mean_iou = float(np.mean(iou_accum))
            else:
                sample_head = behavior if cfg.algorithm == "ppo" else None
                feats, actions, iou_rows = _rollout(model, starts, cfg, sampler, sample_head)
                b, t = feats.shape[:2]
                flat_feats = feats.reshape(b * t, *feats.shape[2:])
                flat_actions = actions.reshape(-1)
                out = model.heads(flat_feats)
                logits = out.logits.reshape(b * t, cells)
                rewards_np = _reward_rows(iou_rows, cfg.reward_lambda)
                rewards = torch.tensor(rewards_np.reshape(-1), dtype=torch.float32)
                logp = rl.gather_log_probs(logits, flat_actions)
                if cfg.algorithm == "ppo":
                    with torch.no_grad():
                        behavior_logits = behavior(flat_feats).reshape(b * t, cells)
                    old_logp = rl.gather_log_probs(behavior_logits, flat_actions)
                    loss, parts = rl.ppo_loss(
                        logp, old_logp, out.value, rewards,
                        beta=cfg.value_weight, clip_eps=cfg.clip_eps,
                    )
                else:
                    loss, parts = rl.actor_critic_loss(
                        logp, out.value, rewards, beta=cfg.value_weight
                    )
                mean_reward = float(rewards_np.mean())
                mean_iou = float(iou_rows.mean())

            _check_finite(loss, "reward stage")
            opt.zero_grad()
            loss.backward()
            opt.step()
            step_count += 1
            totals += (float(loss.detach()), mean_reward, mean_iou)
        n = cfg.rl_steps_per_epoch
        history.append(
            {
                "epoch": epoch,
                "loss": totals[0] / n,
                "mean_reward": totals[1] / n,
                "mean_clip_iou": totals[2] / n,
                "lr": lr,
            }
        )
    if log_path:
        write_log(history, log_path)
    return history


def run_heatmap_baseline(
    model: PolicyTrackNet,
    train_seqs: list[ArraySequence],
    cfg: TrainConfig,
    log_path=None,
    kind: str = "center",
) -> list[dict]:
    """Supervise the logit head with a prior target map instead of reward.

    Shares the reward stage's data budget and schedule so tracking results
    are comparable. ``kind`` picks the target: "center" (Gaussian at the
    target center) or "iou" (per-cell IoU of the frozen regressor's boxes).
    """
    if kind not in ("center", "iou"):
        raise ValueError(f"unknown heatmap kind {kind!r}")
    seed_everything(cfg.seed + 1)
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 23))
    model.freeze_for_rl()
    for p in model.value_head.parameters():
        p.requires_grad_(False)
    params = list(model.logit_head.parameters())
    opt = torch.optim.AdamW(params, lr=cfg.rl_lr, weight_decay=cfg.rl_weight_decay)
    decay_epoch = int(round(cfg.rl_epochs * cfg.lr_decay_at))
    g = cfg.model.grid_size
    history = []
    model.train()
    for epoch in range(cfg.rl_epochs):
        lr = cfg.rl_lr * (cfg.lr_decay_factor if epoch >= decay_epoch else 1.0)
        for group in opt.param_groups:
            group["lr"] = lr
        total = 0.0
        for _ in range(cfg.rl_steps_per_epoch):
            batch = sample_clip_batch(train_seqs, cfg.rl_clip_len, cfg.rl_batch, rng, cfg)
            feats, boxes = _encode_clips(model, batch)
            b, t = feats.shape[:2]
            flat_feats = feats.reshape(b * t, *feats.shape[2:])
            gt_flat = batch.gt.reshape(b * t, 4)
            logits = model.logit_head(flat_feats).squeeze(1)
            if kind == "center":
                target = priors.gaussian_heatmap(gt_flat, g, g)
            else:
                target = priors.iou_heatmap(gt_flat, boxes.reshape(b * t, g, g, 4))
            loss = priors.focal_map_loss(logits, target)
            _check_finite(loss, "prior baseline")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
        history.append(
            {
                "epoch": epoch,
                "loss": total / cfg.rl_steps_per_epoch,
                "mean_reward": 0.0,
                "mean_clip_iou": 0.0,
                "lr": lr,
            }
        )
    if log_path:
        write_log(history, log_path)
    return history


def write_log(history: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(LOG_HEADER + "\n")
        for row in history:
            fh.write(
                f"{row['epoch']},{row['loss']:.6f},{row['mean_reward']:.6f},"
                f"{row['mean_clip_iou']:.6f},{row['lr']:.8f}\n"
            )


# named experiment variants used by the ablation runner
VARIANTS = {
    "actor_critic": {"algorithm": "actor_critic"},
    "ppo": {"algorithm": "ppo"},
    "grpo": {"algorithm": "grpo"},
    "no_sequence_reward": {"reward_lambda": "0.0"},
    "deep_to_shallow": {"model.propagation": "deep_to_shallow"},
}
PRIOR_VARIANTS = ("center_prior", "iou_prior")
