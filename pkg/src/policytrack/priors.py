"""Prior-driven heatmap baselines for target localization.

Instead of learning where to act from reward, these baselines supervise the
cell map directly with hand-designed targets over the search grid:

- a Gaussian bump at the target center (scale-adaptive sigma);
- Gaussian bumps at the two box corners, decoded by softmax expectation;
- the IoU of each cell's regressed box with the ground truth.

All targets live in [0, 1], so one quality-focal-style loss covers them:
``|y - p|^2 * BCE(p, y)``. The modulating factor makes the loss exactly zero
when the prediction matches the target, including soft targets in (0, 1).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from . import geometry

SIGMA_SCALE = 0.25
SIGMA_FLOOR_CELLS = 0.5


def _grid_centers(grid_h, grid_w, dtype=torch.float32, device=None):
    u = (torch.arange(grid_w, dtype=dtype, device=device) + 0.5) / grid_w
    v = (torch.arange(grid_h, dtype=dtype, device=device) + 0.5) / grid_h
    return u, v


def _as_batch(gt_box: torch.Tensor) -> tuple[torch.Tensor, bool]:
    gt = torch.as_tensor(gt_box, dtype=torch.float32) if not torch.is_tensor(gt_box) else gt_box
    if gt.ndim == 1:
        return gt.unsqueeze(0), True
    if gt.ndim == 2 and gt.shape[-1] == 4:
        return gt, False
    raise ValueError(f"expected (4,) or (B, 4) boxes, got shape {tuple(gt.shape)}")


def _sigma(gt: torch.Tensor, grid_h: int, grid_w: int, sigma_scale: float) -> torch.Tensor:
    w = (gt[:, 2] - gt[:, 0]).clamp(min=0)
    h = (gt[:, 3] - gt[:, 1]).clamp(min=0)
    floor = SIGMA_FLOOR_CELLS / max(grid_h, grid_w)
    return (sigma_scale * torch.sqrt(w * h)).clamp(min=floor)


def _bump(px, py, u, v, sigma):
    # px, py, sigma: (B,); u: (W,); v: (H,) -> (B, H, W)
    du = (u.view(1, 1, -1) - px.view(-1, 1, 1)) ** 2
    dv = (v.view(1, -1, 1) - py.view(-1, 1, 1)) ** 2
    return torch.exp(-(du + dv) / (2 * sigma.view(-1, 1, 1) ** 2))


def _snap_to_cell(c: torch.Tensor, n: int) -> torch.Tensor:
    """Coordinate of the center of the cell containing c (both in [0, 1])."""
    idx = (c * n).floor().clamp(0, n - 1)
    return (idx + 0.5) / n


def gaussian_heatmap(gt_box, grid_h: int, grid_w: int, sigma_scale: float = SIGMA_SCALE):
    """Center-prior target map(s) in [0, 1].

    The bump is centered on the cell containing the box center, so the peak
    cell is exactly 1 regardless of where the center falls inside it.
    """
    gt, squeeze = _as_batch(gt_box)
    u, v = _grid_centers(grid_h, grid_w, gt.dtype, gt.device)
    sigma = _sigma(gt, grid_h, grid_w, sigma_scale)
    cx = _snap_to_cell((gt[:, 0] + gt[:, 2]) / 2, grid_w)
    cy = _snap_to_cell((gt[:, 1] + gt[:, 3]) / 2, grid_h)
    out = _bump(cx, cy, u, v, sigma)
    return out[0] if squeeze else out


def corner_heatmaps(gt_box, grid_h: int, grid_w: int, sigma_scale: float = SIGMA_SCALE):
    """Top-left / bottom-right corner target maps, stacked on channel 0."""
    gt, squeeze = _as_batch(gt_box)
    u, v = _grid_centers(grid_h, grid_w, gt.dtype, gt.device)
    sigma = _sigma(gt, grid_h, grid_w, sigma_scale)
    tl = _bump(gt[:, 0], gt[:, 1], u, v, sigma)
    br = _bump(gt[:, 2], gt[:, 3], u, v, sigma)
    out = torch.stack([tl, br], dim=1)
    return out[0] if squeeze else out


def iou_heatmap(gt_box, boxes: torch.Tensor) -> torch.Tensor:
    """Per-cell IoU of the regressed boxes (..., H, W, 4) with the ground truth."""
    gt, squeeze = _as_batch(gt_box)
    if boxes.ndim == 3:
        boxes = boxes.unsqueeze(0)
    out = geometry.iou_t(boxes, gt.view(-1, 1, 1, 4).to(boxes.dtype))
    return out[0] if squeeze else out


def focal_map_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Quality-focal map loss: mean of ``|y - sigmoid(x)|^2 * BCE``.

    Zero exactly when sigmoid(logits) equals the (possibly soft) target.
    """
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(logits.shape)} vs {tuple(target.shape)}")
    p = torch.sigmoid(logits)
    bce = F.binary_cross_entropy_with_logits(logits, target, reduction="none")
    return ((target - p).abs() ** 2 * bce).mean()


def decode_argmax_cell(score_map: torch.Tensor) -> tuple[int, int]:
    """(H, W) map -> (row, col) of the best cell."""
    if score_map.ndim != 2:
        raise ValueError("expected a single (H, W) map")
    flat = int(torch.argmax(score_map.reshape(-1)))
    return flat // score_map.shape[1], flat % score_map.shape[1]


def corner_expectation_decode(corner_logits: torch.Tensor) -> torch.Tensor:
    """Softmax-expectation decode of (2, H, W) corner logits to a corner box.

    Differentiable; the second corner is clamped to keep x2 >= x1, y2 >= y1,
    and everything lands in [0, 1].
    """
    if corner_logits.ndim != 3 or corner_logits.shape[0] != 2:
        raise ValueError("expected corner logits of shape (2, H, W)")
    _, h, w = corner_logits.shape
    u, v = _grid_centers(h, w, corner_logits.dtype, corner_logits.device)
    probs = torch.softmax(corner_logits.reshape(2, -1), dim=-1).reshape(2, h, w)
    xs = (probs.sum(dim=1) * u).sum(dim=-1)
    ys = (probs.sum(dim=2) * v).sum(dim=-1)
    x1, y1 = xs[0], ys[0]
    x2 = torch.maximum(xs[1], x1)
    y2 = torch.maximum(ys[1], y1)
    return torch.stack([x1, y1, x2, y2]).clamp(0.0, 1.0)
