"""Axis-aligned box utilities: overlap measures, coordinate transforms, crop windows.

Boxes are arrays ``[x1, y1, x2, y2]`` in corner form, either in pixel units
(image spans ``[0, W] x [0, H]``, pixel ``c`` covers ``[c, c+1]``) or
normalized to ``[0, 1]``. Most functions are numpy; ``iou_t``/``giou_t`` are
differentiable torch twins for use inside losses. All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


def as_box(b) -> np.ndarray:
    """Convert to a float64 corner-form box array and validate ordering."""
    arr = np.asarray(b, dtype=np.float64)
    if arr.shape[-1] != 4:
        raise ValueError(f"box must have 4 coordinates, got shape {arr.shape}")
    if np.any(arr[..., 2] < arr[..., 0]) or np.any(arr[..., 3] < arr[..., 1]):
        raise ValueError(f"invalid box (x2 < x1 or y2 < y1): {arr!r}")
    return arr


def box_area(b) -> np.ndarray | float:
    b = np.asarray(b, dtype=np.float64)
    return (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])


def box_center(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    return np.stack([(b[..., 0] + b[..., 2]) / 2, (b[..., 1] + b[..., 3]) / 2], axis=-1)


def corner_to_center(b) -> np.ndarray:
    """(x1, y1, x2, y2) -> (cx, cy, w, h)."""
    b = np.asarray(b, dtype=np.float64)
    return np.stack(
        [
            (b[..., 0] + b[..., 2]) / 2,
            (b[..., 1] + b[..., 3]) / 2,
            b[..., 2] - b[..., 0],
            b[..., 3] - b[..., 1],
        ],
        axis=-1,
    )


def center_to_corner(b) -> np.ndarray:
    """(cx, cy, w, h) -> (x1, y1, x2, y2)."""
    b = np.asarray(b, dtype=np.float64)
    return np.stack(
        [
            b[..., 0] - b[..., 2] / 2,
            b[..., 1] - b[..., 3] / 2,
            b[..., 0] + b[..., 2] / 2,
            b[..., 1] + b[..., 3] / 2,
        ],
        axis=-1,
    )


def intersection_area(a, b) -> np.ndarray | float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iw = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    return np.maximum(iw, 0.0) * np.maximum(ih, 0.0)


def iou(a, b) -> np.ndarray | float:
    """Intersection over union in [0, 1]; 0 when both boxes are degenerate.

    Broadcasts over leading dimensions. Raises on boxes with x2 < x1 or
    y2 < y1.
    """
    a = as_box(a)
    b = as_box(b)
    inter = intersection_area(a, b)
    union = box_area(a) + box_area(b) - inter
    out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def giou(a, b) -> np.ndarray | float:
    """Generalized IoU in [-1, 1]: IoU minus enclosing-box slack.

    Falls back to plain IoU when the smallest enclosing box is degenerate.
    """
    a = as_box(a)
    b = as_box(b)
    inter = intersection_area(a, b)
    union = box_area(a) + box_area(b) - inter
    base = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    ew = np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0])
    eh = np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])
    enclosing = ew * eh
    out = np.where(enclosing > 0, base - (enclosing - union) / np.where(enclosing > 0, enclosing, 1.0), base)
    return float(out) if out.ndim == 0 else out


def iou_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Elementwise IoU of (..., 4) corner-box tensors; differentiable."""
    iw = (torch.minimum(a[..., 2], b[..., 2]) - torch.maximum(a[..., 0], b[..., 0])).clamp(min=0)
    ih = (torch.minimum(a[..., 3], b[..., 3]) - torch.maximum(a[..., 1], b[..., 1])).clamp(min=0)
    inter = iw * ih
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    union = area_a + area_b - inter
    return inter / union.clamp(min=1e-9)


def giou_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Elementwise generalized IoU of (..., 4) corner-box tensors."""
    base = iou_t(a, b)
    ew = torch.maximum(a[..., 2], b[..., 2]) - torch.minimum(a[..., 0], b[..., 0])
    eh = torch.maximum(a[..., 3], b[..., 3]) - torch.minimum(a[..., 1], b[..., 1])
    enclosing = (ew * eh).clamp(min=1e-9)
    inter_w = (torch.minimum(a[..., 2], b[..., 2]) - torch.maximum(a[..., 0], b[..., 0])).clamp(min=0)
    inter_h = (torch.minimum(a[..., 3], b[..., 3]) - torch.maximum(a[..., 1], b[..., 1])).clamp(min=0)
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    union = area_a + area_b - inter_w * inter_h
    return base - (enclosing - union) / enclosing


@dataclass(frozen=True)
class CropWindow:
    """Square sampling window in image pixel coordinates."""

    cx: float
    cy: float
    side: float
    out_size: int | None = None

    def __post_init__(self):
        if self.side <= 0:
            raise ValueError(f"window side must be positive, got {self.side}")

    @property
    def rect(self) -> np.ndarray:
        h = self.side / 2
        return np.array([self.cx - h, self.cy - h, self.cx + h, self.cy + h])


def crop_window(gt, factor: float, out_size: int | None = None) -> CropWindow:
    """Square window centered on the box, side = factor * sqrt(w * h)."""
    gt = as_box(gt)
    if factor <= 0:
        raise ValueError(f"crop factor must be positive, got {factor}")
    w = gt[2] - gt[0]
    h = gt[3] - gt[1]
    if w * h <= 0:
        raise ValueError(f"cannot build a crop window around a zero-area box: {gt!r}")
    side = factor * float(np.sqrt(w * h))
    return CropWindow(float(gt[0] + gt[2]) / 2, float(gt[1] + gt[3]) / 2, side, out_size)


def action_cell_center(i: int, j: int, grid_h: int, grid_w: int) -> tuple[float, float]:
    """Normalized (u, v) center of grid cell (i, j); u is horizontal."""
    if not (0 <= i < grid_h and 0 <= j < grid_w):
        raise ValueError(f"cell ({i}, {j}) outside {grid_h}x{grid_w} grid")
    return (j + 0.5) / grid_w, (i + 0.5) / grid_h


def window_to_image(b, window: CropWindow) -> np.ndarray:
    """Map a window-normalized box to image pixel coordinates."""
    b = np.asarray(b, dtype=np.float64)
    x0 = window.cx - window.side / 2
    y0 = window.cy - window.side / 2
    out = np.empty_like(b)
    out[..., 0::2] = b[..., 0::2] * window.side + x0
    out[..., 1::2] = b[..., 1::2] * window.side + y0
    return out


def image_to_window(b, window: CropWindow) -> np.ndarray:
    """Map an image-pixel box to window-normalized coordinates."""
    b = np.asarray(b, dtype=np.float64)
    x0 = window.cx - window.side / 2
    y0 = window.cy - window.side / 2
    out = np.empty_like(b)
    out[..., 0::2] = (b[..., 0::2] - x0) / window.side
    out[..., 1::2] = (b[..., 1::2] - y0) / window.side
    return out


def crop_patch(image: np.ndarray, window: CropWindow, out_size: int | None = None) -> np.ndarray:
    """Bilinearly resample a square window from an image.

    Samples outside the image replicate the border pixel. Returns float32
    (out_size, out_size, C) with the input value range.
    """
    size = out_size if out_size is not None else window.out_size
    if size is None or size <= 0:
        raise ValueError("crop_patch needs a positive output size")
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    ih, iw = img.shape[:2]
    # output pixel centers in image coordinates, then to sample-grid units
    coords = (np.arange(size) + 0.5) * (window.side / size)
    xs = window.cx - window.side / 2 + coords - 0.5
    ys = window.cy - window.side / 2 + coords - 0.5
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    tx = (xs - x0).astype(np.float32)
    ty = (ys - y0).astype(np.float32)
    x0c = np.clip(x0, 0, iw - 1)
    x1c = np.clip(x0 + 1, 0, iw - 1)
    y0c = np.clip(y0, 0, ih - 1)
    y1c = np.clip(y0 + 1, 0, ih - 1)
    f = img.astype(np.float32)
    top = f[y0c][:, x0c] * (1 - tx)[None, :, None] + f[y0c][:, x1c] * tx[None, :, None]
    bot = f[y1c][:, x0c] * (1 - tx)[None, :, None] + f[y1c][:, x1c] * tx[None, :, None]
    return top * (1 - ty)[:, None, None] + bot * ty[:, None, None]
