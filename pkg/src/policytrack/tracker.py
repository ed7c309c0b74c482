"""Sequence inference: run a trained model as an online tracker.

The first annotated box seeds the template (one crop, kept for the whole
sequence) and the first search window. Every later window is centered on the
previous prediction, so errors compound realistically. Cell selection is
greedy by default; "sample" draws from the policy and "random" ignores the
policy entirely (the uniform-random floor used as a control).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import geometry
from .model import PolicyTrackNet

POLICIES = ("argmax", "sample", "random")
MIN_BOX_PX = 2.0


@dataclass
class Tracker:
    model: PolicyTrackNet
    template_factor: float = 2.0
    search_factor: float = 4.0
    policy: str = "argmax"
    seed: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")

    def _select_cell(self, logits: torch.Tensor, gen: torch.Generator) -> int:
        flat = logits.reshape(-1)
        if self.policy == "argmax":
            return int(torch.argmax(flat))
        if self.policy == "random":
            return int(torch.randint(flat.numel(), (1,), generator=gen))
        probs = torch.softmax(flat, dim=-1)
        return int(torch.multinomial(probs, 1, generator=gen))

    @torch.no_grad()
    def track(self, frames, init_box) -> np.ndarray:
        """Track through ``frames`` (iterable of HxWx3 uint8); returns (T, 4) pixel boxes.

        ``init_box`` is the corner-form box on the first frame; the first
        output row echoes it back, predictions start at the second frame.
        """
        cfg = self.model.cfg
        gen = torch.Generator().manual_seed(self.seed)
        self.model.eval()
        prev = np.asarray(geometry.as_box(init_box), dtype=np.float64)
        template = None
        state = None
        results = []
        for t, frame in enumerate(frames):
            frame = np.asarray(frame)
            ih, iw = frame.shape[:2]
            if template is None:
                zwin = geometry.crop_window(prev, self.template_factor)
                patch = geometry.crop_patch(frame, zwin, cfg.template_size)
                template = torch.from_numpy(patch.transpose(2, 0, 1) / 255.0).float().unsqueeze(0)
            xwin = geometry.crop_window(prev, self.search_factor)
            patch = geometry.crop_patch(frame, xwin, cfg.search_size)
            search = torch.from_numpy(patch.transpose(2, 0, 1) / 255.0).float().unsqueeze(0)
            out, state = self.model.forward_frame(template, search, state)
            if t == 0:
                results.append(prev.copy())
                continue
            cell = self._select_cell(out.logits[0], gen)
            i, j = cell // cfg.grid_size, cell % cfg.grid_size
            box = out.boxes[0, i, j].numpy().astype(np.float64)
            box = geometry.window_to_image(box, xwin)
            prev = _sanitize_box(box, iw, ih)
            results.append(prev.copy())
        if not results:
            raise ValueError("no frames to track")
        return np.stack(results)


def _sanitize_box(box: np.ndarray, iw: int, ih: int) -> np.ndarray:
    """Keep the prediction usable as the next window: center inside the
    image, size neither collapsed below a couple of pixels nor blown up past
    the image itself (an oversized box would grow the next window, making
    every following box larger still)."""
    cx = float(np.clip((box[0] + box[2]) / 2, 0.0, iw))
    cy = float(np.clip((box[1] + box[3]) / 2, 0.0, ih))
    w = min(max(float(box[2] - box[0]), MIN_BOX_PX), iw)
    h = min(max(float(box[3] - box[1]), MIN_BOX_PX), ih)
    return np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])


def track_sequence(model: PolicyTrackNet, seq, **kwargs) -> np.ndarray:
    """Track an in-memory or lazily loaded sequence from its first gt box."""
    tracker = Tracker(model, **kwargs)
    if hasattr(seq, "frames"):
        frames = seq.frames
    else:
        frames = (seq.load_frame(t) for t in range(len(seq)))
    return tracker.track(frames, np.asarray(seq.boxes[0]))
