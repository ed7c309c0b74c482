"""Synthetic video world generator for tracking experiments.

Sequences are rendered on a small RGB canvas: one target shape undergoing a
bounced random walk with oscillating scale, plus hue-perturbed distractors,
an optional occlusion event, and global brightness drift. The train/val
splits and the shifted_test split use disjoint shape families and disjoint
color palettes, so shifted_test probes out-of-family generalization.

All randomness flows through ``numpy.random.Generator(PCG64(seed))`` so a
dataset regenerated with the same seed is bit-identical.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import DataError

CANVAS = 128

TRAIN_SHAPES = ("rect", "ellipse", "cross")
SHIFTED_SHAPES = ("triangle", "diamond")

TRAIN_PALETTE = (
    (204, 64, 64),
    (64, 204, 64),
    (64, 64, 204),
    (204, 160, 48),
    (48, 160, 204),
    (160, 48, 204),
)
SHIFTED_PALETTE = (
    (228, 228, 64),
    (64, 228, 228),
    (228, 64, 228),
    (228, 140, 180),
    (140, 228, 120),
)

OCCLUDER_COLOR = (238, 238, 238)
ABSENT_COVERAGE = 0.8


@dataclass
class WorldConfig:
    """Knobs for sequence generation."""

    size: int = CANVAS
    num_frames: int = 64
    num_distractors: int = 2
    occlusion_prob: float = 0.5
    brightness_drift: float = 0.12
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "val", "shifted_test"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.num_frames < 2:
            raise ValueError("num_frames must be >= 2")

    @property
    def shapes(self):
        return SHIFTED_SHAPES if self.split == "shifted_test" else TRAIN_SHAPES

    @property
    def palette(self):
        return SHIFTED_PALETTE if self.split == "shifted_test" else TRAIN_PALETTE


@dataclass
class Sequence:
    """In-memory rendered sequence."""

    name: str
    frames: np.ndarray  # (T, H, W, 3) uint8
    boxes: np.ndarray  # (T, 4) corner boxes in pixels; last-visible box on absent frames
    absent: np.ndarray  # (T,) uint8, 1 when the target is occluded away

    def __len__(self):
        return len(self.frames)


def _shape_mask(kind, cx, cy, hw, hh, size):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dx = (xs - cx) / hw
    dy = (ys - cy) / hh
    if kind == "rect":
        return (np.abs(dx) <= 1) & (np.abs(dy) <= 1)
    if kind == "ellipse":
        return dx * dx + dy * dy <= 1
    if kind == "cross":
        bar = 1.0 / 3.0
        return ((np.abs(dx) <= bar) & (np.abs(dy) <= 1)) | (
            (np.abs(dx) <= 1) & (np.abs(dy) <= bar)
        )
    if kind == "triangle":
        return (np.abs(dy) <= 1) & (np.abs(dx) <= (dy + 1) / 2)
    if kind == "diamond":
        return np.abs(dx) + np.abs(dy) <= 1
    raise ValueError(f"unknown shape kind {kind!r}")


class _Walker:
    """Bounced random walk of a box center with oscillating scale."""

    def __init__(self, rng, size, num_frames, base_hw, base_hh):
        self.rng = rng
        self.size = size
        self.base_hw = base_hw
        self.base_hh = base_hh
        margin = max(base_hw, base_hh) * 1.3 + 2
        self.cx = rng.uniform(margin, size - margin)
        self.cy = rng.uniform(margin, size - margin)
        speed = rng.uniform(0.8, 2.4)
        angle = rng.uniform(0, 2 * np.pi)
        self.vx = speed * np.cos(angle)
        self.vy = speed * np.sin(angle)
        self.scale_amp = rng.uniform(0.05, 0.22)
        self.scale_period = rng.uniform(num_frames / 3, num_frames * 1.5)
        self.scale_phase = rng.uniform(0, 2 * np.pi)
        self.t = 0

    def step(self):
        s = 1 + self.scale_amp * np.sin(2 * np.pi * self.t / self.scale_period + self.scale_phase)
        hw = self.base_hw * s
        hh = self.base_hh * s
        self.cx += self.vx
        self.cy += self.vy
        self.vx += self.rng.normal(0, 0.25)
        self.vy += self.rng.normal(0, 0.25)
        self.vx = float(np.clip(self.vx, -3.0, 3.0))
        self.vy = float(np.clip(self.vy, -3.0, 3.0))
        # reflect off the canvas edges, keeping the whole box inside
        if self.cx - hw < 1:
            self.cx = 2 * (1 + hw) - self.cx
            self.vx = abs(self.vx)
        if self.cx + hw > self.size - 1:
            self.cx = 2 * (self.size - 1 - hw) - self.cx
            self.vx = -abs(self.vx)
        if self.cy - hh < 1:
            self.cy = 2 * (1 + hh) - self.cy
            self.vy = abs(self.vy)
        if self.cy + hh > self.size - 1:
            self.cy = 2 * (self.size - 1 - hh) - self.cy
            self.vy = -abs(self.vy)
        self.t += 1
        return self.cx, self.cy, hw, hh


def _perturb_color(rng, color):
    shift = rng.integers(-48, 49, size=3)
    return tuple(int(np.clip(c + s, 30, 240)) for c, s in zip(color, shift))


def generate_sequence(cfg: WorldConfig, seed: int, name: str | None = None) -> Sequence:
    """Render one sequence deterministically from (cfg, seed)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    size = cfg.size
    shape = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
    color = cfg.palette[int(rng.integers(len(cfg.palette)))]
    bg = int(rng.integers(24, 56))
    background = np.full((size, size, 3), bg, dtype=np.float64)
    background += rng.integers(-6, 7, size=3)

    base_hw = rng.uniform(size * 0.06, size * 0.14)
    base_hh = base_hw * rng.uniform(0.65, 1.55)
    target = _Walker(rng, size, cfg.num_frames, base_hw, base_hh)

    distractors = []
    for _ in range(cfg.num_distractors):
        d_hw = rng.uniform(size * 0.05, size * 0.12)
        d_hh = d_hw * rng.uniform(0.65, 1.55)
        distractors.append(
            (
                cfg.shapes[int(rng.integers(len(cfg.shapes)))],
                _perturb_color(rng, color),
                _Walker(rng, size, cfg.num_frames, d_hw, d_hh),
            )
        )

    occlude = rng.random() < cfg.occlusion_prob
    if occlude:
        occ_start = int(rng.integers(cfg.num_frames // 4, max(cfg.num_frames // 2, cfg.num_frames // 4 + 1)))
        occ_len = int(rng.integers(4, 9))
        occ_hw = rng.uniform(size * 0.12, size * 0.2)
        occ_hh = rng.uniform(size * 0.12, size * 0.2)
    else:
        occ_start, occ_len, occ_hw, occ_hh = -1, 0, 0.0, 0.0

    drift_phase = rng.uniform(0, 2 * np.pi)

    frames = np.empty((cfg.num_frames, size, size, 3), dtype=np.uint8)
    boxes = np.empty((cfg.num_frames, 4), dtype=np.float64)
    absent = np.zeros(cfg.num_frames, dtype=np.uint8)
    last_visible = None

    for t in range(cfg.num_frames):
        canvas = background.copy()
        for d_shape, d_color, walker in distractors:
            dcx, dcy, dhw, dhh = walker.step()
            mask = _shape_mask(d_shape, dcx, dcy, dhw, dhh, size)
            canvas[mask] = d_color

        cx, cy, hw, hh = target.step()
        mask = _shape_mask(shape, cx, cy, hw, hh, size)
        canvas[mask] = color
        box = np.array([cx - hw, cy - hh, cx + hw, cy + hh])

        coverage = 0.0
        if occlude and occ_start <= t < occ_start + occ_len:
            # the occluder tracks the target so mid-event coverage is total
            ramp = 1 - 2 * abs((t - occ_start) / max(occ_len - 1, 1) - 0.5)
            ocx = cx + (1 - ramp) * 3 * occ_hw
            ocy = cy
            occ_box = np.array([ocx - occ_hw, ocy - occ_hh, ocx + occ_hw, ocy + occ_hh])
            omask = _shape_mask("rect", ocx, ocy, occ_hw, occ_hh, size)
            canvas[omask] = OCCLUDER_COLOR
            coverage = geometry.intersection_area(box, occ_box) / geometry.box_area(box)

        if coverage > ABSENT_COVERAGE and last_visible is not None:
            absent[t] = 1
            boxes[t] = last_visible
        else:
            boxes[t] = box
            last_visible = box

        gain = 1 + cfg.brightness_drift * np.sin(2 * np.pi * t / cfg.num_frames + drift_phase)
        frames[t] = np.clip(canvas * gain, 0, 255).astype(np.uint8)

    return Sequence(name or f"{cfg.split}_{seed}", frames, boxes, absent)


# ---------------------------------------------------------------------------
# file formats: binary PPM frames, comma-separated annotations, absence flags


def write_ppm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected a (H, W, 3) uint8 image")
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise DataError(f"{path}: not a binary PPM file")
    # header: magic, width, height, maxval, each optionally preceded by
    # whitespace/comments, then a single whitespace byte before the raster
    pos, fields = 2, []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos)
    return raster.reshape(height, width, 3).copy()


def groundtruth_lines(boxes: np.ndarray):
    """Corner boxes -> annotation lines in x,y,w,h order."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    for x1, y1, x2, y2 in boxes:
        yield f"{x1:.2f},{y1:.2f},{x2 - x1:.2f},{y2 - y1:.2f}"


def parse_groundtruth(path) -> tuple[np.ndarray, int]:
    """Read an annotation file of per-frame x,y,w,h lines.

    Returns (corner boxes (T, 4), warning count). Commas, semicolons, tabs
    and runs of spaces all work as delimiters; malformed lines are skipped
    and counted as warnings.
    """
    rows = []
    warnings = 0
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = [p for p in re.split(r"[,;\s]+", line) if p]
            try:
                vals = [float(p) for p in parts[:4]]
            except ValueError:
                warnings += 1
                continue
            if len(vals) < 4:
                warnings += 1
                continue
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no parsable annotation lines")
    xywh = np.asarray(rows, dtype=np.float64)
    boxes = np.column_stack(
        [xywh[:, 0], xywh[:, 1], xywh[:, 0] + xywh[:, 2], xywh[:, 1] + xywh[:, 3]]
    )
    return boxes, warnings


def write_sequence(seq: Sequence, seq_dir) -> None:
    frames_dir = os.path.join(seq_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    for t, frame in enumerate(seq.frames):
        write_ppm(os.path.join(frames_dir, f"{t:06d}.ppm"), frame)
    with open(os.path.join(seq_dir, "groundtruth.txt"), "w") as fh:
        for line in groundtruth_lines(seq.boxes):
            fh.write(line + "\n")
    with open(os.path.join(seq_dir, "absence.label"), "w") as fh:
        for flag in seq.absent:
            fh.write(f"{int(flag)}\n")


@dataclass
class LoadedSequence:
    name: str
    frame_paths: list[str]
    boxes: np.ndarray
    absent: np.ndarray
    parse_warnings: int = 0

    def load_frame(self, t: int) -> np.ndarray:
        return read_ppm(self.frame_paths[t])

    def __len__(self):
        return len(self.frame_paths)


def load_sequence(seq_dir) -> LoadedSequence:
    frames_dir = os.path.join(seq_dir, "frames")
    if not os.path.isdir(frames_dir):
        raise FileNotFoundError(f"{seq_dir}: missing frames/ directory")
    frame_paths = sorted(
        os.path.join(frames_dir, f) for f in os.listdir(frames_dir) if f.endswith(".ppm")
    )
    if not frame_paths:
        raise FileNotFoundError(f"{seq_dir}: no .ppm frames")
    boxes, warnings = parse_groundtruth(os.path.join(seq_dir, "groundtruth.txt"))
    if len(boxes) != len(frame_paths):
        raise DataError(
            f"{seq_dir}: {len(boxes)} annotation lines for {len(frame_paths)} frames"
        )
    absent_path = os.path.join(seq_dir, "absence.label")
    if os.path.exists(absent_path):
        absent = np.loadtxt(absent_path, dtype=np.int64, ndmin=1).astype(np.uint8)
        if len(absent) != len(frame_paths):
            raise DataError(f"{seq_dir}: absence.label length mismatch")
    else:
        absent = np.zeros(len(frame_paths), dtype=np.uint8)
    name = os.path.basename(os.path.normpath(seq_dir))
    return LoadedSequence(name, frame_paths, boxes, absent, warnings)


def make_dataset(
    root,
    split: str,
    num_sequences: int,
    num_frames: int = 64,
    seed: int = 0,
    **cfg_kwargs,
) -> list[str]:
    """Write ``num_sequences`` rendered sequences under root/split/."""
    cfg = WorldConfig(num_frames=num_frames, split=split, **cfg_kwargs)
    split_dir = os.path.join(root, split)
    os.makedirs(split_dir, exist_ok=True)
    dirs = []
    for i in range(num_sequences):
        name = f"{split}_{i:04d}"
        seq = generate_sequence(cfg, seed=seed * 100003 + i, name=name)
        seq_dir = os.path.join(split_dir, name)
        write_sequence(seq, seq_dir)
        dirs.append(seq_dir)
    return dirs


def load_split(root, split: str) -> list[LoadedSequence]:
    split_dir = os.path.join(root, split)
    if not os.path.isdir(split_dir):
        raise FileNotFoundError(f"no such split directory: {split_dir}")
    seq_dirs = sorted(
        os.path.join(split_dir, d)
        for d in os.listdir(split_dir)
        if os.path.isdir(os.path.join(split_dir, d))
    )
    if not seq_dirs:
        raise FileNotFoundError(f"{split_dir}: no sequence directories")
    return [load_sequence(d) for d in seq_dirs]
