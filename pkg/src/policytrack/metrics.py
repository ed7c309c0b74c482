"""Tracking evaluation metrics: success curve, AUC, precision, AO/SR.

Conventions follow the common single-object-tracking toolkits: the success
indicator is strict (IoU > threshold) on a 21-point grid; precision metrics
use <= at their thresholds (20 px for raw precision, a 51-point grid up to
0.5 for the size-normalized variant).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import geometry

SUCCESS_THRESHOLDS = np.arange(21) / 20.0
NORM_PRECISION_THRESHOLDS = np.arange(51) / 100.0
PRECISION_THRESHOLD_PX = 20.0


@dataclass
class SuccessCurve:
    thresholds: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.thresholds.shape != self.values.shape:
            raise ValueError("thresholds and values must have matching lengths")
        if np.any(np.diff(self.values) > 0):
            raise ValueError("success curve must be non-increasing in the threshold")


def _check_ious(ious) -> np.ndarray:
    arr = np.asarray(ious, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty IoU list")
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError("IoU values must lie in [0, 1]")
    return arr.ravel()


def success_curve(ious, thresholds=None) -> SuccessCurve:
    """Fraction of frames with IoU strictly above each threshold."""
    arr = _check_ious(ious)
    thr = SUCCESS_THRESHOLDS if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    values = (arr[None, :] > thr[:, None]).mean(axis=1)
    return SuccessCurve(thr, values)


def auc(ious) -> float:
    """Mean of the success curve over the default 21-threshold grid."""
    return float(success_curve(ious).values.mean())


def _centers(boxes) -> np.ndarray:
    return geometry.box_center(np.asarray(boxes, dtype=np.float64).reshape(-1, 4))


def precision(pred, gt, threshold_px: float = PRECISION_THRESHOLD_PX) -> float:
    """Fraction of frames whose center distance is <= threshold_px pixels."""
    p = _centers(pred)
    g = _centers(gt)
    if len(p) != len(g):
        raise ValueError(f"length mismatch: {len(p)} predictions vs {len(g)} ground truths")
    if len(p) == 0:
        raise ValueError("empty box lists")
    dist = np.linalg.norm(p - g, axis=1)
    return float((dist <= threshold_px).mean())


def norm_precision_curve(pred, gt) -> tuple[np.ndarray, int]:
    """Size-normalized precision over the 51-point grid, plus skipped-frame count.

    The center error is scaled componentwise by the ground-truth width and
    height; frames with a zero-size ground truth are skipped.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(gt)} ground truths")
    if len(pred) == 0:
        raise ValueError("empty box lists")
    gw = gt[:, 2] - gt[:, 0]
    gh = gt[:, 3] - gt[:, 1]
    ok = (gw > 0) & (gh > 0)
    skipped = int((~ok).sum())
    if not np.any(ok):
        raise ValueError("all ground-truth boxes are degenerate")
    dc = _centers(pred[ok]) - _centers(gt[ok])
    err = np.hypot(dc[:, 0] / gw[ok], dc[:, 1] / gh[ok])
    curve = (err[None, :] <= NORM_PRECISION_THRESHOLDS[:, None]).mean(axis=1)
    return curve, skipped


def norm_precision(pred, gt) -> float:
    """Mean of the size-normalized precision curve."""
    curve, _ = norm_precision_curve(pred, gt)
    return float(curve.mean())


def ao_sr(ious) -> tuple[float, float, float]:
    """(average overlap, SR@0.5, SR@0.75) with strict > at the SR thresholds."""
    arr = _check_ious(ious)
    return float(arr.mean()), float((arr > 0.5).mean()), float((arr > 0.75).mean())


@dataclass
class EvalReport:
    auc: float
    precision: float
    norm_precision: float
    ao: float
    sr_05: float
    sr_075: float
    curve: SuccessCurve
    per_sequence: dict[str, dict[str, float]] = field(default_factory=dict)
    skipped_frames: int = 0
    parse_warnings: int = 0

    def as_text(self) -> str:
        lines = [
            f"auc={self.auc:.6f}",
            f"precision={self.precision:.6f}",
            f"norm_precision={self.norm_precision:.6f}",
            f"ao={self.ao:.6f}",
            f"sr_05={self.sr_05:.6f}",
            f"sr_075={self.sr_075:.6f}",
            f"skipped_frames={self.skipped_frames}",
            f"parse_warnings={self.parse_warnings}",
        ]
        for name in sorted(self.per_sequence):
            for key, val in self.per_sequence[name].items():
                lines.append(f"seq.{name}.{key}={val:.6f}")
        return "\n".join(lines) + "\n"


def evaluate_sequences(
    results: dict[str, np.ndarray],
    groundtruth: dict[str, np.ndarray],
    absent: dict[str, np.ndarray] | None = None,
) -> EvalReport:
    """Aggregate tracking metrics over named sequences.

    Per-sequence metrics are averaged with equal weight; frames flagged
    absent in the ground truth are excluded. Sequence sets must match and
    each result must have one box per annotated frame.
    """
    if set(results) != set(groundtruth):
        raise ValueError("result and ground-truth sequence names differ")
    if not results:
        raise ValueError("no sequences to evaluate")
    per_seq = {}
    curves = []
    skipped_total = 0
    for name in sorted(results):
        pred = np.asarray(results[name], dtype=np.float64).reshape(-1, 4)
        gt = np.asarray(groundtruth[name], dtype=np.float64).reshape(-1, 4)
        if len(pred) != len(gt):
            raise ValueError(
                f"sequence {name}: {len(pred)} result frames vs {len(gt)} annotated frames"
            )
        keep = np.ones(len(gt), dtype=bool)
        if absent is not None and name in absent:
            keep &= ~np.asarray(absent[name], dtype=bool)
        if not np.any(keep):
            skipped_total += len(gt)
            continue
        skipped_total += int((~keep).sum())
        pred = pred[keep]
        gt = gt[keep]
        ious = geometry.iou(pred, gt)
        curve = success_curve(ious)
        curves.append(curve.values)
        ao, sr05, sr075 = ao_sr(ious)
        np_curve, np_skipped = norm_precision_curve(pred, gt)
        skipped_total += np_skipped
        per_seq[name] = {
            "auc": float(curve.values.mean()),
            "precision": precision(pred, gt),
            "norm_precision": float(np_curve.mean()),
            "ao": ao,
            "sr_05": sr05,
            "sr_075": sr075,
        }
    if not per_seq:
        raise ValueError("no sequences with visible frames to evaluate")

    def mean_of(key):
        return float(np.mean([m[key] for m in per_seq.values()]))

    return EvalReport(
        auc=mean_of("auc"),
        precision=mean_of("precision"),
        norm_precision=mean_of("norm_precision"),
        ao=mean_of("ao"),
        sr_05=mean_of("sr_05"),
        sr_075=mean_of("sr_075"),
        curve=SuccessCurve(SUCCESS_THRESHOLDS, np.mean(curves, axis=0)),
        per_sequence=per_seq,
        skipped_frames=skipped_total,
    )


def write_success_csv(curve: SuccessCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "success"])
        for t, v in zip(curve.thresholds, curve.values):
            writer.writerow([f"{t:.2f}", f"{v:.6f}"])


def write_success_svg(curve: SuccessCurve, path, title: str = "Success plot") -> None:
    """Emit a self-contained SVG success plot (no plotting dependency)."""
    w, h, ml, mb, mt, mr = 480, 360, 60, 50, 30, 20
    px = lambda t: ml + t * (w - ml - mr)
    py = lambda v: h - mb - v * (h - mb - mt)
    pts = " ".join(f"{px(t):.1f},{py(v):.1f}" for t, v in zip(curve.thresholds, curve.values))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.0f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{ml}" y1="{h - mb}" x2="{w - mr}" y2="{h - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{h - mb}" stroke="black"/>',
    ]
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<text x="{px(t):.0f}" y="{h - mb + 18}" text-anchor="middle" font-size="11">{t:.2f}</text>'
        )
        parts.append(
            f'<line x1="{px(t):.1f}" y1="{h - mb}" x2="{px(t):.1f}" y2="{h - mb + 4}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{ml - 8}" y="{py(t) + 4:.0f}" text-anchor="end" font-size="11">{t:.2f}</text>'
        )
        parts.append(f'<line x1="{ml - 4}" y1="{py(t):.1f}" x2="{ml}" y2="{py(t):.1f}" stroke="black"/>')
    parts.append(
        f'<text x="{(ml + w - mr) / 2:.0f}" y="{h - 12}" text-anchor="middle" font-size="12">overlap threshold</text>'
    )
    parts.append(
        f'<text x="16" y="{(mt + h - mb) / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {(mt + h - mb) / 2:.0f})">success rate</text>'
    )
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-width="2"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
