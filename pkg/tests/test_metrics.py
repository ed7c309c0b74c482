import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from policytrack import metrics


def brute_success(ious, thresholds):
    out = []
    for t in thresholds:
        hits = sum(1 for v in ious if v > t)
        out.append(hits / len(ious))
    return np.array(out)


def test_default_threshold_grid():
    assert np.array_equal(metrics.SUCCESS_THRESHOLDS, np.arange(21) / 20.0)
    assert metrics.SUCCESS_THRESHOLDS[10] == 0.5  # exact in binary floating point


def test_success_curve_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        ious = rng.uniform(0, 1, rng.integers(1, 40))
        curve = metrics.success_curve(ious)
        assert np.array_equal(curve.values, brute_success(ious, curve.thresholds))


def test_success_strict_inequality():
    # IoU exactly at a threshold does not count as success there
    curve = metrics.success_curve([0.5])
    assert curve.values[10] == 0.0
    assert curve.values[9] == 1.0


def test_auc_hand_value():
    assert metrics.auc([0.5, 0.7]) == pytest.approx(4 / 7, abs=1e-15)
    assert metrics.auc([1.0]) == pytest.approx(20 / 21)
    assert metrics.auc([0.0]) == 0.0


def test_success_curve_rejects_bad_ious():
    with pytest.raises(ValueError):
        metrics.success_curve([])
    with pytest.raises(ValueError):
        metrics.success_curve([1.2])


def test_success_curve_non_increasing_guard():
    with pytest.raises(ValueError):
        metrics.SuccessCurve(np.array([0.0, 1.0]), np.array([0.2, 0.8]))


def test_precision_inclusive_at_threshold():
    pred = np.array([[0, 0, 10, 10]], dtype=float)
    gt = np.array([[20, 0, 30, 10]], dtype=float)  # centers exactly 20 px apart
    assert metrics.precision(pred, gt) == 1.0
    gt[:, [0, 2]] += 0.5
    assert metrics.precision(pred, gt) == 0.0


def test_precision_mismatched_lengths():
    with pytest.raises(ValueError):
        metrics.precision(np.zeros((2, 4)), np.zeros((3, 4)))


def test_norm_precision_curve_and_skips():
    pred = np.array([[0, 0, 10, 10], [0, 0, 10, 10]], dtype=float)
    gt = np.array([[1, 0, 11, 10], [5, 5, 5, 5]], dtype=float)  # second is degenerate
    curve, skipped = metrics.norm_precision_curve(pred, gt)
    assert skipped == 1
    assert curve.shape == (51,)
    # normalized error is 0.1 of gt width: thresholds >= 0.1 succeed
    assert curve[10] == 1.0 and curve[9] == 0.0


def test_norm_precision_all_degenerate():
    with pytest.raises(ValueError):
        metrics.norm_precision(np.zeros((1, 4)), np.zeros((1, 4)))


def test_ao_sr_strict():
    ao, sr05, sr075 = metrics.ao_sr([0.5, 0.75, 0.8])
    assert ao == pytest.approx((0.5 + 0.75 + 0.8) / 3)
    assert sr05 == pytest.approx(2 / 3)  # 0.5 itself excluded
    assert sr075 == pytest.approx(1 / 3)  # 0.75 itself excluded


def _fake_pair(n, offset, rng):
    gt = rng.uniform(5, 20, (n, 4))
    gt[:, 2:] = gt[:, :2] + rng.uniform(4, 10, (n, 2))
    pred = gt + offset
    return pred, gt


def test_evaluate_sequences_absent_exclusion():
    rng = np.random.default_rng(4)
    pred, gt = _fake_pair(10, 0.0, rng)
    pred[5] += 100  # a gross failure on frame 5
    absent = np.zeros(10, dtype=np.uint8)
    with_fail = metrics.evaluate_sequences({"a": pred}, {"a": gt}, {"a": absent})
    absent[5] = 1
    excluded = metrics.evaluate_sequences({"a": pred}, {"a": gt}, {"a": absent})
    assert excluded.auc > with_fail.auc
    assert excluded.skipped_frames == 1
    assert excluded.ao == pytest.approx(1.0)


def test_evaluate_sequences_equal_sequence_weighting():
    rng = np.random.default_rng(8)
    p1, g1 = _fake_pair(4, 0.0, rng)  # perfect, short
    p2, g2 = _fake_pair(16, 100.0, rng)  # all misses, long
    rep = metrics.evaluate_sequences({"a": p1, "b": p2}, {"a": g1, "b": g2})
    # per-sequence mean, not frame-pooled: (auc(1.0 ious) + 0) / 2
    assert rep.auc == pytest.approx((20 / 21) / 2)
    assert set(rep.per_sequence) == {"a", "b"}


def test_evaluate_sequences_name_mismatch():
    with pytest.raises(ValueError):
        metrics.evaluate_sequences({"a": np.zeros((1, 4))}, {"b": np.zeros((1, 4))})


def test_evaluate_sequences_length_mismatch():
    with pytest.raises(ValueError):
        metrics.evaluate_sequences(
            {"a": np.zeros((2, 4))}, {"a": np.zeros((3, 4))}
        )


def test_report_text_format():
    rng = np.random.default_rng(1)
    pred, gt = _fake_pair(6, 0.5, rng)
    rep = metrics.evaluate_sequences({"s": pred}, {"s": gt})
    text = rep.as_text()
    assert "auc=" in text and "parse_warnings=0" in text
    assert text.endswith("\n")


def test_success_csv_and_svg(tmp_path):
    curve = metrics.success_curve(np.linspace(0.05, 0.95, 10))
    csv_path = tmp_path / "curve.csv"
    svg_path = tmp_path / "curve.svg"
    metrics.write_success_csv(curve, csv_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "threshold,success"
    assert len(lines) == 22
    metrics.write_success_svg(curve, svg_path, title="t")
    root = ET.fromstring(svg_path.read_text())
    assert root.tag.endswith("svg")
    assert any(child.tag.endswith("polyline") for child in root)
