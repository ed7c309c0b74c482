import numpy as np
import pytest
import torch

from policytrack import geometry


def raster_iou(a, b, size=64):
    """Pixel-counting oracle for integer boxes inside a size x size canvas."""
    ga = np.zeros((size, size), dtype=bool)
    gb = np.zeros((size, size), dtype=bool)
    ga[a[1] : a[3], a[0] : a[2]] = True
    gb[b[1] : b[3], b[0] : b[2]] = True
    inter = np.logical_and(ga, gb).sum()
    union = np.logical_or(ga, gb).sum()
    return inter / union if union else 0.0


def test_iou_identical_box():
    assert geometry.iou([0, 0, 4, 4], [0, 0, 4, 4]) == 1.0


def test_iou_disjoint():
    assert geometry.iou([0, 0, 2, 2], [3, 3, 5, 5]) == 0.0


def test_iou_hand_value():
    # 2x2 overlap of two 4x4 boxes: 4 / (16 + 16 - 4)
    assert geometry.iou([0, 0, 4, 4], [2, 2, 6, 6]) == pytest.approx(4 / 28, abs=0)


def test_iou_matches_raster_oracle():
    rng = np.random.default_rng(7)
    for _ in range(300):
        a = np.sort(rng.integers(0, 33, 4).reshape(2, 2), axis=0).T.ravel()
        b = np.sort(rng.integers(0, 33, 4).reshape(2, 2), axis=0).T.ravel()
        a = np.array([a[0], a[2], a[1], a[3]])
        b = np.array([b[0], b[2], b[1], b[3]])
        assert geometry.iou(a, b) == raster_iou(a, b)


def test_iou_zero_union():
    assert geometry.iou([1, 1, 1, 1], [1, 1, 1, 1]) == 0.0


def test_iou_invalid_box_raises():
    with pytest.raises(ValueError):
        geometry.iou([2, 0, 1, 4], [0, 0, 1, 1])


def test_iou_broadcasts():
    a = np.array([[0, 0, 2, 2], [0, 0, 4, 4]], dtype=float)
    b = np.array([0, 0, 2, 2], dtype=float)
    out = geometry.iou(a, b)
    assert out.shape == (2,)
    assert out[0] == 1.0 and out[1] == pytest.approx(0.25)


def test_giou_equal_boxes():
    assert geometry.giou([0, 0, 3, 3], [0, 0, 3, 3]) == 1.0


def test_giou_disjoint_negative():
    val = geometry.giou([0, 0, 1, 1], [2, 0, 3, 1])
    # enclosing box is 3x1: giou = 0 - (3 - 2) / 3
    assert val == pytest.approx(-1 / 3)


def test_giou_never_exceeds_iou():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = np.sort(rng.uniform(0, 10, 4).reshape(2, 2), axis=0).T.ravel()[[0, 2, 1, 3]]
        b = np.sort(rng.uniform(0, 10, 4).reshape(2, 2), axis=0).T.ravel()[[0, 2, 1, 3]]
        assert geometry.giou(a, b) <= geometry.iou(a, b) + 1e-12


def test_giou_degenerate_falls_back_to_iou():
    assert geometry.giou([1, 1, 1, 1], [1, 1, 1, 1]) == 0.0


def test_torch_variants_match_numpy():
    rng = np.random.default_rng(11)
    a = np.sort(rng.uniform(0, 8, (64, 2, 2)), axis=1).transpose(0, 2, 1).reshape(64, 4)
    b = np.sort(rng.uniform(0, 8, (64, 2, 2)), axis=1).transpose(0, 2, 1).reshape(64, 4)
    a = a[:, [0, 2, 1, 3]]
    b = b[:, [0, 2, 1, 3]]
    ta, tb = torch.tensor(a), torch.tensor(b)
    assert np.allclose(geometry.iou_t(ta, tb).numpy(), geometry.iou(a, b), atol=1e-9)
    assert np.allclose(geometry.giou_t(ta, tb).numpy(), geometry.giou(a, b), atol=1e-9)


def test_corner_center_round_trip():
    rng = np.random.default_rng(5)
    boxes = rng.uniform(0, 1, (32, 4))
    boxes[:, 2:] += boxes[:, :2]
    back = geometry.center_to_corner(geometry.corner_to_center(boxes))
    assert np.allclose(back, boxes)


def test_crop_window_side():
    win = geometry.crop_window([10, 10, 14, 18], factor=2.0)
    assert win.cx == 12 and win.cy == 14
    assert win.side == pytest.approx(2 * np.sqrt(4 * 8))


def test_crop_window_rejects_degenerate():
    with pytest.raises(ValueError):
        geometry.crop_window([5, 5, 5, 9], factor=2.0)
    with pytest.raises(ValueError):
        geometry.crop_window([0, 0, 2, 2], factor=0.0)


def test_action_cell_center():
    assert geometry.action_cell_center(0, 0, 8, 8) == (0.5 / 8, 0.5 / 8)
    assert geometry.action_cell_center(7, 3, 8, 8) == (3.5 / 8, 7.5 / 8)
    with pytest.raises(ValueError):
        geometry.action_cell_center(8, 0, 8, 8)


def test_window_image_round_trip():
    win = geometry.CropWindow(20.0, 30.0, 16.0)
    rng = np.random.default_rng(2)
    boxes = rng.uniform(0, 1, (10, 4))
    back = geometry.image_to_window(geometry.window_to_image(boxes, win), win)
    assert np.allclose(back, boxes, atol=1e-12)


def test_window_to_image_known():
    win = geometry.CropWindow(10.0, 10.0, 8.0)
    out = geometry.window_to_image(np.array([0.5, 0.5, 1.0, 1.0]), win)
    assert np.allclose(out, [10, 10, 14, 14])


def test_crop_patch_constant_image():
    img = np.full((32, 32, 3), 77, dtype=np.uint8)
    win = geometry.CropWindow(16.0, 16.0, 40.0)  # extends past the border
    patch = geometry.crop_patch(img, win, out_size=16)
    assert patch.shape == (16, 16, 3)
    assert np.all(patch == 77.0)


def test_crop_patch_identity_window():
    rng = np.random.default_rng(9)
    img = rng.integers(0, 255, (16, 16, 3)).astype(np.uint8)
    win = geometry.CropWindow(8.0, 8.0, 16.0)
    patch = geometry.crop_patch(img, win, out_size=16)
    assert np.allclose(patch, img.astype(np.float32))


def test_crop_patch_linear_ramp():
    # bilinear sampling reproduces a linear ramp exactly in the interior
    img = np.tile(np.arange(32, dtype=np.float32)[None, :, None], (32, 1, 1))
    win = geometry.CropWindow(16.0, 16.0, 8.0)
    patch = geometry.crop_patch(img, win, out_size=8)
    expected = 16.0 - 4.0 + (np.arange(8) + 0.5) - 0.5
    assert np.allclose(patch[0, :, 0], expected, atol=1e-5)


def test_crop_patch_requires_size():
    with pytest.raises(ValueError):
        geometry.crop_patch(np.zeros((4, 4, 3)), geometry.CropWindow(2, 2, 2))
