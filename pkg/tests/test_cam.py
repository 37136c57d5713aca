import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import nn

from nrrdd.cam import (CamMap, compute_cam, compute_cam_batch, finalize_cam,
                       non_critical_mask, save_heatmap)
from nrrdd.snapshot import ModelSnapshot


class _ConvFeatures(nn.Module):
    """Fixed conv features with a controllable linear head, for exact CAM oracles."""

    def __init__(self, out_channels: int, num_classes: int, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.features = nn.Conv2d(3, out_channels, 3, padding=1)
        self.classifier = nn.Linear(out_channels, num_classes)

    def forward_features(self, x):
        return self.features(x)

    def forward(self, x):
        return self.classifier(self.forward_features(x).mean(dim=(2, 3)))


def _snap(module, num_classes, hw=8):
    module.eval()
    return ModelSnapshot("custom-conv", module, num_classes, (3, hw, hw),
                         np.zeros(3, dtype=np.float32), np.ones(3, dtype=np.float32))


@pytest.fixture()
def conv_snap():
    return _snap(_ConvFeatures(2, 3), 3)


@pytest.fixture()
def image():
    return np.random.default_rng(0).random((3, 8, 8)).astype(np.float32)


def test_cam_zero_weight_row_gives_zero_map(conv_snap, image):
    with torch.no_grad():
        conv_snap.module.classifier.weight[1].zero_()
    cam = compute_cam(conv_snap, image, 1)
    assert np.all(cam.values == 0)


def test_cam_single_channel_identity(image):
    snap = _snap(_ConvFeatures(1, 2), 2)
    with torch.no_grad():
        snap.module.classifier.weight.fill_(1.0)
    cam = compute_cam(snap, image, 0)
    fmap = snap.module.forward_features(
        torch.from_numpy(image[None])).detach().numpy()[0, 0]
    assert np.allclose(cam.values, fmap, atol=1e-6)


def test_cam_two_channel_hand_loop(conv_snap, image):
    cam = compute_cam(conv_snap, image, 2)
    fmap = conv_snap.module.forward_features(
        torch.from_numpy(image[None])).detach().numpy()[0]
    a, b = conv_snap.module.classifier.weight.detach().numpy()[2]
    expected = np.empty_like(fmap[0])
    for i in range(fmap.shape[1]):
        for j in range(fmap.shape[2]):
            expected[i, j] = a * fmap[0, i, j] + b * fmap[1, i, j]
    assert np.allclose(cam.values, expected, atol=1e-5)


def test_cam_linear_in_classifier_weights(conv_snap, image):
    w0 = conv_snap.module.classifier.weight.detach().clone()
    cam_w = compute_cam(conv_snap, image, 0).values
    with torch.no_grad():
        conv_snap.module.classifier.weight.copy_(2 * w0)
    cam_2w = compute_cam(conv_snap, image, 0).values
    assert np.abs(cam_2w - 2 * cam_w).max() < 1e-5


def test_cam_class_out_of_range(conv_snap, image):
    with pytest.raises(ValueError):
        compute_cam(conv_snap, image, 3)


def test_cam_batch_matches_single(conv_snap, image):
    images = np.stack([image, image * 0.5])
    batch = compute_cam_batch(conv_snap, images, [0, 1])
    single0 = compute_cam(conv_snap, images[0], 0).values
    single1 = compute_cam(conv_snap, images[1], 1).values
    assert np.allclose(batch[0], single0, atol=1e-6)
    assert np.allclose(batch[1], single1, atol=1e-6)


# ---------------------------------------------------------------------------
# finalize_cam
# ---------------------------------------------------------------------------

def test_finalize_constant_map_is_all_zeros():
    cam = finalize_cam(CamMap(np.full((4, 4), 3.7, dtype=np.float32), 0), (8, 8))
    assert cam.normalized
    assert np.all(cam.values == 0)


def test_finalize_minmax_hand_case():
    raw = CamMap(np.array([[0.0, 2.0], [1.0, 4.0]], dtype=np.float32), 0)
    out = finalize_cam(raw, (2, 2))
    assert np.allclose(out.values, [[0.0, 0.5], [0.25, 1.0]], atol=1e-7)


def test_finalize_bilinear_corners_preserved():
    raw_vals = np.array([[0.0, 1.0], [2.0, 3.0]], dtype=np.float32)
    out = finalize_cam(CamMap(raw_vals, 0), (4, 4))
    # aligned corners: the four corner pixels equal the min-max scaled originals
    assert out.values[0, 0] == pytest.approx(0.0, abs=1e-6)
    assert out.values[0, -1] == pytest.approx(1 / 3, abs=1e-6)
    assert out.values[-1, 0] == pytest.approx(2 / 3, abs=1e-6)
    assert out.values[-1, -1] == pytest.approx(1.0, abs=1e-6)


def test_finalize_rejects_degenerate_target():
    raw = CamMap(np.zeros((4, 4), dtype=np.float32), 0)
    with pytest.raises(ValueError):
        finalize_cam(raw, (2, 2))
    with pytest.raises(ValueError):
        finalize_cam(raw, (0, 8))


# ---------------------------------------------------------------------------
# non_critical_mask
# ---------------------------------------------------------------------------

def _norm_cam(values):
    return CamMap(np.asarray(values, dtype=np.float32), 0, normalized=True)


def test_mask_formula_cases():
    m = non_critical_mask(_norm_cam([[0.7]]), 0.5)
    assert m.values[0, 0] == 0.0
    m = non_critical_mask(_norm_cam([[0.2]]), 0.5)
    assert m.values[0, 0] == pytest.approx(0.3, abs=1e-7)
    m = non_critical_mask(_norm_cam([[0.5]]), 0.5)
    assert m.values[0, 0] == 0.0


def test_mask_rejects_unnormalized_and_bad_epsilon():
    raw = CamMap(np.zeros((2, 2), dtype=np.float32), 0, normalized=False)
    with pytest.raises(ValueError):
        non_critical_mask(raw, 0.5)
    with pytest.raises(ValueError):
        non_critical_mask(_norm_cam(np.zeros((2, 2))), 0.0)
    with pytest.raises(ValueError):
        non_critical_mask(_norm_cam(np.zeros((2, 2))), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9]))
def test_mask_algebra_properties(seed, eps):
    rng = np.random.default_rng(seed)
    c = rng.random((6, 6)).astype(np.float32)
    m = non_critical_mask(_norm_cam(c), eps).values
    assert np.array_equal(m, np.maximum(0.0, eps - c).astype(np.float32))
    assert np.all(m >= 0) and np.all(m <= eps)
    assert np.array_equal(m > 0, c < eps)
    # pointwise anti-monotone and 1-Lipschitz in C
    c2 = np.clip(c + rng.random(c.shape).astype(np.float32) * 0.2, 0, 1)
    m2 = non_critical_mask(_norm_cam(c2), eps).values
    assert np.all(m2 <= m + 1e-7)
    assert np.all(np.abs(m2 - m) <= np.abs(c2 - c) + 1e-6)


def test_save_heatmap(tmp_path):
    path = tmp_path / "cam.png"
    save_heatmap(np.random.default_rng(0).random((8, 8)), str(path))
    from PIL import Image

    img = Image.open(path)
    assert img.size == (8, 8)
