"""Class activation maps and the pixel-wise non-critical update mask."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .models import forward
from .snapshot import ModelSnapshot


@dataclass
class CamMap:
    """Per-pixel class evidence; `normalized` marks min-max scaling to [0, 1]."""

    values: np.ndarray
    class_id: int
    normalized: bool = False


@dataclass
class MaskMap:
    """Non-critical update weights: 0 on salient pixels, up to `epsilon` elsewhere."""

    values: np.ndarray
    epsilon: float


def compute_cam(snapshot: ModelSnapshot, image, class_id: int) -> CamMap:
    """Raw activation map at feature resolution: class weights dotted with feature maps."""
    if not 0 <= class_id < snapshot.num_classes:
        raise ValueError(f"class_id {class_id} out of range [0, {snapshot.num_classes})")
    trace = forward(snapshot, image)
    fmap = trace.feature_maps[0]
    w = torch.as_tensor(snapshot.classifier_w[class_id], dtype=fmap.dtype)
    raw = (w.view(-1, 1, 1) * fmap).sum(dim=0)
    return CamMap(values=raw.cpu().numpy().astype(np.float32), class_id=class_id,
                  normalized=False)


def compute_cam_batch(snapshot: ModelSnapshot, images, class_ids) -> np.ndarray:
    """Raw maps for a batch, one target class per image; shape (B, hf, wf)."""
    trace = forward(snapshot, images)
    w = torch.as_tensor(snapshot.classifier_w, dtype=trace.feature_maps.dtype)
    sel = w[torch.as_tensor(np.asarray(class_ids, dtype=np.int64))]
    cams = torch.einsum("bf,bfhw->bhw", sel, trace.feature_maps)
    return cams.cpu().numpy().astype(np.float32)


def finalize_cam(raw: CamMap, target_hw: tuple[int, int]) -> CamMap:
    """Bilinear upsample (aligned corners) then min-max normalize to [0, 1].

    A constant raw map has no salient region and normalizes to all zeros.
    """
    th, tw = int(target_hw[0]), int(target_hw[1])
    h, w = raw.values.shape
    if th < h or tw < w or th < 1 or tw < 1:
        raise ValueError(f"target size {(th, tw)} smaller than raw map {(h, w)}")
    t = torch.from_numpy(np.asarray(raw.values, dtype=np.float32))[None, None]
    up = F.interpolate(t, size=(th, tw), mode="bilinear", align_corners=True)[0, 0]
    vals = up.numpy()
    lo, hi = float(vals.min()), float(vals.max())
    # interpolating a constant map wobbles by ~1 ulp; treat such spans as degenerate
    if hi - lo > 1e-5 * max(1.0, abs(hi), abs(lo)):
        vals = (vals - lo) / (hi - lo)
    else:
        vals = np.zeros_like(vals)
    return CamMap(values=vals.astype(np.float32), class_id=raw.class_id, normalized=True)


def normalize_cam_values(raw_values: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """finalize_cam on bare arrays (batch plumbing)."""
    return finalize_cam(CamMap(raw_values, 0, False), target_hw).values


def non_critical_mask(cam: CamMap, epsilon: float) -> MaskMap:
    """Pointwise max{0, epsilon - C}: zero where evidence is strong, larger elsewhere."""
    if not cam.normalized:
        raise ValueError("non_critical_mask requires a normalized CAM")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    values = np.maximum(0.0, epsilon - cam.values).astype(np.float32)
    return MaskMap(values=values, epsilon=float(epsilon))


def save_heatmap(values: np.ndarray, path: str) -> None:
    """Dump a [0,1]-scaled map as a lossless grayscale PNG."""
    from PIL import Image

    arr = np.asarray(values, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    scaled = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    Image.fromarray((scaled * 255).round().astype(np.uint8), mode="L").save(path)
