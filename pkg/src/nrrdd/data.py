"""Desk-scale image datasets: a procedural shapes benchmark and CIFAR-10 ingestion."""
from __future__ import annotations

import os
import pickle
from dataclasses import dataclass, field

import numpy as np

SHAPE_NAMES = [
    "disk", "ring", "square", "frame", "tri_up",
    "tri_down", "plus", "cross", "hstripes", "vstripes",
]


@dataclass
class ImageDataset:
    """In-memory labeled image set; pixels are float32 in [0, 1], layout (N, c, h, w)."""

    name: str
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, c, h, w), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError("images/labels length mismatch")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def class_indices(self, class_id: int) -> np.ndarray:
        return np.nonzero(self.labels == class_id)[0]

    def channel_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel mean and std over all pixels (std floored to avoid zero division)."""
        flat = self.images.transpose(1, 0, 2, 3).reshape(self.images.shape[1], -1)
        mean = flat.mean(axis=1)
        std = np.maximum(flat.std(axis=1), 1e-4)
        return mean.astype(np.float32), std.astype(np.float32)


def subset_dataset(ds: ImageDataset, classes: list[int] | None = None,
                   per_class: int | None = None) -> ImageDataset:
    """Deterministic subset: keep the first `per_class` items of each selected class.

    Labels are remapped to 0..len(classes)-1 in the order given.
    """
    if classes is None:
        classes = list(range(ds.num_classes))
    keep: list[np.ndarray] = []
    for new_label, c in enumerate(classes):
        idx = ds.class_indices(int(c))
        if per_class is not None:
            idx = idx[:per_class]
        keep.append(idx)
    order = np.concatenate(keep) if keep else np.array([], dtype=np.int64)
    images = ds.images[order]
    labels = np.concatenate([
        np.full(len(ix), i, dtype=np.int64) for i, ix in enumerate(keep)
    ]) if keep else np.array([], dtype=np.int64)
    names = [ds.class_names[c] if ds.class_names else str(c) for c in classes]
    return ImageDataset(ds.name + "/subset", images, labels, len(classes), names)


# ---------------------------------------------------------------------------
# Procedural shapes dataset
# ---------------------------------------------------------------------------

def _shape_mask(shape_id: int, hw: int, cy: float, cx: float, r: float,
                rng: np.random.Generator) -> np.ndarray:
    """Rasterize one class archetype with per-instance geometry jitter.

    The ten classes form five confusable pairs (disk/ring, square/frame,
    tri_up/tri_down, plus/cross, hstripes/vstripes); instance parameters slide
    each example toward or away from its partner class, so classifier
    confidence tracks boundary proximity rather than rendering noise.
    """
    yy, xx = np.mgrid[0:hw, 0:hw].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    d2 = dy * dy + dx * dx
    if shape_id == 0:    # disk
        return d2 <= r * r
    if shape_id == 1:    # ring; a smaller hole makes it more disk-like
        hole = rng.uniform(0.3, 0.65) * r
        return (d2 <= r * r) & (d2 >= hole * hole)
    if shape_id in (2, 3):   # filled square / square frame, shared rotation jitter
        theta = rng.uniform(-np.pi / 18, np.pi / 18)
        u = np.cos(theta) * dy + np.sin(theta) * dx
        v = -np.sin(theta) * dy + np.cos(theta) * dx
        cheb = np.maximum(np.abs(u), np.abs(v))
        if shape_id == 2:
            return cheb <= 0.85 * r
        inner = rng.uniform(0.3, 0.65) * 0.9 * r
        return (cheb <= 0.9 * r) & (cheb >= inner)
    if shape_id in (4, 5):   # isosceles triangle, apex up or down
        theta = rng.uniform(-np.pi / 4, np.pi / 4) + (np.pi if shape_id == 5 else 0.0)
        u = np.cos(theta) * dy + np.sin(theta) * dx
        v = -np.sin(theta) * dy + np.cos(theta) * dx
        return (u >= -r) & (u <= 0.7 * r) & (np.abs(v) <= 0.42 * (u + r))
    if shape_id in (6, 7):   # orthogonal bar pair at 0 or 45 degrees
        theta = rng.uniform(-np.pi / 10, np.pi / 10) + (np.pi / 4 if shape_id == 7 else 0.0)
        u = np.cos(theta) * dy + np.sin(theta) * dx
        v = -np.sin(theta) * dy + np.cos(theta) * dx
        bw = rng.uniform(0.22, 0.34) * r
        return ((np.abs(u) <= bw) & (np.abs(v) <= r)) | \
               ((np.abs(v) <= bw) & (np.abs(u) <= r))
    if shape_id in (8, 9):   # striped disk, horizontal or vertical stripes
        theta = rng.uniform(-np.pi / 7.2, np.pi / 7.2) + (np.pi / 2 if shape_id == 9 else 0.0)
        u = np.cos(theta) * dy + np.sin(theta) * dx
        period = rng.uniform(1.8, 2.6)
        return (d2 <= r * r) & ((np.floor(u / period).astype(int) % 2) == 0)
    raise ValueError(f"unknown shape id {shape_id}")


def _distractor_mask(hw: int, rng: np.random.Generator) -> np.ndarray:
    """Thin short line segment; deliberately unlike every class archetype."""
    yy, xx = np.mgrid[0:hw, 0:hw].astype(np.float64)
    cy, cx = rng.uniform(2, hw - 3, size=2)
    theta = rng.uniform(0, np.pi)
    length = rng.uniform(2.0, 4.0)
    u = np.cos(theta) * (yy - cy) + np.sin(theta) * (xx - cx)
    v = -np.sin(theta) * (yy - cy) + np.cos(theta) * (xx - cx)
    return (np.abs(u) <= 0.8) & (np.abs(v) <= length)


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return np.array(rgb, dtype=np.float64)


def _background(hw: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth low-frequency color field: random 4x4 grid, bilinearly upsampled."""
    grid = rng.uniform(0.25, 0.75, size=(3, 4, 4))
    src = np.linspace(0, 3, hw)
    i0 = np.floor(src).astype(int).clip(0, 2)
    frac = src - i0
    rows = grid[:, i0, :] * (1 - frac)[None, :, None] + grid[:, i0 + 1, :] * frac[None, :, None]
    bg = rows[:, :, i0] * (1 - frac)[None, None, :] + rows[:, :, i0 + 1] * frac[None, None, :]
    return bg


def _render_image(shape_id: int, hue_band: int, num_bands: int, hw: int,
                  rng: np.random.Generator) -> np.ndarray:
    img = _background(hw, rng)

    # sparse thin-line clutter, class-uninformative
    for _ in range(int(rng.integers(1, 3))):
        dmask = _distractor_mask(hw, rng)
        dcol = rng.uniform(0.2, 0.8, size=3)
        img[:, dmask] = 0.55 * dcol[:, None] + 0.45 * img[:, dmask]

    # the class-defining object: shape decides the class; color is a nuisance
    # (restricted to a hue band only when classes outnumber the shape vocabulary)
    r = rng.uniform(0.15 * hw, 0.26 * hw)
    margin = r + 2.0
    cy = rng.uniform(margin, hw - 1 - margin)
    cx = rng.uniform(margin, hw - 1 - margin)
    if num_bands > 1:
        hue = (hue_band + rng.uniform(0.1, 0.9)) / num_bands
    else:
        hue = rng.uniform(0.0, 1.0)
    color = _hsv_to_rgb(hue, rng.uniform(0.6, 1.0), rng.uniform(0.55, 1.0))
    mask = _shape_mask(shape_id, hw, cy, cx, r, rng)
    alpha = rng.uniform(0.8, 1.0)
    img[:, mask] = alpha * color[:, None] + (1 - alpha) * img[:, mask]

    contrast = rng.uniform(0.88, 1.12)
    img = (img - 0.5) * contrast + 0.5
    img = img * rng.uniform(0.88, 1.1)
    img = img + rng.normal(0.0, 0.045, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_shapes_dataset(num_classes: int = 10, per_class: int = 200, image_hw: int = 32,
                            seed: int = 0, name: str = "shapes") -> ImageDataset:
    """Procedural classification benchmark with localized class evidence.

    Each class is a shape archetype (10 available); for more than 10 classes the
    class additionally fixes a hue band. Object position, scale, color, clutter
    and noise vary per instance. Deterministic given the seed.
    """
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    num_bands = (num_classes + 9) // 10
    rng = np.random.default_rng(seed)
    images = np.empty((num_classes * per_class, 3, image_hw, image_hw), dtype=np.float32)
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    i = 0
    for c in range(num_classes):
        shape_id, band = c % 10, c // 10
        for _ in range(per_class):
            images[i] = _render_image(shape_id, band, num_bands, image_hw, rng)
            labels[i] = c
            i += 1
    order = rng.permutation(len(images))
    names = [SHAPE_NAMES[c % 10] + (f"-band{c // 10}" if num_bands > 1 else "")
             for c in range(num_classes)]
    return ImageDataset(name, images[order], labels[order], num_classes, names)


# ---------------------------------------------------------------------------
# CIFAR-10 archives (python pickle batches on disk)
# ---------------------------------------------------------------------------

_CIFAR_TRAIN = [f"data_batch_{i}" for i in range(1, 6)]
_CIFAR_TEST = ["test_batch"]


def _read_cifar_batch(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        entry = pickle.load(f, encoding="bytes")
    data = entry[b"data"].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    labels = np.asarray(entry[b"labels"], dtype=np.int64)
    return data, labels


def load_cifar10(root: str, split: str = "train") -> ImageDataset:
    """Read the standard CIFAR-10 python archive layout from `root`."""
    batch_dir = os.path.join(root, "cifar-10-batches-py")
    if not os.path.isdir(batch_dir):
        batch_dir = root
    files = _CIFAR_TRAIN if split == "train" else _CIFAR_TEST
    parts = []
    for fn in files:
        path = os.path.join(batch_dir, fn)
        if not os.path.exists(path):
            raise FileNotFoundError(f"CIFAR-10 batch not found: {path}")
        parts.append(_read_cifar_batch(path))
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    names = ["airplane", "automobile", "bird", "cat", "deer",
             "dog", "frog", "horse", "ship", "truck"]
    return ImageDataset(f"cifar10/{split}", images, labels, 10, names)


def load_dataset(name: str, root: str | None = None, split: str = "train",
                 num_classes: int = 10, per_class: int = 200,
                 image_hw: int = 32, seed: int = 0) -> ImageDataset:
    """Dataset dispatch for the experiment harness."""
    if name == "shapes":
        # disjoint seed streams for train/test splits
        split_seed = seed * 2 + (0 if split == "train" else 1)
        return generate_shapes_dataset(num_classes, per_class, image_hw, split_seed,
                                       name=f"shapes/{split}")
    if name == "cifar10":
        if root is None:
            raise FileNotFoundError("cifar10 requires a dataset root directory")
        return load_cifar10(root, split)
    raise ValueError(f"unknown dataset '{name}'")
