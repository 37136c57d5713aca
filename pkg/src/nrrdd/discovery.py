"""Critical-based initial data discovery: salient crops, hardest-patch selection, grid assembly."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .cam import compute_cam_batch, normalize_cam_values
from .data import ImageDataset
from .mixing import AugmentSpec
from .models import confidences
from .snapshot import ModelSnapshot

Box = tuple[int, int, int, int]  # top, left, height, width


@dataclass
class CiddConfig:
    k: int = 30                 # candidate crops per source image
    t: int = 2                  # crops kept per image by CAM mass
    scale_range: tuple[float, float] = (0.25, 1.0)
    aspect_range: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)
    selection: str = "lowest"   # lowest | highest confidence


@dataclass
class Patch:
    source_id: int
    box: Box
    cam_mass: float
    class_id: int
    confidence: float | None = None


@dataclass
class PatchPool:
    per_class: dict[int, list[Patch]] = field(default_factory=dict)

    def class_patches(self, class_id: int) -> list[Patch]:
        return self.per_class.get(class_id, [])


@dataclass
class SyntheticRecord:
    image: np.ndarray
    class_id: int
    provenance: list[dict]
    partner_idx: int | None = None
    aug_spec: AugmentSpec | None = None
    d_org: float | None = None
    d_aug: float | None = None
    refined: bool = False
    meta: dict = field(default_factory=dict)


def resize_image(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with anti-aliasing, channels-first float32."""
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))[None]
    out = F.interpolate(t, size=out_hw, mode="bilinear", antialias=True, align_corners=False)
    return out[0].numpy()


def crop_candidates(image: np.ndarray, k: int, scale_range: tuple[float, float],
                    rng: np.random.Generator | int,
                    aspect_range: tuple[float, float] = (0.75, 4.0 / 3.0)) -> list[Box]:
    """k random area/aspect-sampled boxes, deterministic given the generator/seed.

    Box areas land inside scale_range * (h*w) up to integer rounding; after ten
    rejected draws a centered fallback box with the maximal in-range area is used.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    lo, hi = float(scale_range[0]), float(scale_range[1])
    if not (0.0 < lo <= hi <= 1.0):
        raise ValueError(f"scale_range must satisfy 0 < lo <= hi <= 1, got {scale_range}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    _, h, w = image.shape
    boxes: list[Box] = []
    for _ in range(k):
        if lo == hi == 1.0:
            boxes.append((0, 0, h, w))
            continue
        box: Box | None = None
        for _try in range(10):
            area = rng.uniform(lo, hi) * h * w
            aspect = math.exp(rng.uniform(math.log(aspect_range[0]), math.log(aspect_range[1])))
            bh = int(round(math.sqrt(area / aspect)))
            bw = int(round(math.sqrt(area * aspect)))
            if 1 <= bh <= h and 1 <= bw <= w and lo * h * w <= bh * bw <= hi * h * w:
                top = int(rng.integers(0, h - bh + 1))
                left = int(rng.integers(0, w - bw + 1))
                box = (top, left, bh, bw)
                break
        if box is None:
            side = math.sqrt(hi)
            bh = min(h, max(1, int(math.floor(h * side))))
            bw = min(w, max(1, int(math.floor(w * side))))
            box = ((h - bh) // 2, (w - bw) // 2, bh, bw)
        boxes.append(box)
    return boxes


def _box_masses(boxes: list[Box], cam_values: np.ndarray) -> np.ndarray:
    integral = np.pad(cam_values, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    masses = np.empty(len(boxes), dtype=np.float64)
    for i, (t, l, bh, bw) in enumerate(boxes):
        masses[i] = (integral[t + bh, l + bw] - integral[t, l + bw]
                     - integral[t + bh, l] + integral[t, l])
    return masses


def select_top_cam(boxes: list[Box], cam_values: np.ndarray, t: int,
                   source_id: int, class_id: int) -> list[Patch]:
    """Keep the t boxes with the largest summed CAM inside; ties keep earlier boxes."""
    if t > len(boxes):
        raise ValueError(f"t={t} exceeds number of candidate boxes {len(boxes)}")
    masses = _box_masses(boxes, cam_values)
    order = np.argsort(-masses, kind="stable")[:t]
    return [Patch(source_id=source_id, box=boxes[i], cam_mass=float(masses[i]),
                  class_id=class_id) for i in order]


def select_hardest(pool: PatchPool, class_id: int, g: int,
                   selection: str = "lowest") -> list[Patch]:
    """g patches with the lowest (or highest) teacher confidence, ties by pool order."""
    patches = pool.class_patches(class_id)
    if len(patches) < g:
        raise ValueError(f"class {class_id}: pool holds {len(patches)} patches, need {g}")
    if any(p.confidence is None for p in patches):
        raise ValueError("pool patches are missing confidence scores")
    conf = np.array([p.confidence for p in patches], dtype=np.float64)
    if selection == "lowest":
        order = np.argsort(conf, kind="stable")
    elif selection == "highest":
        order = np.argsort(-conf, kind="stable")
    else:
        raise ValueError(f"unknown selection '{selection}'")
    return [patches[i] for i in order[:g]]


def _grid_cells(hw: tuple[int, int], side: int) -> list[tuple[int, int, int, int]]:
    h, w = hw
    ys = [round(i * h / side) for i in range(side + 1)]
    xs = [round(j * w / side) for j in range(side + 1)]
    cells = []
    for r in range(side):
        for c in range(side):
            cells.append((ys[r], xs[c], ys[r + 1] - ys[r], xs[c + 1] - xs[c]))
    return cells


def assemble(patches: list[Patch], class_id: int, dataset: ImageDataset) -> SyntheticRecord:
    """Tile beta patches row-major into one synthetic image at the dataset resolution."""
    beta = len(patches)
    side = int(round(math.sqrt(beta)))
    if side * side != beta:
        raise ValueError(f"beta={beta} is not a perfect square")
    if any(p.class_id != class_id for p in patches):
        raise ValueError("assemble requires patches of a single class")
    c, h, w = dataset.image_shape
    image = np.zeros((c, h, w), dtype=np.float32)
    provenance = []
    for (cy, cx, ch, cw), patch in zip(_grid_cells((h, w), side), patches):
        t, l, bh, bw = patch.box
        crop = dataset.images[patch.source_id][:, t:t + bh, l:l + bw]
        image[:, cy:cy + ch, cx:cx + cw] = resize_image(crop, (ch, cw))
        provenance.append({"source_id": int(patch.source_id), "box": list(patch.box),
                           "cell": [cy, cx, ch, cw],
                           "confidence": patch.confidence,
                           "cam_mass": patch.cam_mass})
    np.clip(image, 0.0, 1.0, out=image)
    return SyntheticRecord(image=image, class_id=class_id, provenance=provenance)


def build_patch_pool(dataset: ImageDataset, snapshot: ModelSnapshot, cfg: CiddConfig,
                     seed: int, cam_batch: int = 64) -> PatchPool:
    """Crop every source image, keep the CAM-heaviest t crops, score their confidence."""
    c, h, w = dataset.image_shape
    pool = PatchPool()
    for class_id in range(dataset.num_classes):
        idx = dataset.class_indices(class_id)
        patches: list[Patch] = []
        for start in range(0, len(idx), cam_batch):
            chunk = idx[start:start + cam_batch]
            raw_cams = compute_cam_batch(snapshot, dataset.images[chunk],
                                         np.full(len(chunk), class_id))
            for j, src in enumerate(chunk):
                cam_full = normalize_cam_values(raw_cams[j], (h, w))
                rng = np.random.default_rng([seed, class_id, int(src)])
                boxes = crop_candidates(dataset.images[src], cfg.k, cfg.scale_range,
                                        rng, cfg.aspect_range)
                patches.extend(select_top_cam(boxes, cam_full, cfg.t, int(src), class_id))
        if not patches:
            pool.per_class[class_id] = []
            continue
        crops = np.stack([
            resize_image(dataset.images[p.source_id][:, p.box[0]:p.box[0] + p.box[2],
                                                     p.box[1]:p.box[1] + p.box[3]], (h, w))
            for p in patches])
        scores = confidences(snapshot, crops)
        for p, s in zip(patches, scores):
            p.confidence = float(s)
        pool.per_class[class_id] = patches
    return pool


def discover(dataset: ImageDataset, snapshot: ModelSnapshot, ipc: int, beta: int,
             cfg: CiddConfig, seed: int) -> list[SyntheticRecord]:
    """Full CIDD pass: pool, per-class hardest-g selection, beta-grid assembly."""
    side = int(round(math.sqrt(beta)))
    if side * side != beta:
        raise ValueError(f"beta={beta} is not a perfect square")
    pool = build_patch_pool(dataset, snapshot, cfg, seed)
    records: list[SyntheticRecord] = []
    for class_id in range(dataset.num_classes):
        g = beta * ipc
        chosen = select_hardest(pool, class_id, g, cfg.selection)
        for i in range(ipc):
            records.append(assemble(chosen[i * beta:(i + 1) * beta], class_id, dataset))
    return records


def random_real_records(dataset: ImageDataset, ipc: int, seed: int) -> list[SyntheticRecord]:
    """Baseline initialization: ipc random unmodified real images per class."""
    rng = np.random.default_rng([seed, 977])
    records = []
    c, h, w = dataset.image_shape
    for class_id in range(dataset.num_classes):
        idx = dataset.class_indices(class_id)
        if len(idx) < ipc:
            raise ValueError(f"class {class_id} has only {len(idx)} images, need {ipc}")
        picks = rng.choice(idx, size=ipc, replace=False)
        for src in picks:
            records.append(SyntheticRecord(
                image=dataset.images[src].copy(), class_id=class_id,
                provenance=[{"source_id": int(src), "box": [0, 0, h, w],
                             "cell": [0, 0, h, w], "confidence": None, "cam_mass": None}]))
    return records


# ---------------------------------------------------------------------------
# persistence: image directory + manifest
# ---------------------------------------------------------------------------

MANIFEST_VERSION = 1


@dataclass
class SyntheticManifest:
    records: list[SyntheticRecord]
    num_classes: int
    image_shape: tuple[int, int, int]
    norm_mean: np.ndarray
    norm_std: np.ndarray
    source_name: str
    seed: int
    config: dict = field(default_factory=dict)

    @property
    def images(self) -> np.ndarray:
        return np.stack([r.image for r in self.records])


def _spec_to_json(spec: AugmentSpec | None):
    if spec is None:
        return None
    return {"method": spec.method, "lam": spec.lam, "box": list(spec.box),
            "seed": int(spec.seed)}


def _spec_from_json(obj) -> AugmentSpec | None:
    if obj is None:
        return None
    return AugmentSpec(method=obj["method"], lam=float(obj["lam"]),
                       box=tuple(obj["box"]), seed=int(obj["seed"]))


def save_manifest(manifest: SyntheticManifest, out_dir: str) -> str:
    """Write one .npy image per record plus manifest.json; byte-deterministic."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    entries = []
    for i, rec in enumerate(manifest.records):
        fname = f"img_{i:05d}.npy"
        np.save(os.path.join(img_dir, fname), rec.image.astype(np.float32))
        entries.append({
            "index": i,
            "file": fname,
            "class_id": int(rec.class_id),
            "provenance": rec.provenance,
            "partner_idx": rec.partner_idx,
            "aug_spec": _spec_to_json(rec.aug_spec),
            "d_org": rec.d_org,
            "d_aug": rec.d_aug,
            "refined": rec.refined,
            "meta": rec.meta,
        })
    doc = {
        "version": MANIFEST_VERSION,
        "num_classes": manifest.num_classes,
        "image_shape": list(manifest.image_shape),
        "norm_mean": [float(v) for v in manifest.norm_mean],
        "norm_std": [float(v) for v in manifest.norm_std],
        "source_name": manifest.source_name,
        "seed": manifest.seed,
        "config": manifest.config,
        "records": entries,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
    return path


def load_manifest(out_dir: str) -> SyntheticManifest:
    path = os.path.join(out_dir, "manifest.json")
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version: {doc.get('version')}")
    records = []
    for e in doc["records"]:
        image = np.load(os.path.join(out_dir, "images", e["file"]))
        records.append(SyntheticRecord(
            image=image, class_id=e["class_id"], provenance=e["provenance"],
            partner_idx=e["partner_idx"], aug_spec=_spec_from_json(e["aug_spec"]),
            d_org=e["d_org"], d_aug=e["d_aug"], refined=e["refined"], meta=e["meta"]))
    return SyntheticManifest(
        records=records, num_classes=doc["num_classes"],
        image_shape=tuple(doc["image_shape"]),
        norm_mean=np.asarray(doc["norm_mean"], dtype=np.float32),
        norm_std=np.asarray(doc["norm_std"], dtype=np.float32),
        source_name=doc["source_name"], seed=doc["seed"], config=doc["config"])
