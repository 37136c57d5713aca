"""Walkthrough: critical-based initial data discovery.

Crops candidate patches, keeps the CAM-heaviest ones, ranks the pool by teacher
confidence, and assembles the hardest patches into grid collages.

Run:  python demos/02_patch_discovery.py
"""
import os

import numpy as np
from PIL import Image

from nrrdd.cam import compute_cam, finalize_cam
from nrrdd.data import generate_shapes_dataset
from nrrdd.discovery import (CiddConfig, assemble, build_patch_pool, crop_candidates,
                             select_hardest, select_top_cam)
from nrrdd.teacher import TeacherConfig, train_teacher

OUT = os.path.join(os.path.dirname(__file__), "out", "02")
os.makedirs(OUT, exist_ok=True)


def save_rgb(img_chw, path, scale=4):
    arr = (np.clip(img_chw, 0, 1).transpose(1, 2, 0) * 255).round().astype(np.uint8)
    h, w = arr.shape[:2]
    Image.fromarray(arr).resize((w * scale, h * scale), Image.NEAREST).save(path)


def main():
    train = generate_shapes_dataset(10, 80, 32, seed=0)
    snap = train_teacher(train, "convnet3", TeacherConfig(epochs=12), seed=0)

    print("== candidate crops on one image ==")
    img, label = train.images[0], int(train.labels[0])
    boxes = crop_candidates(img, k=10, scale_range=(0.25, 1.0), rng=0)
    cam = finalize_cam(compute_cam(snap, img, label), (32, 32))
    top = select_top_cam(boxes, cam.values, t=3, source_id=0, class_id=label)
    for p in top:
        print(f"  kept box {p.box} with CAM mass {p.cam_mass:.2f}")

    print("\n== pool over the whole class, hardest-first ==")
    pool = build_patch_pool(train, snap, CiddConfig(k=12, t=2), seed=0)
    hardest = select_hardest(pool, label, g=8, selection="lowest")
    easiest = select_hardest(pool, label, g=8, selection="highest")
    print(f"  class {train.class_names[label]}: pool={len(pool.class_patches(label))}")
    print(f"  hardest confidences: {[round(p.confidence, 3) for p in hardest[:5]]}")
    print(f"  easiest confidences: {[round(p.confidence, 3) for p in easiest[:5]]}")

    print("\n== beta-grid assembly ==")
    single = assemble(hardest[:1], label, train)
    collage = assemble(hardest[:4], label, train)
    save_rgb(single.image, os.path.join(OUT, "assembled_beta1.png"))
    save_rgb(collage.image, os.path.join(OUT, "assembled_beta4.png"))
    print(f"  beta=1 provenance: {[(p['source_id'], tuple(p['box'])) for p in single.provenance]}")
    print(f"  beta=4 grid cells: {[tuple(p['cell']) for p in collage.provenance]}")
    print(f"\ncollages written to {OUT}")


if __name__ == "__main__":
    main()
