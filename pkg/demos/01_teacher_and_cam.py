"""Walkthrough: train a small teacher on the shapes benchmark, inspect its
class-activation maps, and derive the non-critical update mask.

Run:  python demos/01_teacher_and_cam.py
Outputs land in demos/out/01/.
"""
import os

import numpy as np
from PIL import Image

from nrrdd.cam import compute_cam, finalize_cam, non_critical_mask, save_heatmap
from nrrdd.data import generate_shapes_dataset
from nrrdd.models import confidence
from nrrdd.teacher import TeacherConfig, train_teacher
from nrrdd.transfer import evaluate

OUT = os.path.join(os.path.dirname(__file__), "out", "01")
os.makedirs(OUT, exist_ok=True)


def save_rgb(img_chw, path):
    arr = (np.clip(img_chw, 0, 1).transpose(1, 2, 0) * 255).round().astype(np.uint8)
    Image.fromarray(arr).resize((128, 128), Image.NEAREST).save(path)


def main():
    print("== generating the shapes benchmark (10 classes, localized evidence) ==")
    train = generate_shapes_dataset(10, 120, 32, seed=0)
    test = generate_shapes_dataset(10, 60, 32, seed=1)
    print(f"train: {train.images.shape}, classes: {train.class_names}")

    print("\n== training a 3-block ConvNet teacher ==")
    snap = train_teacher(train, "convnet3", TeacherConfig(epochs=15), seed=0,
                         eval_dataset=test)
    print(f"test accuracy: {snap.metadata['accuracy']:.3f}")
    print(f"classifier weights: {snap.classifier_w.shape}, "
          f"BN layers: {len(snap.bn_stats)}")

    print("\n== CAM -> normalized map -> non-critical mask for three images ==")
    for i in range(3):
        img, label = train.images[i], int(train.labels[i])
        raw = compute_cam(snap, img, label)
        cam = finalize_cam(raw, (32, 32))
        mask = non_critical_mask(cam, epsilon=0.5)
        conf = confidence(snap, img)
        frozen = float((mask.values == 0).mean())
        print(f"image {i} ({train.class_names[label]}): confidence={conf:.3f}, "
              f"frozen(critical) pixel fraction={frozen:.2f}")
        save_rgb(img, os.path.join(OUT, f"img{i}_{train.class_names[label]}.png"))
        save_heatmap(cam.values, os.path.join(OUT, f"img{i}_cam.png"))
        save_heatmap(mask.values, os.path.join(OUT, f"img{i}_mask.png"))
    print(f"\nheatmaps written to {OUT}")


if __name__ == "__main__":
    main()
