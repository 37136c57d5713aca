"""Walkthrough: training students from the different label stores.

A quick head-to-head of one-hot, distance-based, and soft-label supervision on
the same distilled images, ending with the recover-rate accounting.

Run:  python demos/05_knowledge_transfer.py   (a few minutes on CPU)
"""
import numpy as np

from nrrdd.data import generate_shapes_dataset
from nrrdd.discovery import CiddConfig, SyntheticManifest, discover
from nrrdd.labels import relabel
from nrrdd.refine import RefineConfig, refine_dataset
from nrrdd.teacher import TeacherConfig, train_teacher
from nrrdd.transfer import TransferConfig, evaluate, train_student


def main():
    train = generate_shapes_dataset(10, 150, 32, seed=0)
    test = generate_shapes_dataset(10, 100, 32, seed=1)
    snap = train_teacher(train, "convnet3", TeacherConfig(epochs=20), seed=0,
                         eval_dataset=test)
    print(f"teacher accuracy: {snap.metadata['accuracy']:.3f}")

    records = discover(train, snap, ipc=10, beta=1, cfg=CiddConfig(), seed=0)
    records = refine_dataset(snap, records, RefineConfig(iterations=100, seed=0))
    manifest = SyntheticManifest(records=records, num_classes=10,
                                 image_shape=(3, 32, 32),
                                 norm_mean=snap.norm_mean, norm_std=snap.norm_std,
                                 source_name="shapes", seed=0)

    cfg = TransferConfig(epochs=150, seed=0)
    accs = {}
    for mode in ("oh", "dbr", "sl"):
        store = relabel(snap, records, mode, pairs_per_image=4, seed=0)
        student = train_student(store, manifest, "convnet3", cfg)
        accs[mode] = evaluate(student, test)
        print(f"student[{mode}]: accuracy={accs[mode]:.3f}")

    if accs["sl"] > accs["oh"]:
        recover = (accs["dbr"] - accs["oh"]) / (accs["sl"] - accs["oh"])
        print(f"\nrecover rate (dbr-oh)/(sl-oh): {recover:.2f}")


if __name__ == "__main__":
    main()
