"""Desk-scale teacher training."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import ImageDataset
from .models import build_model, has_batchnorm
from .snapshot import ModelSnapshot


@dataclass
class TeacherConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch: int = 128
    weight_decay: float = 1e-4
    augment: str = "flip-crop"  # none | flip-crop | flip-rrc
    rrc_scale: tuple[float, float] = (0.25, 1.0)


def _augment_batch(x: np.ndarray, rng: np.random.Generator, mode: str,
                   rrc_scale: tuple[float, float], pad: int = 4) -> np.ndarray:
    """Random horizontal flip plus either reflect-pad crop or random-resized crop.

    Scale-robust teachers matter downstream: patch confidence scores are taken
    on crops resized to full input size.
    """
    out = x.copy()
    flips = rng.random(len(out)) < 0.5
    out[flips] = out[flips, :, :, ::-1]
    h, w = out.shape[-2:]
    if mode == "flip-crop":
        padded = np.pad(out, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
        tops = rng.integers(0, 2 * pad + 1, len(out))
        lefts = rng.integers(0, 2 * pad + 1, len(out))
        for i, (t, l) in enumerate(zip(tops, lefts)):
            out[i] = padded[i, :, t:t + h, l:l + w]
    elif mode == "flip-rrc":
        # one crop size per batch so the resize runs as a single batched call
        frac = rng.uniform(rrc_scale[0], rrc_scale[1])
        ch = max(4, int(round(h * math.sqrt(frac))))
        cw = max(4, int(round(w * math.sqrt(frac))))
        if ch < h or cw < w:
            tops = rng.integers(0, h - ch + 1, len(out))
            lefts = rng.integers(0, w - cw + 1, len(out))
            crops = np.stack([out[i, :, t:t + ch, l:l + cw]
                              for i, (t, l) in enumerate(zip(tops, lefts))])
            import torch
            import torch.nn.functional as F

            resized = F.interpolate(torch.from_numpy(crops), size=(h, w),
                                    mode="bilinear", antialias=True,
                                    align_corners=False)
            out = resized.numpy()
    else:
        raise ValueError(f"unknown augment mode '{mode}'")
    return out


def train_teacher(dataset: ImageDataset, arch_id: str, hyper: TeacherConfig | None = None,
                  seed: int = 0, eval_dataset: ImageDataset | None = None) -> ModelSnapshot:
    """Train a classifier from scratch; deterministic given the seed.

    The snapshot records the dataset's per-channel normalization constants and,
    when an eval set is given, the final test accuracy in its metadata.
    """
    hyper = hyper or TeacherConfig()
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    torch.manual_seed(seed)
    module = build_model(arch_id, dataset.num_classes, dataset.image_shape[0])
    if not has_batchnorm(module):
        warnings.warn(f"architecture '{arch_id}' has no BatchNorm layers; "
                      "BN-statistics refinement will reject this teacher")
    mean, std = dataset.channel_stats()
    snap = ModelSnapshot(arch_id, module, dataset.num_classes, dataset.image_shape,
                         mean, std, metadata={"role": "teacher", "seed": seed,
                                              "epochs": hyper.epochs, "lr": hyper.lr,
                                              "dataset": dataset.name,
                                              "train_size": len(dataset)})
    opt = torch.optim.Adam(module.parameters(), lr=hyper.lr,
                           weight_decay=hyper.weight_decay)
    rng = np.random.default_rng([seed, 1009])
    n = len(dataset)
    total_steps = hyper.epochs * math.ceil(n / hyper.batch)
    step = 0
    last_loss = float("nan")
    for _epoch in range(hyper.epochs):
        order = rng.permutation(n)
        module.train()
        for start in range(0, n, hyper.batch):
            idx = order[start:start + hyper.batch]
            xb = dataset.images[idx]
            if hyper.augment != "none":
                xb = _augment_batch(xb, rng, hyper.augment, hyper.rrc_scale)
            xt = snap.normalize(torch.from_numpy(np.ascontiguousarray(xb)))
            yt = torch.from_numpy(dataset.labels[idx])
            logits = module(xt)
            loss = F.cross_entropy(logits, yt)
            for group in opt.param_groups:
                group["lr"] = hyper.lr * 0.5 * (1 + math.cos(math.pi * step / max(1, total_steps)))
            opt.zero_grad()
            loss.backward()
            opt.step()
            last_loss = float(loss.detach())
            step += 1
    module.eval()
    snap.metadata["final_loss"] = last_loss
    if eval_dataset is not None and len(eval_dataset) > 0:
        from .transfer import evaluate

        snap.metadata["accuracy"] = evaluate(snap, eval_dataset)
    return snap
