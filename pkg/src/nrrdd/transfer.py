"""Student training from a label store: DBR objective plus SL/CL/OH baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import ImageDataset
from .discovery import SyntheticManifest, resize_image
from .labels import DbrRecord, LabelStore, LOG_FLOOR
from .mixing import apply
from .models import build_model, forward
from .snapshot import ModelSnapshot


@dataclass
class TransferConfig:
    epochs: int = 300
    lr: float = 1e-3
    batch: int = 100
    alpha_dbr: float = 1.0
    r: float = 0.4
    schedule: str = "cosine"       # 5-epoch linear warmup, cosine decay to zero
    weight_decay: float = 0.01
    extra_aug: bool = False        # flip/resize-crop/photometric ops for sl|cl|oh
    extra_aug_dbr: bool = False    # approximate variant that reuses stale distances
    seed: int = 0


def student_distances(student_logits: torch.Tensor, y_org, y_aug):
    """Per-item (d_org, d_aug) = -ln(softmax + floor), teacher-side convention."""
    logits = student_logits if student_logits.ndim == 2 else student_logits.view(1, -1)
    p = F.softmax(logits, dim=1)
    y_o = torch.as_tensor(np.asarray(y_org, dtype=np.int64)).view(-1, 1)
    y_a = torch.as_tensor(np.asarray(y_aug, dtype=np.int64)).view(-1, 1)
    d_org = -torch.log(p.gather(1, y_o).squeeze(1) + LOG_FLOOR)
    d_aug = -torch.log(p.gather(1, y_a).squeeze(1) + LOG_FLOOR)
    return d_org, d_aug


def dbr_objective(d_s, d_t, alpha_dbr: float, r: float) -> torch.Tensor:
    """Hinge term above radius r plus weighted L1 match to the teacher distances."""
    ds_org, ds_aug = (torch.as_tensor(v, dtype=torch.float32) if not torch.is_tensor(v)
                      else v for v in d_s)
    if isinstance(d_t, DbrRecord):
        dt_org, dt_aug = d_t.d_org, d_t.d_aug
    else:
        dt_org, dt_aug = d_t
    dt_org = torch.as_tensor(np.asarray(dt_org), dtype=ds_org.dtype)
    dt_aug = torch.as_tensor(np.asarray(dt_aug), dtype=ds_aug.dtype)
    sce = F.relu(ds_org - r) + F.relu(ds_aug - r)
    dbr = torch.abs(ds_org - dt_org) + torch.abs(ds_aug - dt_aug)
    return (sce + alpha_dbr * dbr).mean()


def dbr_match_term(d_s, d_t) -> torch.Tensor:
    """The distance-matching half alone: |d_org^S - d_org^T| + |d_aug^S - d_aug^T|."""
    ds_org, ds_aug = d_s
    dt_org = torch.as_tensor(np.asarray(d_t[0]), dtype=ds_org.dtype)
    dt_aug = torch.as_tensor(np.asarray(d_t[1]), dtype=ds_aug.dtype)
    return (torch.abs(ds_org - dt_org) + torch.abs(ds_aug - dt_aug)).mean()


def baseline_objective(mode: str, student_logits: torch.Tensor, payload) -> torch.Tensor:
    """SL: KL(teacher soft label || student). OH: hard CE. CL: two-entry restricted CE."""
    logits = student_logits if student_logits.ndim == 2 else student_logits.view(1, -1)
    if mode == "sl":
        y = torch.as_tensor(np.asarray(payload, dtype=np.float32))
        y = y if y.ndim == 2 else y.view(1, -1)
        if y.shape != logits.shape:
            raise ValueError("soft-label payload shape mismatch")
        logp = F.log_softmax(logits, dim=1)
        kl = (torch.xlogy(y, y) - y * logp).sum(dim=1)
        return kl.mean()
    if mode == "oh":
        y = torch.as_tensor(np.asarray(payload, dtype=np.int64)).view(-1)
        return F.cross_entropy(logits, y)
    if mode == "cl":
        y_org, y_aug, p_org, p_aug = payload
        y_o = torch.as_tensor(np.asarray(y_org, dtype=np.int64)).view(-1, 1)
        y_a = torch.as_tensor(np.asarray(y_aug, dtype=np.int64)).view(-1, 1)
        q_org = torch.as_tensor(np.asarray(p_org, dtype=np.float32)).view(-1)
        q_aug = torch.as_tensor(np.asarray(p_aug, dtype=np.float32)).view(-1)
        total = q_org + q_aug
        q = torch.where(total > 0, q_org / total.clamp_min(1e-12),
                        torch.full_like(q_org, 0.5))
        p = F.softmax(logits, dim=1)
        s_org = p.gather(1, y_o).squeeze(1)
        s_aug = p.gather(1, y_a).squeeze(1)
        s_total = (s_org + s_aug).clamp_min(1e-12)
        ce = -(q * torch.log(s_org / s_total + LOG_FLOOR)
               + (1 - q) * torch.log(s_aug / s_total + LOG_FLOOR))
        return ce.mean()
    raise ValueError(f"unknown baseline mode '{mode}'")


def _lr_factor(step: int, total: int, warmup: int) -> float:
    if step < warmup:
        return (step + 1) / max(1, warmup)
    if total <= warmup:
        return 1.0
    progress = (step - warmup) / (total - warmup)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def _extra_augment(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Light stochastic transforms: flip, resize-crop, two photometric ops."""
    b, c, h, w = x.shape
    out = x.copy()
    flips = rng.random(b) < 0.5
    out[flips] = out[flips, :, :, ::-1]
    for i in range(b):
        scale = rng.uniform(0.6, 1.0)
        ch = max(4, int(round(h * scale)))
        cw = max(4, int(round(w * scale)))
        top = rng.integers(0, h - ch + 1)
        left = rng.integers(0, w - cw + 1)
        out[i] = resize_image(out[i][:, top:top + ch, left:left + cw], (h, w))
        for _ in range(2):
            op = rng.integers(0, 3)
            if op == 0:
                out[i] += rng.uniform(-0.12, 0.12)
            elif op == 1:
                m = out[i].mean()
                out[i] = m + (out[i] - m) * rng.uniform(0.8, 1.25)
            else:
                out[i] *= rng.uniform(0.85, 1.15, size=(c, 1, 1))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def train_student(store: LabelStore, manifest: SyntheticManifest, arch_id: str,
                  cfg: TransferConfig, init_from: ModelSnapshot | None = None
                  ) -> ModelSnapshot:
    """Train a fresh student on the stored records; deterministic given cfg.seed.

    Each step reconstructs the exact mixed images from stored pair indices and
    mix specs (oh mode trains on the plain originals). The dbr path reads only
    indices, specs and the two distances.
    """
    if store.num_classes != manifest.num_classes:
        raise ValueError("store/manifest class count mismatch")
    images = manifest.images
    n_img = len(images)
    for rec in store.records:
        hi = rec.org_idx if store.mode == "oh" else max(rec.org_idx, rec.aug_idx)
        if hi >= n_img:
            raise ValueError(f"store references image {hi}, manifest holds {n_img}")

    torch.manual_seed((cfg.seed * 1000003 + 101) % (2 ** 31))  # distinct init stream
    module = build_model(arch_id, manifest.num_classes, manifest.image_shape[0])
    if init_from is not None:
        module.load_state_dict(init_from.module.state_dict())
    snap = ModelSnapshot(arch_id, module, manifest.num_classes, manifest.image_shape,
                         manifest.norm_mean.copy(), manifest.norm_std.copy(),
                         metadata={"role": "student", "mode": store.mode,
                                   "seed": cfg.seed, "epochs": cfg.epochs})
    if cfg.epochs == 0 or len(store.records) == 0:
        module.eval()
        return snap

    augment = cfg.extra_aug_dbr if store.mode == "dbr" else cfg.extra_aug
    opt = torch.optim.AdamW(module.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 52711])
    items = store.records
    steps_per_epoch = math.ceil(len(items) / cfg.batch)
    total_steps = cfg.epochs * steps_per_epoch
    warmup = min(5, cfg.epochs) * steps_per_epoch
    step = 0
    last_loss = float("nan")
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(items))
        module.train()
        for start in range(0, len(items), cfg.batch):
            batch = [items[t] for t in order[start:start + cfg.batch]]
            if store.mode == "oh":
                xb = images[[r.org_idx for r in batch]]
                payload = [r.y_org for r in batch]
            else:
                xb = np.stack([apply(r.aug_spec, images[r.org_idx], images[r.aug_idx])
                               for r in batch])
            if augment:
                xb = _extra_augment(xb, rng)
            xt = snap.normalize(torch.from_numpy(np.ascontiguousarray(xb)))
            logits = module(xt)
            if store.mode == "dbr":
                d_s = student_distances(logits, [r.y_org for r in batch],
                                        [r.y_aug for r in batch])
                d_t = (np.array([r.d_org for r in batch], dtype=np.float32),
                       np.array([r.d_aug for r in batch], dtype=np.float32))
                loss = dbr_objective(d_s, d_t, cfg.alpha_dbr, cfg.r)
            elif store.mode == "sl":
                loss = baseline_objective("sl", logits, np.stack([r.y_soft for r in batch]))
            elif store.mode == "cl":
                loss = baseline_objective("cl", logits, (
                    [r.y_org for r in batch], [r.y_aug for r in batch],
                    [r.p_org for r in batch], [r.p_aug for r in batch]))
            else:
                loss = baseline_objective("oh", logits, payload)
            for group in opt.param_groups:
                group["lr"] = cfg.lr * _lr_factor(step, total_steps, warmup)
            opt.zero_grad()
            loss.backward()
            opt.step()
            last_loss = float(loss.detach())
            step += 1
    module.eval()
    snap.metadata["final_loss"] = last_loss
    snap.metadata["steps"] = step
    return snap


def evaluate(snapshot: ModelSnapshot, dataset: ImageDataset, batch_size: int = 256) -> float:
    """Top-1 accuracy on a labeled set."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    for i in range(0, len(dataset), batch_size):
        trace = forward(snapshot, dataset.images[i:i + batch_size])
        pred = trace.logits.argmax(dim=1).numpy()
        correct += int((pred == dataset.labels[i:i + batch_size]).sum())
    return correct / len(dataset)
