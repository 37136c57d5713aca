"""Non-critical region refinement: masked adaptive-gradient updates of synthetic images.

Each record gets a frozen update mask derived from its initial CAM; pixels with
mask value zero never change (bit-exact), everything else follows scaled Adam
steps on a classification + BN-statistics + label-refinement objective.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .cam import CamMap, non_critical_mask, normalize_cam_values, compute_cam_batch
from .discovery import SyntheticRecord
from .mixing import apply_batch, sample_spec
from .models import ForwardTrace, bn_modules, forward, has_batchnorm
from .snapshot import ModelSnapshot

LOG_FLOOR = 1e-12


@dataclass
class RefineConfig:
    iterations: int = 2000
    lr: float = 0.05
    betas: tuple[float, float] = (0.5, 0.9)
    batch: int = 100
    alpha_bn: float = 10.0
    alpha_lr: float = 1.0
    r: float = 0.4
    epsilon: float = 0.5
    mix_method: str = "cutmix"
    partner_same_class: bool = False
    seed: int = 0


def bn_loss(trace: ForwardTrace, snapshot: ModelSnapshot) -> torch.Tensor:
    """Sum over BN layers of ||batch_mean - running_mean|| + ||batch_var - running_var||."""
    modules = bn_modules(snapshot.module)
    if not modules:
        raise ValueError("model has no BatchNorm layers; BN-statistics loss is undefined")
    if len(trace) < 2:
        raise ValueError("bn_loss needs a batch of at least 2 images")
    if len(trace.batch_bn) != len(modules):
        raise ValueError("trace does not carry statistics for every BN layer")
    total = None
    for (bm, bv), mod in zip(trace.batch_bn, modules):
        rm = mod.running_mean.detach().to(bm.dtype)
        rv = mod.running_var.detach().to(bv.dtype)
        term = torch.linalg.vector_norm(bm - rm) + torch.linalg.vector_norm(bv - rv)
        total = term if total is None else total + term
    return total


def org_loss(snapshot: ModelSnapshot, x_org, y_org, alpha_bn: float,
             grad: bool = False) -> torch.Tensor:
    """Cross-entropy of the teacher on the synthetic batch plus weighted BN loss."""
    trace = forward(snapshot, x_org, grad=grad)
    y = torch.as_tensor(np.asarray(y_org, dtype=np.int64))
    ce = F.cross_entropy(trace.logits, y)
    if alpha_bn == 0:
        return ce
    return ce + alpha_bn * bn_loss(trace, snapshot)


def hinge_distances(probs: torch.Tensor, y_org, y_aug, r: float) -> torch.Tensor:
    """Per-item max{0, d_org - r} + max{0, d_aug - r} with d = -ln(p + floor)."""
    y_o = torch.as_tensor(np.asarray(y_org, dtype=np.int64)).view(-1, 1)
    y_a = torch.as_tensor(np.asarray(y_aug, dtype=np.int64)).view(-1, 1)
    d_org = -torch.log(probs.gather(1, y_o).squeeze(1) + LOG_FLOOR)
    d_aug = -torch.log(probs.gather(1, y_a).squeeze(1) + LOG_FLOOR)
    return F.relu(d_org - r) + F.relu(d_aug - r)


def lr_loss(snapshot: ModelSnapshot, x_mix, y_org, y_aug, r: float,
            grad: bool = False) -> torch.Tensor:
    """Label-refinement hinge: teacher distances on the mixed batch above radius r."""
    trace = forward(snapshot, x_mix, grad=grad)
    return hinge_distances(trace.probs, y_org, y_aug, r).mean()


def masked_step(x, mask, step):
    """x' = x - mask * step with the mask broadcast over channels.

    Pixels with mask == 0 are returned bit-identically (no arithmetic touches them).
    """
    if torch.is_tensor(x):
        m = torch.as_tensor(mask, dtype=x.dtype, device=x.device)
        while m.ndim < x.ndim:
            m = m.unsqueeze(0)
        return torch.where(m > 0, x - m * step, x)
    x = np.asarray(x)
    m = np.asarray(mask, dtype=x.dtype)
    m = np.broadcast_to(m, x.shape)
    return np.where(m > 0, x - m * np.asarray(step), x)


def record_masks(snapshot: ModelSnapshot, records: list[SyntheticRecord],
                 epsilon: float, cam_batch: int = 64) -> np.ndarray:
    """Frozen per-record non-critical masks from the initial images, shape (N, h, w)."""
    hw = records[0].image.shape[-2:]
    masks = np.empty((len(records),) + tuple(hw), dtype=np.float32)
    for start in range(0, len(records), cam_batch):
        chunk = records[start:start + cam_batch]
        raw = compute_cam_batch(snapshot, np.stack([r.image for r in chunk]),
                                [r.class_id for r in chunk])
        for j, rec in enumerate(chunk):
            cam = CamMap(normalize_cam_values(raw[j], hw), rec.class_id, normalized=True)
            masks[start + j] = non_critical_mask(cam, epsilon).values
    return masks


def _batch_slices(n: int, batch: int) -> list[slice]:
    slices = [slice(i, min(i + batch, n)) for i in range(0, n, batch)]
    if len(slices) > 1 and (slices[-1].stop - slices[-1].start) < 2:
        # fold a trailing singleton into the previous batch so variance stays defined
        slices[-2] = slice(slices[-2].start, slices[-1].stop)
        slices.pop()
    return slices


def refine_dataset(snapshot: ModelSnapshot, records: list[SyntheticRecord],
                   cfg: RefineConfig) -> list[SyntheticRecord]:
    """Refine all records in place and return them.

    The partner image for each inner iteration is drawn from the assembly-time
    snapshot of the record set; the last iteration's partner index and mix spec
    are kept on the record so relabeling reproduces the exact mixed image.
    """
    if cfg.iterations < 0:
        raise ValueError("iterations must be >= 0")
    if not records:
        raise ValueError("no records to refine")
    if not has_batchnorm(snapshot.module) and cfg.alpha_bn != 0:
        raise ValueError("refinement requires BatchNorm layers (BN-statistics loss)")
    for p in snapshot.module.parameters():
        p.requires_grad_(False)

    n = len(records)
    hw = records[0].image.shape[-2:]
    masks = record_masks(snapshot, records, cfg.epsilon)
    pool = torch.from_numpy(np.stack([r.image for r in records]))  # assembly-time partners
    labels = np.array([r.class_id for r in records], dtype=np.int64)
    class_pools = {c: np.nonzero(labels == c)[0] for c in np.unique(labels)}
    rng = np.random.default_rng([cfg.seed, 4441])

    for sl in _batch_slices(n, cfg.batch):
        x0 = pool[sl].clone()
        y = labels[sl]
        y_t = torch.from_numpy(y)
        b = x0.shape[0]
        mask_t = torch.from_numpy(masks[sl])[:, None]
        x = x0.clone().requires_grad_(True)
        opt = torch.optim.Adam([x], lr=cfg.lr, betas=cfg.betas)

        def batch_loss(xb, partner_idx, specs, per_record: bool = False):
            grad = xb.requires_grad
            trace = forward(snapshot, xb, grad=grad)
            ce_vec = F.cross_entropy(trace.logits, y_t, reduction="none")
            loss_vec = ce_vec
            if cfg.alpha_bn != 0:
                loss_vec = loss_vec + cfg.alpha_bn * bn_loss(trace, snapshot)
            if cfg.alpha_lr != 0:
                x_mix = apply_batch(specs, xb, pool[torch.from_numpy(partner_idx)])
                trace_mix = forward(snapshot, x_mix, grad=grad)
                hinge = hinge_distances(trace_mix.probs, y, labels[partner_idx], cfg.r)
                loss_vec = loss_vec + cfg.alpha_lr * hinge
            return loss_vec if per_record else loss_vec.mean()

        def draw_partners():
            if cfg.partner_same_class:
                idx = np.array([class_pools[c][rng.integers(0, len(class_pools[c]))]
                                for c in y])
            else:
                idx = rng.integers(0, n, size=b)
            seeds = rng.integers(0, 2 ** 63, size=b, dtype=np.int64)
            specs = [sample_spec(cfg.mix_method, hw, int(s)) for s in seeds]
            return idx, specs

        idx, specs = draw_partners()
        with torch.no_grad():
            loss_init = batch_loss(x0, idx, specs, per_record=True).numpy()

        for _it in range(cfg.iterations):
            idx, specs = draw_partners()
            loss = batch_loss(x, idx, specs)
            opt.zero_grad()
            loss.backward()
            with torch.no_grad():
                x.grad.mul_(mask_t)
            opt.step()
            with torch.no_grad():
                # clamp to valid pixel range; masked-out pixels stay bit-identical
                x.data = torch.where(mask_t > 0, x.data.clamp(0.0, 1.0), x0)

        with torch.no_grad():
            loss_final = batch_loss(x.detach(), idx, specs, per_record=True).numpy()

        final = x.detach().numpy()
        for j, rec in enumerate(records[sl]):
            rec.image = final[j].copy()
            rec.partner_idx = int(idx[j])
            rec.aug_spec = specs[j]
            rec.refined = True
            rec.meta = dict(rec.meta)
            rec.meta["loss_init"] = float(loss_init[j])
            rec.meta["loss_final"] = float(loss_final[j])
    return records
