"""Deterministic CutMix / Mixup: a sampled spec fully reproduces the mixed image."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch

METHODS = ("cutmix", "mixup")
_METHOD_CODES = {"cutmix": 1, "mixup": 2}
_CODE_METHODS = {v: k for k, v in _METHOD_CODES.items()}

SPEC_NBYTES = 24
_SPEC_STRUCT = struct.Struct("<If4HQ")


@dataclass(frozen=True)
class AugmentSpec:
    """One reproducible mixing application.

    `lam` is the weight kept on the original image; for cutmix the partner is
    pasted inside `box` = (top, left, height, width) and `lam` equals one minus
    the exact box-area fraction. For mixup the box is all zeros.
    """

    method: str
    lam: float
    box: tuple[int, int, int, int]
    seed: int

    def to_bytes(self) -> bytes:
        return _SPEC_STRUCT.pack(_METHOD_CODES[self.method], self.lam, *self.box, self.seed)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "AugmentSpec":
        code, lam, t, l, h, w, seed = _SPEC_STRUCT.unpack(raw)
        return cls(method=_CODE_METHODS[code], lam=float(lam), box=(t, l, h, w), seed=seed)


def sample_spec(method: str, image_hw: tuple[int, int], seed: int) -> AugmentSpec:
    """Draw a spec with lam ~ Beta(1,1); fully determined by `seed`."""
    if method not in METHODS:
        raise ValueError(f"unknown mix method '{method}'")
    H, W = int(image_hw[0]), int(image_hw[1])
    rng = np.random.default_rng(int(seed) & (2 ** 64 - 1))
    u = float(rng.uniform())
    if method == "mixup":
        return AugmentSpec(method="mixup", lam=u, box=(0, 0, 0, 0), seed=int(seed))
    cut = np.sqrt(1.0 - u)
    ch, cw = int(round(H * cut)), int(round(W * cut))
    if ch == 0 or cw == 0:
        return AugmentSpec(method="cutmix", lam=1.0, box=(0, 0, 0, 0), seed=int(seed))
    top = int(rng.integers(0, H - ch + 1))
    left = int(rng.integers(0, W - cw + 1))
    lam = 1.0 - (ch * cw) / (H * W)
    return AugmentSpec(method="cutmix", lam=lam, box=(top, left, ch, cw), seed=int(seed))


def apply(spec: AugmentSpec, x_org, x_aug):
    """Mix two images (or batches) according to the spec; pure and shape-preserving.

    mixup: lam * x_org + (1 - lam) * x_aug. cutmix: partner pixels inside the
    box, original pixels (bit-exact) outside.
    """
    if tuple(np.shape(x_org)) != tuple(np.shape(x_aug)):
        raise ValueError("x_org and x_aug must have identical shapes")
    if spec.method == "mixup":
        return spec.lam * x_org + (1.0 - spec.lam) * x_aug
    t, l, h, w = spec.box
    if h == 0 or w == 0:
        return x_org + 0 * x_aug  # empty box: identity, keeps autograd links
    is_torch = torch.is_tensor(x_org)
    out = x_org.clone() if is_torch else np.array(x_org, copy=True)
    out[..., t:t + h, l:l + w] = x_aug[..., t:t + h, l:l + w]
    return out


def partner_weight(spec: AugmentSpec, image_hw: tuple[int, int]) -> np.ndarray:
    """Per-pixel weight of the partner image, shape (h, w): the mixing operator is
    x_mix = (1 - m) * x_org + m * x_aug with this m."""
    H, W = int(image_hw[0]), int(image_hw[1])
    if spec.method == "mixup":
        return np.full((H, W), 1.0 - spec.lam, dtype=np.float32)
    m = np.zeros((H, W), dtype=np.float32)
    t, l, h, w = spec.box
    m[t:t + h, l:l + w] = 1.0
    return m


def apply_batch(specs: list[AugmentSpec], x_org: torch.Tensor,
                x_aug: torch.Tensor) -> torch.Tensor:
    """Differentiable batched mix: gradient w.r.t. x_org is scaled by (1 - m)."""
    if x_org.shape != x_aug.shape or len(specs) != x_org.shape[0]:
        raise ValueError("spec/batch size mismatch")
    hw = tuple(x_org.shape[-2:])
    m = np.stack([partner_weight(s, hw) for s in specs])[:, None]
    mt = torch.as_tensor(m, dtype=x_org.dtype, device=x_org.device)
    return (1.0 - mt) * x_org + mt * x_aug
