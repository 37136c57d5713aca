"""Network architectures and the traced forward contract used across the pipeline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.modules.batchnorm import _BatchNorm

if TYPE_CHECKING:
    from .snapshot import ModelSnapshot


class ConvNet(nn.Module):
    """Stack of Conv(-BN)-ReLU-AvgPool blocks with a linear head on pooled features."""

    def __init__(self, num_classes: int, in_channels: int = 3, width: int = 32,
                 depth: int = 3, batchnorm: bool = True):
        super().__init__()
        layers: list[nn.Module] = []
        c, w = in_channels, width
        for _ in range(depth):
            layers.append(nn.Conv2d(c, w, 3, padding=1, bias=not batchnorm))
            if batchnorm:
                layers.append(nn.BatchNorm2d(w))
            layers.append(nn.ReLU(inplace=True))
            layers.append(nn.AvgPool2d(2))
            c, w = w, w * 2
        self.features = nn.Sequential(*layers)
        self.classifier = nn.Linear(c, num_classes)

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f = self.forward_features(x)
        return self.classifier(f.mean(dim=(2, 3)))


class BasicBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        if stride != 1 or c_in != c_out:
            self.shortcut: nn.Module = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False),
                nn.BatchNorm2d(c_out),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ResNet(nn.Module):
    """Small-image residual network (3x3 stem, four stages of basic blocks)."""

    def __init__(self, num_classes: int, in_channels: int = 3, base_width: int = 16,
                 blocks: tuple[int, ...] = (2, 2, 2, 2)):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, base_width, 3, padding=1, bias=False),
            nn.BatchNorm2d(base_width),
            nn.ReLU(inplace=True),
        )
        stages = []
        c = base_width
        for i, n in enumerate(blocks):
            w = base_width * (2 ** i)
            for j in range(n):
                stages.append(BasicBlock(c, w, stride=2 if (i > 0 and j == 0) else 1))
                c = w
        self.stages = nn.Sequential(*stages)
        self.classifier = nn.Linear(c, num_classes)

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        return self.stages(self.stem(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f = self.forward_features(x)
        return self.classifier(f.mean(dim=(2, 3)))


def build_model(arch_id: str, num_classes: int, in_channels: int = 3) -> nn.Module:
    """Instantiate an architecture by id.

    Supported ids: ``convnet3``, ``convnet3-nobn``, ``resnet18``; an optional
    ``-w<N>`` suffix overrides the base width (e.g. ``convnet3-w64``).
    """
    name = arch_id
    width = None
    if "-w" in name:
        name, _, suffix = name.rpartition("-w")
        width = int(suffix)
    if name == "convnet3":
        return ConvNet(num_classes, in_channels, width=width or 32)
    if name == "convnet3-nobn":
        return ConvNet(num_classes, in_channels, width=width or 32, batchnorm=False)
    if name == "resnet18":
        return ResNet(num_classes, in_channels, base_width=width or 16)
    raise ValueError(f"unknown architecture '{arch_id}'")


def bn_modules(module: nn.Module) -> list[_BatchNorm]:
    return [m for m in module.modules() if isinstance(m, _BatchNorm)]


def has_batchnorm(module: nn.Module) -> bool:
    return len(bn_modules(module)) > 0


@dataclass
class ForwardTrace:
    """Outputs of one traced forward pass over a batch.

    `logits`/`probs` are (B, K); `feature_maps` is the final-block activation
    tensor (B, F, hf, wf); `batch_bn` lists, per BatchNorm layer in execution
    order, the (mean, var) of that layer's input over the batch. The model runs
    in eval mode, so BN normalization itself uses running statistics.
    """

    logits: torch.Tensor
    probs: torch.Tensor
    feature_maps: torch.Tensor
    batch_bn: list[tuple[torch.Tensor, torch.Tensor]]

    def __len__(self) -> int:
        return self.logits.shape[0]


def _as_batch(images, dtype: torch.dtype) -> tuple[torch.Tensor, bool]:
    x = torch.as_tensor(np.asarray(images) if isinstance(images, np.ndarray) else images)
    x = x.to(dtype)
    if x.ndim == 3:
        return x.unsqueeze(0), True
    if x.ndim != 4:
        raise ValueError(f"expected (c,h,w) or (B,c,h,w) images, got shape {tuple(x.shape)}")
    return x, False


def forward(snapshot: "ModelSnapshot", images, grad: bool = False) -> ForwardTrace:
    """Run the snapshot's network on raw [0,1] images and capture a ForwardTrace.

    Normalization happens inside, so gradients flow back to the raw pixels when
    `grad=True`. Deterministic: eval mode, running BN statistics for the
    normalized path, batch statistics captured on the side.
    """
    module = snapshot.module
    module.eval()
    dtype = next(module.parameters()).dtype
    x, _ = _as_batch(images, dtype)
    if tuple(x.shape[1:]) != tuple(snapshot.input_shape):
        raise ValueError(
            f"batch shape {tuple(x.shape[1:])} does not match input_shape "
            f"{tuple(snapshot.input_shape)}")

    stats: list[tuple[torch.Tensor, torch.Tensor]] = []

    def bn_hook(mod, inputs, output):
        inp = inputs[0]
        dims = tuple(i for i in range(inp.ndim) if i != 1)
        n = inp.numel() // inp.shape[1]
        mean = inp.mean(dim=dims)
        var = inp.var(dim=dims, unbiased=True) if n > 1 else torch.zeros_like(mean)
        stats.append((mean, var))

    handles = [m.register_forward_hook(bn_hook) for m in bn_modules(module)]
    ctx = torch.enable_grad() if grad else torch.no_grad()
    try:
        with ctx:
            xn = snapshot.normalize(x)
            fmap = module.forward_features(xn)
            logits = module.classifier(fmap.mean(dim=(2, 3)))
            probs = F.softmax(logits, dim=1)
    finally:
        for h in handles:
            h.remove()
    if not grad:
        logits, probs, fmap = logits.detach(), probs.detach(), fmap.detach()
        stats = [(m.detach(), v.detach()) for m, v in stats]
    return ForwardTrace(logits=logits, probs=probs, feature_maps=fmap, batch_bn=stats)


def confidence(snapshot: "ModelSnapshot", image) -> float:
    """Highest predicted class probability for a single image."""
    trace = forward(snapshot, image)
    if len(trace) != 1:
        raise ValueError("confidence expects a single image")
    return float(trace.probs[0].max())


def confidences(snapshot: "ModelSnapshot", images, batch_size: int = 256) -> np.ndarray:
    """Vector of max-probability scores for a stack of images."""
    out = []
    for i in range(0, len(images), batch_size):
        trace = forward(snapshot, images[i:i + batch_size])
        out.append(trace.probs.max(dim=1).values.cpu().numpy())
    return np.concatenate(out) if out else np.empty(0, dtype=np.float32)


def input_gradient(snapshot: "ModelSnapshot",
                   images,
                   loss_fn: Callable[[ForwardTrace], torch.Tensor]):
    """Exact reverse-mode gradient of `loss_fn(trace)` w.r.t. the raw pixels.

    Accepts one image (c,h,w) or a batch (B,c,h,w); returns a numpy array of
    the same shape. `loss_fn` must produce a scalar.
    """
    dtype = next(snapshot.module.parameters()).dtype
    x, squeezed = _as_batch(images, dtype)
    x = x.clone().requires_grad_(True)
    trace = forward(snapshot, x, grad=True)
    loss = loss_fn(trace)
    if not torch.is_tensor(loss) or loss.dim() != 0:
        raise ValueError("loss_fn must return a scalar tensor")
    (g,) = torch.autograd.grad(loss, x)
    g = g.detach().cpu().numpy()
    return g[0] if squeezed else g
