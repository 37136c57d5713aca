"""Shared fixtures: tiny datasets and a small trained teacher, built once per session."""
from __future__ import annotations

import copy

import numpy as np
import pytest
import torch
from torch import nn

from nrrdd.data import generate_shapes_dataset
from nrrdd.snapshot import ModelSnapshot
from nrrdd.teacher import TeacherConfig, train_teacher


@pytest.fixture(scope="session")
def tiny_train():
    return generate_shapes_dataset(10, 30, 32, seed=0)


@pytest.fixture(scope="session")
def tiny_test():
    return generate_shapes_dataset(10, 20, 32, seed=1)


@pytest.fixture(scope="session")
def tiny_teacher(tiny_train):
    return train_teacher(tiny_train, "convnet3", TeacherConfig(epochs=8), seed=0)


@pytest.fixture()
def teacher_copy(tiny_teacher):
    """Mutable deep copy for tests that modify weights."""
    snap = tiny_teacher
    return ModelSnapshot(snap.arch_id, copy.deepcopy(snap.module), snap.num_classes,
                         snap.input_shape, snap.norm_mean.copy(), snap.norm_std.copy(),
                         dict(snap.metadata))


class FixedHead(nn.Module):
    """Features = optional BN over the input; logits fixed by the classifier bias.

    Gives tests exact control over probabilities and BN statistics while
    honoring the forward_features/classifier contract.
    """

    def __init__(self, channels: int, num_classes: int, bias, with_bn: bool = True):
        super().__init__()
        layers = [nn.BatchNorm2d(channels)] if with_bn else [nn.Identity()]
        self.features = nn.Sequential(*layers)
        self.classifier = nn.Linear(channels, num_classes)
        with torch.no_grad():
            self.classifier.weight.zero_()
            self.classifier.bias.copy_(torch.as_tensor(bias, dtype=torch.float32))

    def forward_features(self, x):
        return self.features(x)

    def forward(self, x):
        return self.classifier(self.forward_features(x).mean(dim=(2, 3)))


def fixed_head_snapshot(bias, channels: int = 3, hw: int = 8,
                        with_bn: bool = True) -> ModelSnapshot:
    module = FixedHead(channels, len(bias), bias, with_bn=with_bn)
    module.eval()
    return ModelSnapshot("custom-fixed-head", module, len(bias), (channels, hw, hw),
                         np.zeros(channels, dtype=np.float32),
                         np.ones(channels, dtype=np.float32))


def finite_diff(loss_of_x, x: np.ndarray, index: tuple, h: float) -> tuple[float, bool]:
    """Central difference at one pixel plus a validity flag.

    The half-step estimate must agree with the full-step one; disagreement means
    the probe straddles a non-differentiable point (ReLU/hinge kink) where a
    difference quotient is not a gradient oracle.
    """
    def central(step):
        xp = x.copy()
        xp[index] += step
        xm = x.copy()
        xm[index] -= step
        return (loss_of_x(xp) - loss_of_x(xm)) / (2 * step)

    f1, f2 = central(h), central(h / 2)
    ok = abs(f1 - f2) <= 1e-4 * max(abs(f1), abs(f2), 1e-3)
    return f2, ok
