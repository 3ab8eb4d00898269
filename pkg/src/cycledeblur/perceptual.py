"""Frozen feature extractors for the perceptual cycle terms.

``vgg19`` mode reproduces the VGG-19 convolutional topology and needs an
external weight container (see :mod:`cycledeblur.checkpoint`) with names
``vgg19.block<i>.<j-1>.<weight|bias>``.  Tap ``(i, j)`` is the rectified
output of conv ``j`` in block ``i``, taken before that block's pooling,
so ``(3, 3)`` on a 256x256 input gives a 64x64x256 map.

``reduced`` mode is a small seeded random stack (3x3 convs with 8, 16 and
32 channels, each followed by ReLU and 2x2 max pooling).  Its tap
``(i, 1)`` is the pooled output of stage ``i``.
"""
from __future__ import annotations

import hashlib
from typing import Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_arrays

VGG19_BLOCKS = ((64, 64), (128, 128), (256, 256, 256, 256), (512, 512, 512, 512), (512, 512, 512, 512))
REDUCED_CHANNELS = (8, 16, 32)
# ImageNet statistics expected by the published VGG weights, for [0, 1] input
VGG_MEAN = (0.485, 0.456, 0.406)
VGG_STD = (0.229, 0.224, 0.225)
# torchvision ``features`` indices of the 16 convolutions, block by block
TORCHVISION_CONV_INDEX = ((0, 2), (5, 7), (10, 12, 14, 16), (19, 21, 23, 25), (28, 30, 32, 34))


class FeatureExtractor(nn.Module):
    def __init__(self, mode: str = "reduced", tap: Tuple[int, int] | None = None,
                 weights: str | None = None, seed: int = 0, dtype=torch.float32):
        super().__init__()
        if mode not in ("vgg19", "reduced"):
            raise ValueError(f"unknown extractor mode {mode!r}")
        self.mode = mode
        if mode == "vgg19":
            tap = tuple(tap or (3, 3))
            blocks = VGG19_BLOCKS
        else:
            tap = tuple(tap or (len(REDUCED_CHANNELS), 1))
            blocks = tuple((c,) for c in REDUCED_CHANNELS)
        i, j = tap
        if not (1 <= i <= len(blocks) and 1 <= j <= len(blocks[i - 1])):
            raise ValueError(f"tap {tap} out of range for {mode} topology")
        self.tap = (i, j)
        self.blocks = blocks

        prev = 3
        for b, chans in enumerate(blocks, start=1):
            for c, ch in enumerate(chans):
                self.add_module(f"block{b}_{c}", nn.Conv2d(prev, ch, 3, padding=1))
                prev = ch
        self.to(dtype)

        if mode == "vgg19":
            if not weights:
                raise FileNotFoundError("vgg19 extractor needs a weight file (config key perceptual.weights)")
            arrays, _ = load_arrays(weights)
            self._load_vgg(arrays, weights)
            self.register_buffer("mean", torch.tensor(VGG_MEAN, dtype=dtype).view(1, 3, 1, 1))
            self.register_buffer("std", torch.tensor(VGG_STD, dtype=dtype).view(1, 3, 1, 1))
        else:
            gen = torch.Generator().manual_seed(int(seed))
            with torch.no_grad():
                for conv in self._convs():
                    fan_in = conv.weight[0].numel()
                    w = torch.randn(conv.weight.shape, generator=gen, dtype=torch.float64)
                    conv.weight.copy_((w * np.sqrt(2.0 / fan_in)).to(dtype))
                    conv.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)

    def _convs(self):
        for b, chans in enumerate(self.blocks, start=1):
            for c in range(len(chans)):
                yield getattr(self, f"block{b}_{c}")

    def _load_vgg(self, arrays, path):
        with torch.no_grad():
            for b, chans in enumerate(self.blocks, start=1):
                for c in range(len(chans)):
                    conv = getattr(self, f"block{b}_{c}")
                    for kind in ("weight", "bias"):
                        key = f"vgg19.block{b}.{c}.{kind}"
                        if key not in arrays:
                            raise KeyError(f"{path}: missing array {key}")
                        src = torch.from_numpy(arrays[key])
                        target = getattr(conv, kind)
                        if tuple(src.shape) != tuple(target.shape):
                            raise ValueError(f"{path}: {key} has shape {tuple(src.shape)}, "
                                             f"expected {tuple(target.shape)}")
                        target.copy_(src.to(target.dtype))

    def min_size(self) -> int:
        i, _ = self.tap
        pools = i - 1 if self.mode == "vgg19" else i
        return 2 ** pools

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if min(x.shape[-2:]) < self.min_size():
            raise ValueError(f"input {tuple(x.shape[-2:])} smaller than extractor minimum {self.min_size()}")
        ti, tj = self.tap
        if self.mode == "vgg19":
            h = ((x + 1.0) * 0.5 - self.mean) / self.std
            for b, chans in enumerate(self.blocks, start=1):
                for c in range(len(chans)):
                    h = F.relu(getattr(self, f"block{b}_{c}")(h))
                    if (b, c + 1) == (ti, tj):
                        return h
                h = F.max_pool2d(h, 2)
        h = x
        for b in range(1, ti + 1):
            h = F.max_pool2d(F.relu(getattr(self, f"block{b}_0")(h)), 2)
        return h

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            digest.update(name.encode())
            digest.update(p.detach().cpu().numpy().tobytes())
        return digest.hexdigest()


def extract_features(fe: FeatureExtractor, x: torch.Tensor) -> torch.Tensor:
    return fe(x)


def perceptual_distance(a, b, dist: str = "L2"):
    """Mean squared (L2) or absolute (L1) feature difference.

    The mean runs over batch, channels and spatial positions.
    """
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"feature shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    diff = a - b
    if dist == "L2":
        return (diff * diff).mean()
    if dist == "L1":
        return abs(diff).mean()
    raise ValueError(f"unknown distance {dist!r}")


def vgg19_arrays_from_torchvision(state_dict) -> dict:
    """Rename a torchvision ``vgg19().features`` state dict to container names."""
    out = {}
    for b, idxs in enumerate(TORCHVISION_CONV_INDEX, start=1):
        for c, idx in enumerate(idxs):
            for kind in ("weight", "bias"):
                for prefix in ("features.", ""):
                    key = f"{prefix}{idx}.{kind}"
                    if key in state_dict:
                        out[f"vgg19.block{b}.{c}.{kind}"] = state_dict[key]
                        break
    return out
