"""Generators (U-net and residual-block) and the patch discriminator.

Tensors are ``(N, C, H, W)`` in the ``[-1, 1]`` range.  Parameter names
follow ``<stage>.<index>.<weight|bias|scale|shift>``; checkpoints prefix
them with the network name, e.g. ``g_b2s.enc3.1.scale``.
"""
from __future__ import annotations

from typing import Dict, Iterable, Optional, Sequence, Tuple

import torch
import torch.nn as nn

GENERATOR_KINDS = ("unet", "resblock")
UNET_CHANNEL_MULT = (1, 2, 4, 8, 8, 8, 8, 8)
INIT_STD = 0.02


class ShapeError(ValueError):
    pass


def instance_normalize(x: torch.Tensor, scale: Optional[torch.Tensor] = None,
                       shift: Optional[torch.Tensor] = None, eps: float = 1e-5) -> torch.Tensor:
    """Per-sample, per-channel standardization followed by an affine map."""
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    y = (x - mean) / torch.sqrt(var + eps)
    if scale is not None:
        y = y * scale.view(1, -1, 1, 1)
    if shift is not None:
        y = y + shift.view(1, -1, 1, 1)
    return y


class InstanceNorm(nn.Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        self.eps = eps
        self.scale = nn.Parameter(torch.ones(channels))
        self.shift = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        return instance_normalize(x, self.scale, self.shift, self.eps)


class Identity(nn.Module):
    def forward(self, x):
        return x


def _act(kind: str):
    if kind == "leaky":
        return nn.LeakyReLU(0.2)
    if kind == "relu":
        return nn.ReLU()
    if kind == "tanh":
        return nn.Tanh()
    return Identity()


class UNetGenerator(nn.Module):
    """Encoder-decoder with skip concatenation between mirrored stages."""

    def __init__(self, depth: int = 8, base_channels: int = 64, in_channels: int = 3,
                 out_channels: int = 3, encoder_act: str = "leaky"):
        super().__init__()
        if depth < 2:
            raise ValueError("unet depth must be >= 2")
        mult = list(UNET_CHANNEL_MULT) + [8] * max(0, depth - len(UNET_CHANNEL_MULT))
        self.channels = [base_channels * m for m in mult[:depth]]
        self.depth = depth
        self.divisor = 2 ** depth

        prev = in_channels
        for i, ch in enumerate(self.channels):
            # no norm on the outermost stage, nor on the 1x1 bottleneck
            norm = 0 < i < depth - 1
            self.add_module(f"enc{i + 1}", nn.Sequential(
                nn.Conv2d(prev, ch, 4, stride=2, padding=1),
                InstanceNorm(ch) if norm else Identity(),
                _act(encoder_act),
            ))
            prev = ch
        for j in range(1, depth):
            skip = self.channels[depth - 1 - j]
            in_ch = prev if j == 1 else 2 * prev
            self.add_module(f"dec{j}", nn.Sequential(
                nn.ConvTranspose2d(in_ch, skip, 4, stride=2, padding=1),
                InstanceNorm(skip),
                nn.ReLU(),
            ))
            prev = skip
        self.out = nn.Sequential(
            nn.ConvTranspose2d(2 * prev, out_channels, 4, stride=2, padding=1),
            nn.Tanh(),
        )

    def forward(self, x):
        skips = []
        h = x
        for i in range(1, self.depth + 1):
            h = getattr(self, f"enc{i}")(h)
            skips.append(h)
        for j in range(1, self.depth):
            inp = h if j == 1 else torch.cat([h, skips[self.depth - j]], dim=1)
            h = getattr(self, f"dec{j}")(inp)
        return self.out(torch.cat([h, skips[0]], dim=1))


class ResidualBlock(nn.Sequential):
    def __init__(self, channels: int):
        super().__init__(
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            InstanceNorm(channels),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            InstanceNorm(channels),
        )

    def forward(self, x):
        return x + super().forward(x)


class ResBlockGenerator(nn.Module):
    """Johnson-style transformer: 7x7 head, two downs, residual trunk, two ups."""

    def __init__(self, n_blocks: int = 9, base_channels: int = 64,
                 in_channels: int = 3, out_channels: int = 3):
        super().__init__()
        c = base_channels
        self.divisor = 4
        self.n_blocks = n_blocks
        self.head = nn.Sequential(
            nn.Conv2d(in_channels, c, 7, padding=3, padding_mode="reflect"), InstanceNorm(c), nn.ReLU())
        self.down1 = nn.Sequential(nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), InstanceNorm(2 * c), nn.ReLU())
        self.down2 = nn.Sequential(nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1), InstanceNorm(4 * c), nn.ReLU())
        for k in range(1, n_blocks + 1):
            self.add_module(f"res{k}", ResidualBlock(4 * c))
        self.up1 = nn.Sequential(
            nn.ConvTranspose2d(4 * c, 2 * c, 3, stride=2, padding=1, output_padding=1),
            InstanceNorm(2 * c), nn.ReLU())
        self.up2 = nn.Sequential(
            nn.ConvTranspose2d(2 * c, c, 3, stride=2, padding=1, output_padding=1),
            InstanceNorm(c), nn.ReLU())
        self.tail = nn.Sequential(
            nn.Conv2d(c, out_channels, 7, padding=3, padding_mode="reflect"), nn.Tanh())

    def forward(self, x):
        h = self.down2(self.down1(self.head(x)))
        for k in range(1, self.n_blocks + 1):
            h = getattr(self, f"res{k}")(h)
        return self.tail(self.up2(self.up1(h)))


class PatchDiscriminator(nn.Module):
    """PatchGAN: C64-C128-C256 (stride 2), C512 (stride 1), 1-channel head.

    Scores are raw (no sigmoid).
    """

    def __init__(self, n_layers: int = 3, base_channels: int = 64, in_channels: int = 3):
        super().__init__()
        self.n_layers = n_layers
        self.add_module("c1", nn.Sequential(
            nn.Conv2d(in_channels, base_channels, 4, stride=2, padding=1), Identity(), nn.LeakyReLU(0.2)))
        prev = base_channels
        for n in range(1, n_layers + 1):
            ch = base_channels * min(2 ** n, 8)
            stride = 2 if n < n_layers else 1
            self.add_module(f"c{n + 1}", nn.Sequential(
                nn.Conv2d(prev, ch, 4, stride=stride, padding=1), InstanceNorm(ch), nn.LeakyReLU(0.2)))
            prev = ch
        self.out = nn.Sequential(nn.Conv2d(prev, 1, 4, stride=1, padding=1))
        self.windows = [4] * (n_layers + 2)
        self.strides = [2] * n_layers + [1, 1]

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.windows, self.strides)

    def output_size(self, n: int) -> int:
        for k, s in zip(self.windows, self.strides):
            n = (n + 2 - k) // s + 1
        return n

    def forward(self, x):
        for n in range(1, self.n_layers + 2):
            x = getattr(self, f"c{n}")(x)
        return self.out(x)


def receptive_field(windows: Sequence[int], strides: Sequence[int]) -> int:
    """Receptive field of a conv stack via ``r += (k - 1) * jump``."""
    r, jump = 1, 1
    for k, s in zip(windows, strides):
        r += (k - 1) * jump
        jump *= s
    return r


def init_parameters(net: nn.Module, seed: int, std: float = INIT_STD) -> nn.Module:
    """Conv weights ~ N(0, std), biases 0, norm scale 1 / shift 0."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name.endswith(".weight"):
                w = torch.randn(p.shape, generator=gen, dtype=torch.float64) * std
                p.copy_(w.to(p.dtype))
            elif name.endswith(".scale"):
                p.fill_(1.0)
            else:
                p.zero_()
    return net


def build_generator(kind: str, seed: int = 0, *, base_channels: int = 64, depth: int = 8,
                    n_blocks: int = 9, dtype=torch.float32, encoder_act: str = "leaky") -> nn.Module:
    if kind == "unet":
        net = UNetGenerator(depth=depth, base_channels=base_channels, encoder_act=encoder_act)
    elif kind == "resblock":
        net = ResBlockGenerator(n_blocks=n_blocks, base_channels=base_channels)
    else:
        raise ValueError(f"unknown generator kind {kind!r}; expected one of {GENERATOR_KINDS}")
    net.kind = kind
    return init_parameters(net.to(dtype), seed)


def build_discriminator(seed: int = 0, *, n_layers: int = 3, base_channels: int = 64,
                        dtype=torch.float32) -> PatchDiscriminator:
    net = PatchDiscriminator(n_layers=n_layers, base_channels=base_channels)
    return init_parameters(net.to(dtype), seed)


def generator_forward(g: nn.Module, x: torch.Tensor) -> torch.Tensor:
    if x.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W) batch, got shape {tuple(x.shape)}")
    div = g.divisor
    h, w = x.shape[-2:]
    if h % div or w % div:
        raise ShapeError(f"{g.kind} generator needs spatial dims divisible by {div}, got {h}x{w}")
    return g(x)


def discriminator_forward(d: PatchDiscriminator, x: torch.Tensor) -> torch.Tensor:
    if x.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W) batch, got shape {tuple(x.shape)}")
    rf = d.receptive_field
    h, w = x.shape[-2:]
    if h < rf or w < rf:
        raise ShapeError(f"discriminator input {h}x{w} smaller than receptive field {rf}x{rf}")
    return d(x)


def named_arrays(net: nn.Module, prefix: str = "") -> Dict[str, torch.Tensor]:
    pre = f"{prefix}." if prefix else ""
    return {pre + k: v for k, v in net.state_dict().items()}


def parameter_names(net: nn.Module) -> Tuple[str, ...]:
    return tuple(name for name, _ in net.named_parameters())


def expected_unet_names(depth: int = 8) -> Iterable[str]:
    """Enumerate U-net parameter names from the stage schedule alone."""
    names = []
    for i in range(1, depth + 1):
        names += [f"enc{i}.0.weight", f"enc{i}.0.bias"]
        if 1 < i < depth:
            names += [f"enc{i}.1.scale", f"enc{i}.1.shift"]
    for j in range(1, depth):
        names += [f"dec{j}.0.weight", f"dec{j}.0.bias", f"dec{j}.1.scale", f"dec{j}.1.shift"]
    names += ["out.0.weight", "out.0.bias"]
    return names
