"""Motion-blur synthesis.

Kernels come from random camera trajectories (a second-order random walk
in the image plane, sampled densely and splatted onto a grid).  Blurring
applies the shift-invariant model ``blur = sharp * k + n`` per channel.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .image import as_image, save_image


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryParams:
    num_steps: int = 2000
    exposure_fraction: float = 1.0
    impulse_prob: float = 0.005
    anxiety: float = 0.005
    # None means 0.75 * kernel size
    max_extent: Optional[float] = None
    seed: int = 0
    # camera speed in units of max_extent / (num_steps - 1); 0 gives a still camera
    initial_speed: float = 1.0

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if not 0.0 < self.exposure_fraction <= 1.0:
            raise ValueError("exposure_fraction must be in (0, 1]")
        if not 0.0 <= self.impulse_prob <= 1.0:
            raise ValueError("impulse_prob must be in [0, 1]")
        if self.anxiety < 0:
            raise ValueError("anxiety must be >= 0")
        if self.max_extent is not None and self.max_extent < 0:
            raise ValueError("max_extent must be >= 0")
        if self.initial_speed < 0:
            raise ValueError("initial_speed must be >= 0")

    def resolved_extent(self, kernel_size: int) -> float:
        return 0.75 * kernel_size if self.max_extent is None else float(self.max_extent)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")


def generate_trajectory(params: TrajectoryParams, kernel_size: int = 31) -> np.ndarray:
    """Simulate a shaky camera path.

    Returns a ``(num_steps, 2)`` array of ``(x, y)`` offsets in pixels,
    centred on the bounding-box centre and scaled so the larger bounding
    box side equals the extent (unless the path is a single point).
    """
    n = params.num_steps
    extent = params.resolved_extent(kernel_size)
    rng = np.random.default_rng(params.seed)
    shake = 10.0 * rng.uniform()
    centripetal = 0.7 * rng.uniform()
    angle = 2.0 * math.pi * rng.uniform()
    u_impulse = rng.uniform(size=max(n - 1, 0))
    u_angle = rng.uniform(size=max(n - 1, 0))
    noise = rng.standard_normal(size=(max(n - 1, 0), 2))

    step = 1.0 / max(n - 1, 1)
    speed = params.initial_speed * step
    v = speed * complex(math.cos(angle), math.sin(angle))
    x = np.zeros(n, dtype=np.complex128)
    running_sum = 0j
    for t in range(n - 1):
        running_sum += x[t]
        centroid = running_sum / (t + 1)
        if u_impulse[t] < params.impulse_prob:
            kick = 2.0 * v * np.exp(1j * (math.pi + (u_angle[t] - 0.5)))
        else:
            kick = 0j
        shake_c = complex(noise[t, 0], noise[t, 1])
        v = v + kick + params.anxiety * (shake * shake_c - centripetal * (x[t] - centroid)) * step
        mag = abs(v)
        if speed > 0 and mag > 0:
            v = v / mag * speed
        x[t + 1] = x[t] + v

    pts = np.stack([x.real, x.imag], axis=1)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    size = float(np.max(hi - lo))
    centred = pts - (lo + hi) / 2.0
    if size > 0:
        centred *= extent / size
    return centred


def trajectory_to_kernel(path, size: int) -> np.ndarray:
    """Splat path points onto a ``size x size`` grid with bilinear weights.

    Offsets are relative to the grid centre; x indexes columns, y rows.
    """
    if size < 1 or size % 2 == 0:
        raise KernelError(f"kernel size must be a positive odd integer, got {size}")
    pts = np.asarray(path, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise KernelError("empty trajectory")
    c = size // 2
    col = pts[:, 0] + c
    row = pts[:, 1] + c
    c0 = np.floor(col).astype(np.int64)
    r0 = np.floor(row).astype(np.int64)
    fc = col - c0
    fr = row - r0
    grid = np.zeros((size, size))
    for dr, dc, wt in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr, cc = r0 + dr, c0 + dc
        ok = (rr >= 0) & (rr < size) & (cc >= 0) & (cc < size) & (wt > 0)
        np.add.at(grid, (rr[ok], cc[ok]), wt[ok])
    total = grid.sum()
    if total <= 0:
        raise KernelError(f"trajectory lies entirely outside the {size}x{size} kernel grid")
    return grid / total


def check_kernel(kernel) -> np.ndarray:
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise KernelError(f"kernel must be square with odd size, got shape {k.shape}")
    if np.any(k < 0):
        raise KernelError("kernel has negative weights")
    if abs(k.sum() - 1.0) > 1e-6:
        raise KernelError(f"kernel sums to {k.sum()}, expected 1")
    return k


def delta_kernel(size: int = 1) -> np.ndarray:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def convolve_image(img, kernel) -> np.ndarray:
    """Same-size 2-D convolution per channel with reflect padding, no clamping."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    k = np.asarray(kernel, dtype=np.float64)
    out = np.empty_like(arr)
    for ch in range(arr.shape[2]):
        out[:, :, ch] = ndimage.convolve(arr[:, :, ch], k, mode="reflect")
    return out


def apply_blur(img, kernel, noise: NoiseSpec = NoiseSpec()) -> np.ndarray:
    img = as_image(img)
    k = check_kernel(kernel)
    out = convolve_image(img, k)
    if noise.sigma > 0:
        rng = np.random.default_rng(noise.seed)
        out = out + rng.normal(0.0, noise.sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def synth_pair(sharp, tp: TrajectoryParams, ks: int = 31, noise: NoiseSpec = NoiseSpec()):
    """Blur ``sharp`` with a freshly sampled trajectory kernel.

    Returns ``(blur, sharp, kernel)``.
    """
    sharp = as_image(sharp)
    path = generate_trajectory(tp, kernel_size=ks)
    n_used = max(1, math.ceil(tp.exposure_fraction * len(path)))
    kernel = trajectory_to_kernel(path[:n_used], ks)
    return apply_blur(sharp, kernel, noise), sharp, kernel


def item_seed(seed: int, index: int) -> int:
    """Per-item seed for parallel-safe batch synthesis."""
    return (int(seed) ^ int(index)) & 0xFFFFFFFFFFFFFFFF


def save_kernel_png(kernel, path) -> None:
    """Heatmap dump scaled so the peak weight is white."""
    k = np.asarray(kernel, dtype=np.float64)
    peak = k.max()
    save_image(k / peak if peak > 0 else k, path)


def kernel_to_text(kernel) -> str:
    k = np.asarray(kernel, dtype=np.float64)
    return "\n".join(" ".join(f"{v:.8e}" for v in row) for row in k) + "\n"


def kernel_from_text(text: str) -> np.ndarray:
    return np.array([[float(v) for v in line.split()] for line in text.strip().splitlines()])
