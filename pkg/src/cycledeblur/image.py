"""Image arrays, PNG I/O, range conversion and resampling.

Images are plain ``float64`` numpy arrays of shape ``(H, W, C)`` with
``C in (1, 3)`` and values in ``[0, 1]``.  Networks consume the
``[-1, 1]`` range produced by :func:`normalize`.
"""
from __future__ import annotations

import os

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ImageError(ValueError):
    """Raised for unreadable, malformed or unwritable images."""


def as_image(data) -> np.ndarray:
    """Validate ``data`` as an image, clamping into ``[0, 1]``.

    2-D input is promoted to a single channel.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ImageError(f"expected HxWxC array, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1:
        raise ImageError(f"empty image of shape {arr.shape}")
    if c not in (1, 3):
        raise ImageError(f"channels must be 1 or 3, got {c}")
    if not np.all(np.isfinite(arr)):
        raise ImageError("image contains non-finite values")
    return np.clip(arr, 0.0, 1.0)


def load_image(path) -> np.ndarray:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"image not found: {path}")
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode == "L":
                raw = np.asarray(im, dtype=np.uint8)[:, :, None]
            elif im.mode in ("RGB", "RGBA", "P", "LA"):
                raw = np.asarray(im.convert("RGB"), dtype=np.uint8)
            else:
                raise ImageError(f"{path}: unsupported pixel mode {im.mode!r} (8-bit RGB or grayscale only)")
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"{path}: cannot decode image ({exc})") from exc
    return raw.astype(np.float64) / 255.0


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Quantize to uint8 with round-half-up."""
    img = as_image(img)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    path = os.fspath(path)
    raw = to_bytes(img)
    if raw.shape[2] == 1:
        pil = PILImage.fromarray(raw[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(raw, mode="RGB")
    try:
        pil.save(path, format="PNG")
    except OSError as exc:
        raise ImageError(f"{path}: cannot write image ({exc})") from exc


def normalize(img):
    """Map ``[0, 1]`` to ``[-1, 1]``.  Works on numpy arrays and torch tensors."""
    return img * 2.0 - 1.0


def denormalize(x):
    """Inverse of :func:`normalize`; does not clamp."""
    return (x + 1.0) * 0.5


def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centres, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, h: int, w: int) -> np.ndarray:
    if h < 1 or w < 1:
        raise ImageError(f"target size must be positive, got {h}x{w}")
    img = as_image(img)
    if img.shape[:2] == (h, w):
        return img.copy()
    y0, y1, fy = _bilinear_axis(img.shape[0], h)
    x0, x1, fx = _bilinear_axis(img.shape[1], w)
    rows = img[y0] * (1.0 - fy)[:, None, None] + img[y1] * fy[:, None, None]
    out = rows[:, x0] * (1.0 - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]
    return np.clip(out, 0.0, 1.0)


def to_luma(img: np.ndarray) -> np.ndarray:
    """Rec.601 luminance as a single-channel image."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError(f"to_luma needs a 3-channel image, got shape {img.shape}")
    return (img @ LUMA_WEIGHTS)[:, :, None]


def luma_plane(img: np.ndarray) -> np.ndarray:
    """2-D luminance plane; single-channel input passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return to_luma(img)[:, :, 0]
