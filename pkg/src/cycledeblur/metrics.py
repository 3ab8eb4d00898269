"""Full-reference quality metrics: PSNR, SSIM, MS-SSIM and pixel-domain VIF.

All metrics take images in ``[0, 1]``.  SSIM-family metrics and VIF work
on luminance; 3-channel input is converted with Rec.601 weights.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .image import load_image, luma_plane

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
METRIC_NAMES = ("PSNR", "SSIM", "MS-SSIM", "VIF")


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def gaussian(self) -> np.ndarray:
        """Normalized 1-D taps; the 2-D window is their outer product."""
        r = np.arange(self.window) - (self.window - 1) / 2.0
        g = np.exp(-(r ** 2) / (2.0 * self.sigma ** 2))
        return g / g.sum()


def _check_pair(ref, x):
    ref = np.asarray(ref, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if ref.shape != x.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {x.shape}")
    return ref, x


def psnr(ref, x, data_range: float = 1.0) -> float:
    ref, x = _check_pair(ref, x)
    mse = float(np.mean((ref - x) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def _ssim_terms(ref: np.ndarray, x: np.ndarray, p: SsimParams):
    """Mean SSIM and mean contrast-structure over valid window positions."""
    if min(ref.shape) < p.window:
        raise ValueError(f"image {ref.shape} smaller than the {p.window}x{p.window} SSIM window")
    g = p.gaussian()
    c1 = (p.k1 * p.data_range) ** 2
    c2 = (p.k2 * p.data_range) ** 2
    mu1 = _filter_valid(ref, g)
    mu2 = _filter_valid(x, g)
    s11 = _filter_valid(ref * ref, g) - mu1 * mu1
    s22 = _filter_valid(x * x, g) - mu2 * mu2
    s12 = _filter_valid(ref * x, g) - mu1 * mu2
    cs = (2.0 * s12 + c2) / (s11 + s22 + c2)
    lum = (2.0 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def ssim(ref, x, p: SsimParams = SsimParams()) -> float:
    ref, x = _check_pair(ref, x)
    return _ssim_terms(luma_plane(ref), luma_plane(x), p)[0]


def downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 box low-pass then decimation; odd edges are mirrored."""
    h, w = img.shape
    img = np.pad(img, ((0, h % 2), (0, w % 2)), mode="symmetric")
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _signed_pow(v: float, w: float) -> float:
    return math.copysign(abs(v) ** w, v)


def ms_ssim_weights(scales: int) -> tuple:
    if not 1 <= scales <= len(MS_SSIM_WEIGHTS):
        raise ValueError(f"scales must be in 1..{len(MS_SSIM_WEIGHTS)}")
    if scales == len(MS_SSIM_WEIGHTS):
        return MS_SSIM_WEIGHTS
    w = np.array(MS_SSIM_WEIGHTS[:scales])
    return tuple(w / w.sum())


def ms_ssim(ref, x, scales: int = 5, weights: Sequence[float] | None = None,
            p: SsimParams = SsimParams()) -> float:
    ref, x = _check_pair(ref, x)
    a, b = luma_plane(ref), luma_plane(x)
    weights = tuple(weights) if weights is not None else ms_ssim_weights(scales)
    if len(weights) != scales:
        raise ValueError("need one weight per scale")
    need = p.window * 2 ** (scales - 1)
    if min(a.shape) < need:
        raise ValueError(f"image {a.shape} too small for {scales} scales (needs >= {need})")
    out = 1.0
    for j in range(scales):
        full, cs = _ssim_terms(a, b, p)
        if j == scales - 1:
            out *= _signed_pow(full, weights[j])
        else:
            out *= _signed_pow(cs, weights[j])
            a, b = downsample2(a), downsample2(b)
    return out


def _gauss_filter(img: np.ndarray, n: int) -> np.ndarray:
    r = np.arange(n) - (n - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * (n / 5.0) ** 2))
    g /= g.sum()
    out = ndimage.correlate1d(img, g, axis=0, mode="reflect")
    return ndimage.correlate1d(out, g, axis=1, mode="reflect")


def vif_pixel(ref, x, sigma_nsq: float = 2.0) -> float:
    """Pixel-domain VIF over four Gaussian scales.

    Computed on an 8-bit luminance scale so the usual visual-noise
    variance of 2 applies.
    """
    ref, x = _check_pair(ref, x)
    a = luma_plane(ref) * 255.0
    b = luma_plane(x) * 255.0
    if min(a.shape) < 8:
        raise ValueError(f"image {a.shape} too small for VIF (needs >= 8)")
    eps = 1e-10
    num = den = 0.0
    for scale in range(1, 5):
        n = 2 ** (4 - scale + 1) + 1
        if scale > 1:
            a = _gauss_filter(a, n)[::2, ::2]
            b = _gauss_filter(b, n)[::2, ::2]
        mu1, mu2 = _gauss_filter(a, n), _gauss_filter(b, n)
        s11 = np.maximum(_gauss_filter(a * a, n) - mu1 * mu1, 0.0)
        s22 = np.maximum(_gauss_filter(b * b, n) - mu2 * mu2, 0.0)
        s12 = _gauss_filter(a * b, n) - mu1 * mu2

        g = s12 / (s11 + eps)
        sv = s22 - g * s12
        low1 = s11 < eps
        g[low1] = 0.0
        sv[low1] = s22[low1]
        s11 = np.where(low1, 0.0, s11)
        low2 = s22 < eps
        g[low2] = 0.0
        sv[low2] = 0.0
        neg = g < 0
        sv[neg] = s22[neg]
        g[neg] = 0.0
        sv = np.maximum(sv, eps)

        num += float(np.sum(np.log10(1.0 + g * g * s11 / (sv + sigma_nsq))))
        den += float(np.sum(np.log10(1.0 + s11 / sigma_nsq)))
    if den <= 0.0:
        # flat reference carries no information
        return 1.0 if np.allclose(ref, x) else 0.0
    return num / den


@dataclass
class MetricReport:
    metrics: List[str]
    rows: List[Dict[str, object]] = field(default_factory=list)

    @property
    def means(self) -> Dict[str, float]:
        return {m: float(np.mean([r[m] for r in self.rows])) if self.rows else math.nan
                for m in self.metrics}

    def to_csv(self, mean_row: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name"] + self.metrics)
        for r in self.rows:
            w.writerow([r["name"]] + [_fmt(r[m]) for m in self.metrics])
        if mean_row:
            means = self.means
            w.writerow(["mean"] + [_fmt(means[m]) for m in self.metrics])
        return buf.getvalue()

    def to_table(self, title: str = "Methods", mean_row: bool = True) -> str:
        header = [title] + self.metrics
        body = [[str(r["name"])] + [_fmt(r[m]) for m in self.metrics] for r in self.rows]
        footer = [["mean"] + [_fmt(v) for v in self.means.values()]] if mean_row else []
        widths = [max(len(row[i]) for row in [header] + body + footer) for i in range(len(header))]
        rule = "-" * (sum(widths) + 3 * (len(widths) - 1))
        fmt_row = lambda row: "   ".join(c.rjust(wd) if i else c.ljust(wd)
                                       for i, (c, wd) in enumerate(zip(row, widths)))
        lines = [rule, fmt_row(header), rule] + [fmt_row(r) for r in body] + [rule]
        if footer:
            lines += [fmt_row(footer[0]), rule]
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.4f}"


def compute_metrics(ref, x, metrics: Sequence[str] = METRIC_NAMES, ms_ssim_scales: int = 5) -> Dict[str, float]:
    a, b = luma_plane(ref), luma_plane(x)
    out = {}
    for m in metrics:
        if m == "PSNR":
            out[m] = psnr(a, b)
        elif m == "SSIM":
            out[m] = ssim(a, b)
        elif m == "MS-SSIM":
            out[m] = ms_ssim(a, b, scales=ms_ssim_scales)
        elif m == "VIF":
            out[m] = vif_pixel(a, b)
        else:
            raise ValueError(f"unknown metric {m!r}; choose from {METRIC_NAMES}")
    return out


def evaluate_corpus(pairs, metrics: Sequence[str] = METRIC_NAMES, ms_ssim_scales: int = 5) -> MetricReport:
    """Score ``(name, reference_path, test_path)`` triples in order.

    Missing files raise ``FileNotFoundError`` naming the offending entry.
    """
    report = MetricReport(list(metrics))
    for i, (name, ref_path, test_path) in enumerate(pairs):
        for p in (ref_path, test_path):
            try:
                open(p, "rb").close()
            except OSError:
                raise FileNotFoundError(f"pair {i} ({name}): missing file {p}") from None
        scores = compute_metrics(load_image(ref_path), load_image(test_path), metrics, ms_ssim_scales)
        report.rows.append({"name": name, **scores})
    return report
