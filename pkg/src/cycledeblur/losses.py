"""Adversarial and perceptual-cycle objectives.

Routing: ``D_A`` judges the blur domain (real blur vs ``G_S2B(sharp)``),
``D_B`` judges the sharp domain (real sharp vs ``G_B2S(blur)``).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .perceptual import perceptual_distance

ADV_KINDS = ("least_squares", "cross_entropy")
CYCLE_MODES = ("paired", "reconstruction", "both")


@dataclass
class LossConfig:
    alpha: float = 10.0
    adv_kind: str = "least_squares"
    cycle_dist: str = "L2"
    cycle_mode: str = "paired"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.adv_kind not in ADV_KINDS:
            raise ValueError(f"adv_kind must be one of {ADV_KINDS}")
        if self.cycle_dist not in ("L1", "L2"):
            raise ValueError("cycle_dist must be L1 or L2")
        if self.cycle_mode not in CYCLE_MODES:
            raise ValueError(f"cycle_mode must be one of {CYCLE_MODES}")


@dataclass
class LossReport:
    step: int
    adv1: float
    adv2: float
    cycle1: float
    cycle2: float
    total: float
    alpha: float
    lr: float = 0.0
    d_loss: float = 0.0
    d_steps: int = 0
    g_steps: int = 0

    def check_identity(self, tol: float = 1e-6) -> bool:
        expected = self.adv1 + self.adv2 + self.alpha * (self.cycle1 + self.cycle2)
        return abs(self.total - expected) <= tol * max(1.0, abs(expected))

    def as_record(self) -> dict:
        return asdict(self)


def adv_loss_D(real_scores, fake_scores, kind: str = "least_squares"):
    if kind == "least_squares":
        return 0.5 * ((real_scores - 1.0) ** 2).mean() + 0.5 * (fake_scores ** 2).mean()
    if kind == "cross_entropy":
        real = F.binary_cross_entropy_with_logits(real_scores, torch.ones_like(real_scores))
        fake = F.binary_cross_entropy_with_logits(fake_scores, torch.zeros_like(fake_scores))
        return 0.5 * (real + fake)
    raise ValueError(f"unknown adversarial kind {kind!r}")


def adv_loss_G(fake_scores, kind: str = "least_squares"):
    if kind == "least_squares":
        return ((fake_scores - 1.0) ** 2).mean()
    if kind == "cross_entropy":
        return F.binary_cross_entropy_with_logits(fake_scores, torch.ones_like(fake_scores))
    raise ValueError(f"unknown adversarial kind {kind!r}")


def cycle_losses(fe, blur, sharp, fake_sharp, fake_blur, recon_blur=None, recon_sharp=None,
                 cfg: LossConfig = LossConfig()):
    """Return ``(cycle1, cycle2)``.

    ``cycle1`` covers the blur-to-sharp path and ``cycle2`` the
    sharp-to-blur path.  Paired mode compares generator outputs with the
    ground-truth partner; reconstruction mode compares round trips with
    the inputs.
    """
    d = cfg.cycle_dist
    c1 = c2 = 0.0
    if cfg.cycle_mode in ("paired", "both"):
        c1 = c1 + perceptual_distance(fe(sharp), fe(fake_sharp), d)
        c2 = c2 + perceptual_distance(fe(blur), fe(fake_blur), d)
    if cfg.cycle_mode in ("reconstruction", "both"):
        if recon_blur is None or recon_sharp is None:
            raise ValueError("reconstruction cycle mode needs recon_blur and recon_sharp")
        c1 = c1 + perceptual_distance(fe(blur), fe(recon_blur), d)
        c2 = c2 + perceptual_distance(fe(sharp), fe(recon_sharp), d)
    return c1, c2


def total_loss(adv, cycle, alpha: float):
    return adv + alpha * cycle


def check_finite(**terms) -> None:
    """Raise :class:`DivergenceError` naming the first non-finite term."""
    for name, value in terms.items():
        v = float(value.detach()) if hasattr(value, "detach") else float(value)
        if not math.isfinite(v):
            raise DivergenceError(name, v)


class DivergenceError(FloatingPointError):
    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite loss term {term!r} ({value})")
        self.term = term
        self.value = value
