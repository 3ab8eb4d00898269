"""Alternating adversarial training of the two generator/discriminator pairs.

Every source of randomness is derived from ``(seed, step)`` so a run
resumed from a checkpoint replays the uninterrupted run exactly.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch

from .checkpoint import load_arrays, save_arrays
from .data import epoch_order, epoch_seed
from .image import as_image, denormalize, normalize
from .losses import (LossConfig, LossReport, adv_loss_D, adv_loss_G, check_finite, cycle_losses,
                     total_loss)
from .networks import build_discriminator, build_generator, named_arrays
from .perceptual import FeatureExtractor

log = logging.getLogger(__name__)

NET_NAMES = ("g_b2s", "g_s2b", "d_a", "d_b")
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class ModelConfig:
    generator: str = "unet"
    base_channels: int = 64
    unet_depth: int = 8
    res_blocks: int = 9
    disc_layers: int = 3
    disc_base_channels: int = 64
    encoder_act: str = "leaky"


@dataclass
class PerceptualConfig:
    mode: str = "vgg19"
    tap: Optional[List[int]] = None
    weights: Optional[str] = None
    seed: int = 0


@dataclass
class TrainConfig:
    lr0: float = 2e-3
    epochs: int = 50
    decay_start: int = 40
    batch_size: int = 2
    d_steps_per_g: int = 10
    seed: int = 0
    checkpoint_every: int = 0
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # stop after this many generator steps (None: run all epochs)
    max_steps: Optional[int] = None
    dtype: str = "float32"
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if not 0 <= self.decay_start <= self.epochs:
            raise ValueError("need 0 <= decay_start <= epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.d_steps_per_g < 1:
            raise ValueError("d_steps_per_g must be >= 1")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {tuple(DTYPES)}")


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Constant ``lr0`` before ``decay_start``, then linear to zero at ``epochs``."""
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    if epoch < cfg.decay_start:
        return cfg.lr0
    if cfg.epochs == cfg.decay_start:
        return 0.0
    return cfg.lr0 * ((cfg.epochs - epoch) / (cfg.epochs - cfg.decay_start))


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, torch.Tensor] = field(default_factory=dict)
    v: Dict[str, torch.Tensor] = field(default_factory=dict)


def adam_update(params: Dict[str, torch.Tensor], grads: Dict[str, Optional[torch.Tensor]], state: AdamState,
                lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam step, in place on ``params`` and ``state``."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            if tuple(g.shape) != tuple(p.shape):
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
            m = state.m.setdefault(name, torch.zeros_like(p))
            v = state.v.setdefault(name, torch.zeros_like(p))
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.sub_(lr * (m / bc1) / (torch.sqrt(v / bc2) + eps))
    return state


def _sub_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed), k]).generate_state(1)[0])


def build_nets(model: ModelConfig, seed: int, dtype=torch.float32) -> Dict[str, torch.nn.Module]:
    def gen(k):
        return build_generator(model.generator, _sub_seed(seed, k), base_channels=model.base_channels,
                               depth=model.unet_depth, n_blocks=model.res_blocks, dtype=dtype,
                               encoder_act=model.encoder_act)

    def disc(k):
        return build_discriminator(_sub_seed(seed, k), n_layers=model.disc_layers,
                                   base_channels=model.disc_base_channels, dtype=dtype)

    return {"g_b2s": gen(0), "g_s2b": gen(1), "d_a": disc(2), "d_b": disc(3)}


def build_extractor(p: PerceptualConfig, dtype=torch.float32) -> FeatureExtractor:
    return FeatureExtractor(p.mode, tuple(p.tap) if p.tap else None, p.weights, p.seed, dtype)


@dataclass
class Checkpoint:
    arrays: Dict[str, np.ndarray]
    meta: dict

    def save(self, path) -> None:
        save_arrays(path, self.arrays, self.meta)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        arrays, meta = load_arrays(path)
        return cls(arrays, meta)

    def net_arrays(self, net: str) -> Dict[str, np.ndarray]:
        pre = net + "."
        return {k[len(pre):]: v for k, v in self.arrays.items() if k.startswith(pre)}


class Trainer:
    def __init__(self, model: ModelConfig = ModelConfig(), perceptual: PerceptualConfig = PerceptualConfig(),
                 cfg: TrainConfig = TrainConfig(), extractor: FeatureExtractor | None = None):
        self.model = model
        self.perceptual = perceptual
        self.cfg = cfg
        self.dtype = DTYPES[cfg.dtype]
        self.nets = build_nets(model, cfg.seed, self.dtype)
        self.fe = extractor if extractor is not None else build_extractor(perceptual, self.dtype)
        self.opt_g = AdamState()
        self.opt_d = AdamState()
        self.g_step = 0
        self.d_step = 0
        self.spe = 0
        self.log: List[LossReport] = []

    # parameter views --------------------------------------------------
    def _params(self, names) -> Dict[str, torch.Tensor]:
        out = {}
        for n in names:
            for k, p in self.nets[n].named_parameters():
                out[f"{n}.{k}"] = p
        return out

    def g_params(self):
        return self._params(("g_b2s", "g_s2b"))

    def d_params(self):
        return self._params(("d_a", "d_b"))

    # steps ------------------------------------------------------------
    def discriminator_step(self, blur, sharp, lr: float) -> float:
        g_b2s, g_s2b, d_a, d_b = (self.nets[k] for k in NET_NAMES)
        kind = self.cfg.loss.adv_kind
        with torch.no_grad():
            fake_sharp = g_b2s(blur)
            fake_blur = g_s2b(sharp)
        loss_a = adv_loss_D(d_a(blur), d_a(fake_blur), kind)
        loss_b = adv_loss_D(d_b(sharp), d_b(fake_sharp), kind)
        check_finite(d_a=loss_a, d_b=loss_b)
        params = self.d_params()
        grads = torch.autograd.grad(loss_a + loss_b, list(params.values()))
        adam_update(params, dict(zip(params, grads)), self.opt_d, lr,
                    self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps)
        self.d_step += 1
        return float((loss_a + loss_b).detach())

    def generator_losses(self, blur, sharp):
        g_b2s, g_s2b, d_a, d_b = (self.nets[k] for k in NET_NAMES)
        lc = self.cfg.loss
        fake_sharp = g_b2s(blur)
        fake_blur = g_s2b(sharp)
        adv1 = adv_loss_G(d_b(fake_sharp), lc.adv_kind)
        adv2 = adv_loss_G(d_a(fake_blur), lc.adv_kind)
        recon_blur = recon_sharp = None
        if lc.cycle_mode != "paired":
            recon_blur = g_s2b(fake_sharp)
            recon_sharp = g_b2s(fake_blur)
        c1, c2 = cycle_losses(self.fe, blur, sharp, fake_sharp, fake_blur, recon_blur, recon_sharp, lc)
        total = total_loss(adv1 + adv2, c1 + c2, lc.alpha)
        return total, adv1, adv2, c1, c2

    def generator_step(self, blur, sharp, lr: float):
        total, adv1, adv2, c1, c2 = self.generator_losses(blur, sharp)
        check_finite(adv1=adv1, adv2=adv2, cycle1=c1, cycle2=c2, total=total)
        params = self.g_params()
        grads = torch.autograd.grad(total, list(params.values()), allow_unused=True)
        adam_update(params, dict(zip(params, grads)), self.opt_g, lr,
                    self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps)
        return total, adv1, adv2, c1, c2

    def train_step(self, dataset, indices, lr: float) -> LossReport:
        """``d_steps_per_g`` discriminator updates on fresh batches, then one generator update."""
        cfg = self.cfg
        d_loss = 0.0
        for k in range(cfg.d_steps_per_g):
            rng = np.random.default_rng([cfg.seed, 1, self.g_step, k])
            idx = rng.choice(len(dataset), size=cfg.batch_size, replace=False)
            blur, sharp = dataset.batch(idx, self.dtype)
            d_loss = self.discriminator_step(blur, sharp, lr)
        blur, sharp = dataset.batch(indices, self.dtype)
        total, adv1, adv2, c1, c2 = self.generator_step(blur, sharp, lr)
        self.g_step += 1
        report = LossReport(step=self.g_step, adv1=float(adv1.detach()), adv2=float(adv2.detach()), cycle1=float(c1.detach()),
                            cycle2=float(c2.detach()), total=float(total.detach()), alpha=cfg.loss.alpha, lr=lr,
                            d_loss=d_loss, d_steps=self.d_step, g_steps=self.g_step)
        self.log.append(report)
        return report

    # loop -------------------------------------------------------------
    def steps_per_epoch(self, n: int) -> int:
        return n // self.cfg.batch_size

    def fit(self, dataset, log_path=None, checkpoint_dir=None) -> Checkpoint:
        cfg = self.cfg
        spe = self.spe = self.steps_per_epoch(len(dataset))
        if len(dataset) == 0:
            raise ValueError("empty dataset")
        if spe == 0:
            raise ValueError(f"dataset of {len(dataset)} pairs smaller than batch size {cfg.batch_size}")
        total = cfg.epochs * spe
        if cfg.max_steps is not None:
            total = min(total, cfg.max_steps)
        before = self.fe.fingerprint()
        logf = open(log_path, "a", encoding="utf-8") if log_path else None
        try:
            order = None
            while self.g_step < total:
                epoch, b = divmod(self.g_step, spe)
                if order is None or b == 0:
                    order = epoch_order(len(dataset), epoch_seed(cfg.seed, epoch))
                lr = lr_schedule(epoch, cfg)
                report = self.train_step(dataset, order[b * cfg.batch_size:(b + 1) * cfg.batch_size], lr)
                if logf:
                    logf.write(json.dumps({"epoch": epoch, **report.as_record()}) + "\n")
                    logf.flush()
                if b == spe - 1:
                    log.info("epoch %d done: step %d total %.5f", epoch, self.g_step, report.total)
                    if checkpoint_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                        self.checkpoint().save(os.path.join(checkpoint_dir, f"epoch_{epoch + 1:04d}.ckpt"))
        finally:
            if logf:
                logf.close()
        if self.fe.fingerprint() != before:
            raise RuntimeError("perceptual extractor parameters changed during training")
        ckpt = self.checkpoint()
        if checkpoint_dir:
            ckpt.save(os.path.join(checkpoint_dir, "final.ckpt"))
        return ckpt

    # checkpointing ----------------------------------------------------
    def checkpoint(self) -> Checkpoint:
        arrays = {}
        for n in NET_NAMES:
            arrays.update({k: v.detach().cpu().numpy().copy() for k, v in named_arrays(self.nets[n], n).items()})
        for tag, st in (("opt_g", self.opt_g), ("opt_d", self.opt_d)):
            for k, t in st.m.items():
                arrays[f"{tag}.{k}.m"] = t.detach().cpu().numpy().copy()
            for k, t in st.v.items():
                arrays[f"{tag}.{k}.v"] = t.detach().cpu().numpy().copy()
        meta = {
            "config": {"model": asdict(self.model), "perceptual": asdict(self.perceptual), "train": asdict(self.cfg)},
            "g_step": self.g_step,
            "d_step": self.d_step,
            "epoch": self.g_step // self.spe if self.spe else 0,
            "opt_g_step": self.opt_g.step,
            "opt_d_step": self.opt_d.step,
            "seed": self.cfg.seed,
            "extractor_fingerprint": self.fe.fingerprint(),
        }
        return Checkpoint(arrays, meta)

    def load_checkpoint(self, ckpt: Checkpoint) -> "Trainer":
        with torch.no_grad():
            for n in NET_NAMES:
                sd = {k: torch.from_numpy(v) for k, v in ckpt.net_arrays(n).items()}
                self.nets[n].load_state_dict(sd, strict=True)
        for tag, st in (("opt_g", self.opt_g), ("opt_d", self.opt_d)):
            st.m.clear()
            st.v.clear()
            pre = tag + "."
            for k, v in ckpt.arrays.items():
                if k.startswith(pre):
                    name, moment = k[len(pre):].rsplit(".", 1)
                    getattr(st, moment)[name] = torch.from_numpy(v.copy()).to(self.dtype)
            st.step = int(ckpt.meta[f"{tag}_step"])
        self.g_step = int(ckpt.meta["g_step"])
        self.d_step = int(ckpt.meta["d_step"])
        self.spe = 0
        return self

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, **overrides) -> "Trainer":
        conf = ckpt.meta["config"]
        model = ModelConfig(**conf["model"])
        perceptual = PerceptualConfig(**conf["perceptual"])
        train = dict(conf["train"])
        train.update(overrides)
        return cls(model, perceptual, TrainConfig(**train)).load_checkpoint(ckpt)


def fit(dataset, cfg: TrainConfig, model: ModelConfig = ModelConfig(),
        perceptual: PerceptualConfig = PerceptualConfig(), resume: Checkpoint | None = None,
        log_path=None, checkpoint_dir=None) -> Checkpoint:
    trainer = Trainer(model, perceptual, cfg)
    if resume is not None:
        trainer.load_checkpoint(resume)
    return trainer.fit(dataset, log_path=log_path, checkpoint_dir=checkpoint_dir)


def load_generator(ckpt: Checkpoint, net: str = "g_b2s", dtype=torch.float32) -> torch.nn.Module:
    model = ModelConfig(**ckpt.meta["config"]["model"])
    g = build_generator(model.generator, 0, base_channels=model.base_channels, depth=model.unet_depth,
                        n_blocks=model.res_blocks, dtype=dtype, encoder_act=model.encoder_act)
    g.load_state_dict({k: torch.from_numpy(v) for k, v in ckpt.net_arrays(net).items()}, strict=True)
    g.eval()
    return g


def deblur_image(g: torch.nn.Module, img: np.ndarray) -> np.ndarray:
    """Run a generator on one image, reflect-padding to its size divisor and cropping back."""
    img = as_image(img)
    gray = img.shape[2] == 1
    if gray:
        img = np.repeat(img, 3, axis=2)
    h, w = img.shape[:2]
    div = g.divisor
    ph, pw = (-h) % div, (-w) % div
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect" if min(h, w) > 1 else "edge")
    dtype = next(g.parameters()).dtype
    x = normalize(torch.from_numpy(np.ascontiguousarray(padded.transpose(2, 0, 1)[None])).to(dtype))
    with torch.no_grad():
        y = g(x)
    out = denormalize(y[0].double().numpy().transpose(1, 2, 0))[:h, :w]
    out = np.clip(out, 0.0, 1.0)
    return out.mean(axis=2, keepdims=True) if gray else out
