"""Paired dataset construction, manifests, splits and batch iteration.

On-disk layout of a synthesized dataset::

    <root>/sharp/<stem>.png
    <root>/blur/<stem>.png
    <root>/kernels/<stem>.png   (heatmap) and <stem>.txt (flat grid)
    <root>/manifest.jsonl

The manifest is line-delimited JSON: one header line followed by one
line per pair.  Paths are stored relative to the manifest directory.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, List, Optional, Sequence

import numpy as np
import torch

from .blur import NoiseSpec, TrajectoryParams, item_seed, kernel_to_text, save_kernel_png, synth_pair
from .image import load_image, normalize, resize_bilinear, save_image

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")
SPLITS = ("train", "test")
NOISE_SEED_SALT = 0x9E3779B97F4A7C15


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class PairRecord:
    blur_path: str
    sharp_path: str
    split: str = "train"
    kernel_path: Optional[str] = None
    source_id: str = ""

    def __post_init__(self):
        if self.blur_path == self.sharp_path:
            raise DataError(f"blur and sharp paths coincide: {self.blur_path}")
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}")

    @property
    def stem(self) -> str:
        return os.path.splitext(os.path.basename(self.sharp_path))[0]


@dataclass
class Manifest:
    records: List[PairRecord]
    meta: dict = field(default_factory=dict)
    root: str = "."

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.blur_path in seen:
                raise DataError(f"duplicate blur path in manifest: {r.blur_path}")
            seen.add(r.blur_path)

    def counts(self) -> dict:
        return {s: sum(r.split == s for r in self.records) for s in SPLITS}

    def resolve(self, rel: str) -> str:
        return rel if os.path.isabs(rel) else os.path.join(self.root, rel)

    def subset(self, split: str) -> List[PairRecord]:
        return [r for r in self.records if r.split == split]

    def header(self) -> dict:
        return {"kind": "header", "counts": self.counts(), **self.meta}

    def lines(self) -> List[str]:
        out = [json.dumps(self.header(), sort_keys=True)]
        out += [json.dumps({"kind": "pair", **asdict(r)}, sort_keys=True) for r in self.records]
        return out

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.lines()).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.lines()) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        path = os.fspath(path)
        if not os.path.isfile(path):
            raise FileNotFoundError(f"manifest not found: {path}")
        header, records = None, []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
                kind = obj.pop("kind", None)
                if kind == "header":
                    header = obj
                elif kind == "pair":
                    records.append(PairRecord(**obj))
                else:
                    raise DataError(f"{path}:{lineno}: unknown line kind {kind!r}")
        if header is None:
            raise DataError(f"{path}: missing header line")
        counts = header.pop("counts", None)
        m = cls(records, header, root=os.path.dirname(os.path.abspath(path)))
        if counts is not None and counts != m.counts():
            raise DataError(f"{path}: header counts {counts} disagree with records {m.counts()}")
        return m


@dataclass(frozen=True)
class SynthConfig:
    kernel_size: int = 31
    image_size: int = 256
    noise_sigma: float = 0.0
    seed: int = 0
    trajectory: TrajectoryParams = TrajectoryParams()

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def list_images(directory) -> List[str]:
    directory = os.fspath(directory)
    if not os.path.isdir(directory):
        raise DataError(f"not a directory: {directory}")
    files = sorted(f for f in os.listdir(directory) if f.lower().endswith(IMAGE_EXTS))
    stems = {}
    for f in files:
        stem = os.path.splitext(f)[0]
        if stem in stems:
            raise DataError(f"name collision in {directory}: {stems[stem]} and {f}")
        stems[stem] = f
    return [os.path.join(directory, f) for f in files]


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def build_manifest(sharp_dir, out_root=None, blur_dir=None, synth_cfg: Optional[SynthConfig] = None) -> Manifest:
    """Pair ``sharp_dir`` images with ``blur_dir`` by stem, or synthesize blur.

    In synthesis mode ``out_root`` receives the resized sharp images,
    blurred images, kernel dumps and ``manifest.jsonl``.
    """
    sharp_files = list_images(sharp_dir)
    if not sharp_files:
        raise DataError(f"no images found in {sharp_dir}")

    if blur_dir is not None:
        blur_by_stem = {_stem(p): p for p in list_images(blur_dir)}
        missing = [_stem(p) for p in sharp_files if _stem(p) not in blur_by_stem]
        if missing:
            raise DataError(f"no blurred partner for: {', '.join(missing)}")
        root = os.path.abspath(out_root or os.path.commonpath([os.path.abspath(sharp_dir), os.path.abspath(blur_dir)]))
        records = [PairRecord(os.path.relpath(os.path.abspath(blur_by_stem[_stem(p)]), root),
                              os.path.relpath(os.path.abspath(p), root), source_id=_stem(p))
                   for p in sharp_files]
        return Manifest(records, {"mode": "paired"}, root=root)

    if synth_cfg is None or out_root is None:
        raise DataError("synthesis mode needs both synth_cfg and out_root")
    root = os.path.abspath(out_root)
    for sub in ("sharp", "blur", "kernels"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    cfg = synth_cfg
    records = []
    for index, src in enumerate(sharp_files):
        stem = _stem(src)
        seed = item_seed(cfg.seed, index)
        tp = replace(cfg.trajectory, seed=seed)
        noise = NoiseSpec(cfg.noise_sigma, item_seed(cfg.seed ^ NOISE_SEED_SALT, index))
        blur, sharp, kernel = synth_pair(load_image(src), tp, cfg.kernel_size, noise)
        size = cfg.image_size
        blur = resize_bilinear(blur, size, size)
        sharp = resize_bilinear(sharp, size, size)
        rel = {k: os.path.join(k, f"{stem}.png") for k in ("sharp", "blur", "kernels")}
        save_image(sharp, os.path.join(root, rel["sharp"]))
        save_image(blur, os.path.join(root, rel["blur"]))
        save_kernel_png(kernel, os.path.join(root, rel["kernels"]))
        with open(os.path.join(root, "kernels", f"{stem}.txt"), "w") as fh:
            fh.write(kernel_to_text(kernel))
        records.append(PairRecord(rel["blur"], rel["sharp"], kernel_path=rel["kernels"], source_id=stem))
    meta = {"mode": "synth", "image_size": cfg.image_size, "synth_config_hash": cfg.digest()}
    m = Manifest(records, meta, root=root)
    m.save(os.path.join(root, "manifest.jsonl"))
    return m


def split_manifest(m: Manifest, n_train: int, n_test: int, seed: int) -> Manifest:
    n = len(m.records)
    if n_train < 0 or n_test < 0 or n_train + n_test > n:
        raise DataError(f"cannot split {n} records into {n_train} train + {n_test} test")
    perm = np.random.default_rng(seed).permutation(n)
    assign = {int(i): "train" for i in perm[:n_train]}
    assign.update({int(i): "test" for i in perm[n_train:n_train + n_test]})
    records = [replace(r, split=assign[i]) for i, r in enumerate(m.records) if i in assign]
    meta = dict(m.meta, split_seed=seed)
    return Manifest(records, meta, root=m.root)


def epoch_order(n: int, epoch_seed) -> np.ndarray:
    return np.random.default_rng(epoch_seed).permutation(n)


def epoch_seed(seed: int, epoch: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(epoch)])


def to_batch_tensor(images: Sequence[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    arr = np.stack([np.asarray(im, dtype=np.float64) for im in images]).transpose(0, 3, 1, 2)
    return normalize(torch.from_numpy(np.ascontiguousarray(arr)).to(dtype))


class ArrayPairs:
    """In-memory paired images (lists of HxWx3 arrays in ``[0, 1]``)."""

    def __init__(self, blur: Sequence[np.ndarray], sharp: Sequence[np.ndarray], names: Sequence[str] | None = None):
        if len(blur) != len(sharp):
            raise DataError("blur and sharp lists differ in length")
        self.blur = list(blur)
        self.sharp = list(sharp)
        self.names = list(names) if names is not None else [f"{i:05d}" for i in range(len(blur))]

    def __len__(self):
        return len(self.blur)

    def batch(self, indices, dtype=torch.float32):
        idx = [int(i) for i in indices]
        return (to_batch_tensor([self.blur[i] for i in idx], dtype),
                to_batch_tensor([self.sharp[i] for i in idx], dtype))


class ManifestPairs:
    """Pairs of one manifest split, loaded from disk on demand."""

    def __init__(self, m: Manifest, split: str = "train", size: int | None = None):
        self.manifest = m
        self.records = m.subset(split)
        if not self.records:
            raise DataError(f"split {split!r} is empty")
        self.size = size
        self.names = [r.stem for r in self.records]

    def __len__(self):
        return len(self.records)

    def _load(self, rec: PairRecord, path: str) -> np.ndarray:
        try:
            img = load_image(self.manifest.resolve(path))
        except (OSError, ValueError) as exc:
            raise DataError(f"record {rec.source_id or rec.stem}: {exc}") from exc
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        if self.size is not None:
            img = resize_bilinear(img, self.size, self.size)
        return img

    def batch(self, indices, dtype=torch.float32):
        recs = [self.records[int(i)] for i in indices]
        return (to_batch_tensor([self._load(r, r.blur_path) for r in recs], dtype),
                to_batch_tensor([self._load(r, r.sharp_path) for r in recs], dtype))


@dataclass
class Batch:
    blur: torch.Tensor
    sharp: torch.Tensor
    names: List[str]


def iterate_batches(m: Manifest, split: str, batch_size: int, epoch_seed, size: int | None = None,
                    dtype=torch.float32) -> Iterator[Batch]:
    """Seeded shuffle of one split; the final partial batch is dropped."""
    source = ManifestPairs(m, split, size)
    order = epoch_order(len(source), epoch_seed)
    for start in range(0, len(order) - batch_size + 1, batch_size):
        idx = order[start:start + batch_size]
        blur, sharp = source.batch(idx, dtype)
        yield Batch(blur, sharp, [source.names[i] for i in idx])


def make_toy_images(n: int, size: int = 64, seed: int = 0) -> List[np.ndarray]:
    """Procedural piecewise-smooth RGB scenes (gradients, boxes, discs, stripes)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    images = []
    for _ in range(n):
        c0, c1 = rng.uniform(0.1, 0.9, size=(2, 3))
        theta = rng.uniform(0, 2 * np.pi)
        t = (np.cos(theta) * xx + np.sin(theta) * yy)
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        img = c0[None, None] * (1 - t[..., None]) + c1[None, None] * t[..., None]
        for _ in range(rng.integers(4, 8)):
            color = rng.uniform(0.0, 1.0, size=3)
            kind = rng.integers(0, 3)
            cx, cy = rng.uniform(0.1, 0.9, size=2)
            if kind == 0:
                hw, hh = rng.uniform(0.05, 0.25, size=2)
                mask = (abs(xx - cx) < hw) & (abs(yy - cy) < hh)
            elif kind == 1:
                r = rng.uniform(0.05, 0.2)
                mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r ** 2
            else:
                period = rng.uniform(0.08, 0.2)
                phi = rng.uniform(0, 2 * np.pi)
                band = np.sin(2 * np.pi * (np.cos(phi) * xx + np.sin(phi) * yy) / period) > 0
                mask = band & (abs(xx - cx) < 0.2) & (abs(yy - cy) < 0.2)
            img[mask] = color
        images.append(np.clip(img, 0.0, 1.0))
    return images


def make_toy_pairs(n: int, size: int = 64, seed: int = 0, kernel_size: int = 11,
                   noise_sigma: float = 0.0, trajectory: TrajectoryParams = TrajectoryParams()) -> ArrayPairs:
    """Synthetic blurred/sharp pairs for smoke tests and toy training."""
    sharp = make_toy_images(n, size, seed)
    blur = []
    for i, s in enumerate(sharp):
        tp = replace(trajectory, seed=item_seed(seed, i))
        noise = NoiseSpec(noise_sigma, item_seed(seed ^ NOISE_SEED_SALT, i))
        blur.append(synth_pair(s, tp, kernel_size, noise)[0])
    return ArrayPairs(blur, sharp)
