"""Command-line entry point: ``cycledeblur synth|train|deblur|eval|bench``.

Exit codes: 0 success, 1 usage or data error, 2 numerical divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

import numpy as np

from .blur import KernelError
from .checkpoint import ContainerError
from .config import ConfigError, RunConfig, describe_defaults, load_config, parse_override
from .data import DataError, Manifest, ManifestPairs, build_manifest, list_images, split_manifest
from .image import ImageError, as_image, load_image, resize_bilinear, save_image
from .losses import DivergenceError
from .metrics import MetricReport, compute_metrics
from .networks import ShapeError
from .trainer import Checkpoint, Trainer, deblur_image, load_generator

log = logging.getLogger("cycledeblur")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2
KIND_LABELS = {"unet": "U-net", "resblock": "ResBlock"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for divergence here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# configuration ---------------------------------------------------------

def effective_config(args) -> RunConfig:
    layers = [parse_override(s) for s in args.set or []]
    flag_layer: Dict[str, dict] = {}

    def put(section, key, value):
        if value is not None:
            flag_layer.setdefault(section, {})[key] = value

    put("synth", "seed", args.seed)
    put("train", "seed", args.seed)
    put("synth", "kernel_size", getattr(args, "kernel_size", None))
    put("image", "size", getattr(args, "size", None))
    put("train", "epochs", getattr(args, "epochs", None))
    put("train", "max_steps", getattr(args, "max_steps", None))
    put("model", "generator", getattr(args, "generator", None))
    epochs = getattr(args, "epochs", None)
    if epochs is not None:
        # keep decay_start <= epochs when only the epoch count is given
        cfg0 = load_config(args.config, layers)
        if cfg0.train.decay_start > epochs:
            put("train", "decay_start", epochs)
    layers.append(flag_layer)
    cfg = load_config(args.config, layers)
    if not args.quiet:
        sys.stderr.write("# effective config\n" + cfg.dump())
    return cfg


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _images_by_stem(directory: str) -> Dict[str, str]:
    return {_stem(p): p for p in list_images(directory)}


def _load_manifest(path: str) -> Manifest:
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.jsonl")
    if not os.path.exists(path):
        raise UsageError(f"manifest not found: {path}")
    return Manifest.load(path)


# commands --------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = effective_config(args)
    synth = cfg.synth_config()
    if args.blur:
        m = build_manifest(args.sharp, args.out, blur_dir=args.blur)
    else:
        m = build_manifest(args.sharp, args.out, synth_cfg=synth)
    if args.n_train is not None or args.n_test is not None:
        n = len(m.records)
        n_test = args.n_test or 0
        n_train = args.n_train if args.n_train is not None else n - n_test
        m = split_manifest(m, n_train, n_test, cfg.synth.seed)
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, "manifest.jsonl")
    m.save(out)
    counts = m.counts()
    print(f"pairs {len(m.records)}  train {counts.get('train', 0)}  test {counts.get('test', 0)}")
    print(f"manifest {out}  sha256 {m.digest()}")
    return EXIT_OK


def _make_trainer(cfg: RunConfig) -> Trainer:
    return Trainer(cfg.model, cfg.perceptual, cfg.train_config())


def _train_one(cfg: RunConfig, manifest: Manifest, out_dir: str, resume: Optional[str] = None) -> Checkpoint:
    dataset = ManifestPairs(manifest, "train", cfg.image.size)
    trainer = _make_trainer(cfg)
    if resume:
        ckpt = Checkpoint.load(resume)
        if ckpt.meta.get("extractor_fingerprint") != trainer.fe.fingerprint():
            raise UsageError(f"{resume}: perceptual extractor differs from the current configuration")
        trainer.load_checkpoint(ckpt)
        log.info("resumed from %s at generator step %d", resume, trainer.g_step)
    os.makedirs(out_dir, exist_ok=True)
    return trainer.fit(dataset, log_path=os.path.join(out_dir, "loss_log.jsonl"), checkpoint_dir=out_dir)


def cmd_train(args) -> int:
    cfg = effective_config(args)
    manifest = _load_manifest(args.manifest)
    ckpt = _train_one(cfg, manifest, args.out, args.resume)
    print(f"generator steps {ckpt.meta['g_step']}  checkpoint {os.path.join(args.out, 'final.ckpt')}")
    return EXIT_OK


def _inputs(path: str) -> List[str]:
    if os.path.isdir(path):
        files = list_images(path)
        if not files:
            raise UsageError(f"no images found in {path}")
        return files
    if not os.path.exists(path):
        raise UsageError(f"input not found: {path}")
    return [path]


def cmd_deblur(args) -> int:
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    g = load_generator(Checkpoint.load(args.checkpoint))
    files = _inputs(args.input)
    os.makedirs(args.out, exist_ok=True)
    for path in files:
        out = os.path.join(args.out, _stem(path) + ".png")
        save_image(deblur_image(g, load_image(path)), out)
    print(f"deblurred {len(files)} image(s) into {args.out}")
    return EXIT_OK


def _side_by_side(images, gap: int = 4) -> np.ndarray:
    images = [as_image(im) for im in images]
    images = [np.repeat(im, 3, axis=2) if im.shape[2] == 1 else im for im in images]
    h = max(im.shape[0] for im in images)
    cols = []
    for i, im in enumerate(images):
        if i:
            cols.append(np.ones((h, gap, 3)))
        pad = np.ones((h, im.shape[1], 3))
        pad[:im.shape[0]] = im
        cols.append(pad)
    return np.concatenate(cols, axis=1)


def _pair_up(results: Dict[str, str], truth: Dict[str, str]):
    missing_truth = sorted(set(results) - set(truth))
    missing_result = sorted(set(truth) - set(results))
    if missing_truth or missing_result:
        msg = []
        if missing_truth:
            msg.append("no ground truth for: " + ", ".join(missing_truth))
        if missing_result:
            msg.append("no result for: " + ", ".join(missing_result))
        raise UsageError("pair mismatch; " + "; ".join(msg))
    return [(s, truth[s], results[s]) for s in sorted(results)]


def _score(triples, cfg: RunConfig) -> MetricReport:
    report = MetricReport(list(cfg.eval.metrics))
    for name, ref_path, test_path in triples:
        ref, test = load_image(ref_path), load_image(test_path)
        if ref.shape != test.shape:
            raise UsageError(f"{name}: size mismatch {ref.shape} vs {test.shape}")
        report.rows.append({"name": name, **compute_metrics(ref, test, cfg.eval.metrics, cfg.eval.ms_ssim_scales)})
    return report


def cmd_eval(args) -> int:
    cfg = effective_config(args)
    if args.manifest:
        m = _load_manifest(args.manifest)
        recs = m.subset(args.split)
        if not recs:
            raise UsageError(f"manifest split {args.split!r} is empty")
        truth = {r.stem: m.resolve(r.sharp_path) for r in recs}
        inputs = {r.stem: m.resolve(r.blur_path) for r in recs}
        results = _images_by_stem(args.results) if args.results else inputs
    else:
        if not (args.results and args.truth):
            raise UsageError("eval needs --results and --truth, or --manifest")
        truth = _images_by_stem(args.truth)
        results = _images_by_stem(args.results)
        inputs = _images_by_stem(args.inputs) if args.inputs else {}
    triples = _pair_up(results, truth)
    report = _score(triples, cfg)
    text = report.to_csv()
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text + "\n")
    sys.stdout.write(report.to_table(args.title))
    if args.grid:
        os.makedirs(args.grid, exist_ok=True)
        for name, ref_path, test_path in triples:
            panels = [load_image(p) for p in (inputs.get(name), test_path, ref_path) if p]
            save_image(_side_by_side(panels), os.path.join(args.grid, f"{name}.png"))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = effective_config(args)
    manifest = _load_manifest(args.manifest)
    split = "test" if manifest.subset("test") else "train"
    recs = manifest.subset(split)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    dists = [d.strip() for d in args.dists.split(",") if d.strip()]
    metrics, scales = cfg.eval.metrics, cfg.eval.ms_ssim_scales
    pairs = [(_fit_size(load_image(manifest.resolve(r.sharp_path)), cfg.image.size),
              _fit_size(load_image(manifest.resolve(r.blur_path)), cfg.image.size)) for r in recs]
    baseline = [compute_metrics(sharp, blur, metrics, scales) for sharp, blur in pairs]
    report = MetricReport(list(metrics))
    for kind in kinds:
        for dist in dists:
            run = replace(cfg, model=replace(cfg.model, generator=kind), loss=replace(cfg.loss, cycle_dist=dist))
            tag = f"{kind}_{dist}"
            log.info("bench: training %s", tag)
            g = load_generator(_train_one(run, manifest, os.path.join(args.out, tag)))
            scores = [compute_metrics(sharp, deblur_image(g, blur), metrics, scales) for sharp, blur in pairs]
            row = {m: float(np.mean([s[m] for s in scores])) for m in metrics}
            report.rows.append({"name": f"{KIND_LABELS.get(kind, kind)}+{dist}", **row})
    if "PSNR" in report.metrics:
        report.rows.sort(key=lambda r: -r["PSNR"])
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "bench.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv(mean_row=False))
    sys.stdout.write(report.to_table("Method", mean_row=False))
    if baseline:
        base = "  ".join(f"{m} {np.mean([b[m] for b in baseline]):.4f}" for m in metrics)
        sys.stdout.write(f"blurred input ({split} split): {base}\n")
    return EXIT_OK


def _fit_size(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[0] == size and img.shape[1] == size:
        return img
    return resize_bilinear(img, size, size)


# parser ----------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file, or the name of a bundled one (toy)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, help="seed for synthesis and training")
    p.add_argument("--quiet", action="store_true", help="do not echo the effective config")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cycledeblur", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter,
                     epilog="config keys and defaults:\n" + describe_defaults()
                            + "\n\nenvironment: CYCLEDEBLUR_<SECTION>_<KEY>, e.g. CYCLEDEBLUR_TRAIN_LR0=1e-3")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="build a blurred/sharp dataset and manifest")
    _common(p)
    p.add_argument("--sharp", required=True, help="directory of sharp images")
    p.add_argument("--out", required=True, help="output dataset root")
    p.add_argument("--blur", help="pair with existing blurred images instead of synthesizing")
    p.add_argument("--kernel-size", type=int)
    p.add_argument("--size", type=int, help="output image side")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train both generator/discriminator pairs")
    _common(p)
    p.add_argument("--manifest", required=True, help="manifest.jsonl or dataset root")
    p.add_argument("--out", required=True, help="directory for checkpoints and the loss log")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--generator", choices=("unet", "resblock"))
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("deblur", help="apply the blur-to-sharp generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="accepted for uniformity; inference is deterministic")
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("eval", help="score results against ground truth")
    _common(p)
    p.add_argument("--results", help="directory of restored images")
    p.add_argument("--truth", help="directory of ground-truth images")
    p.add_argument("--inputs", help="directory of blurred inputs (grid only)")
    p.add_argument("--manifest", help="take ground truth (and default results: the blurred inputs) from a manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--csv", help="write the CSV here instead of stdout")
    p.add_argument("--grid", help="directory for side-by-side comparison images")
    p.add_argument("--title", default="Methods")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="train and compare generator kind x cycle distance")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kinds", default="unet,resblock")
    p.add_argument("--dists", default="L2,L1")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        sys.stderr.write(f"error: training diverged: {exc}\n")
        return EXIT_DIVERGED
    except (UsageError, ConfigError, DataError, ImageError, ContainerError, KernelError, ShapeError,
            FileNotFoundError, OSError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
