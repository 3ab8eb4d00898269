"""Run configuration: one dataclass per section, composed from layers.

Precedence, lowest first: built-in defaults, a YAML file, environment
variables ``CYCLEDEBLUR_<SECTION>_<KEY>`` (e.g. ``CYCLEDEBLUR_TRAIN_LR0``),
then explicit ``section.key=value`` overrides.  Unknown sections or keys
are rejected at every layer.
"""
from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional

import yaml

from .blur import TrajectoryParams
from .data import SynthConfig
from .losses import LossConfig
from .metrics import METRIC_NAMES
from .trainer import ModelConfig, PerceptualConfig, TrainConfig

ENV_PREFIX = "CYCLEDEBLUR_"
BUILTIN_DIR = os.path.join(os.path.dirname(__file__), "configs")


class ConfigError(ValueError):
    pass


@dataclass
class ImageSection:
    size: int = 256


@dataclass
class SynthSection:
    kernel_size: int = 31
    noise_sigma: float = 0.0
    seed: int = 0
    num_steps: int = 2000
    exposure_fraction: float = 1.0
    impulse_prob: float = 0.005
    anxiety: float = 0.005
    max_extent: Optional[float] = None
    initial_speed: float = 1.0


@dataclass
class TrainSection:
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
    max_steps: Optional[int] = None
    dtype: str = "float32"


@dataclass
class EvalSection:
    metrics: List[str] = field(default_factory=lambda: list(METRIC_NAMES))
    ms_ssim_scales: int = 5


SECTIONS = {
    "image": ImageSection,
    "synth": SynthSection,
    "model": ModelConfig,
    "perceptual": PerceptualConfig,
    "loss": LossConfig,
    "train": TrainSection,
    "eval": EvalSection,
}


@dataclass
class RunConfig:
    image: ImageSection = field(default_factory=ImageSection)
    synth: SynthSection = field(default_factory=SynthSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    perceptual: PerceptualConfig = field(default_factory=PerceptualConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**asdict(self.train), loss=LossConfig(**asdict(self.loss)))

    def synth_config(self) -> SynthConfig:
        s = asdict(self.synth)
        traj = TrajectoryParams(**{k: s[k] for k in ("num_steps", "exposure_fraction", "impulse_prob",
                                                     "anxiety", "max_extent", "initial_speed")})
        return SynthConfig(kernel_size=s["kernel_size"], image_size=self.image.size,
                           noise_sigma=s["noise_sigma"], seed=s["seed"], trajectory=traj)


def _field_types(cls) -> Dict[str, object]:
    return typing.get_type_hints(cls)


def _coerce(value, tp, where: str):
    """Convert ``value`` (possibly a raw string) to the annotated type."""
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if value is None or (isinstance(value, str) and value.lower() in ("null", "none", "")):
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if origin in (list, List):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()] if "[" not in value else yaml.safe_load(value)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return [_coerce(v, args[0], where) for v in value] if args else list(value)
    try:
        if tp is bool:
            if isinstance(value, str):
                low = value.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return low in ("true", "1", "yes")
            return bool(value)
        if tp is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if tp is float:
            return float(value)
        if tp is str:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot interpret {value!r} as {getattr(tp, '__name__', tp)}") from None
    return value


def _merge(base: dict, layer: Mapping, origin: str) -> None:
    for section, values in layer.items():
        if section not in SECTIONS:
            raise ConfigError(f"{origin}: unknown section {section!r} (known: {', '.join(SECTIONS)})")
        if values is None:
            continue
        if not isinstance(values, Mapping):
            raise ConfigError(f"{origin}: section {section!r} must be a mapping")
        types = _field_types(SECTIONS[section])
        for key, value in values.items():
            if key not in types:
                raise ConfigError(f"{origin}: unknown key {section}.{key}")
            base[section][key] = _coerce(value, types[key], f"{origin}: {section}.{key}")


def parse_override(text: str) -> dict:
    """``"train.lr0=1e-3"`` -> ``{"train": {"lr0": "1e-3"}}``."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    key, value = text.split("=", 1)
    if "." not in key:
        raise ConfigError(f"override key {key!r} needs a section, e.g. train.{key}")
    section, name = key.strip().split(".", 1)
    return {section: {name: value.strip()}}


def env_overrides(environ: Mapping[str, str]) -> dict:
    out: Dict[str, dict] = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section not in SECTIONS or not key:
            raise ConfigError(f"environment variable {name} does not name a section and key")
        out.setdefault(section, {})[key] = value
    return out


def resolve_config_path(path: str) -> str:
    """Accept a file path or the name of a bundled config (e.g. ``toy``)."""
    if os.path.exists(path):
        return path
    builtin = os.path.join(BUILTIN_DIR, f"{path}.yaml")
    if os.path.exists(builtin):
        return builtin
    raise ConfigError(f"config file not found: {path}")


def load_config(path: Optional[str] = None, overrides: Optional[List[dict]] = None,
                environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    base = RunConfig().to_dict()
    if path:
        path = resolve_config_path(path)
        with open(path, encoding="utf-8") as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping of sections")
        _merge(base, data, path)
    _merge(base, env_overrides(os.environ if environ is None else environ), "environment")
    for layer in overrides or []:
        _merge(base, layer, "command line")
    try:
        cfg = RunConfig(**{name: SECTIONS[name](**base[name]) for name in SECTIONS})
        # construct derived objects once so their validation runs now
        cfg.train_config()
        cfg.synth_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return cfg


def describe_defaults() -> str:
    """One line per dotted key with its default, for ``--help``."""
    lines = []
    for name, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            lines.append(f"  {name}.{f.name} = {default!r}")
    return "\n".join(lines)
