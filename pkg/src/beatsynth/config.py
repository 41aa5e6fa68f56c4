"""Run configuration: nested dataclasses loaded from JSON with unknown keys rejected."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .io import config_hash, read_json


@dataclass(frozen=True)
class RecordSpec:
    dat: str
    ann: str
    id: str = ""


@dataclass(frozen=True)
class DataConfig:
    records: tuple[RecordSpec, ...] = ()
    fs: int = 360
    gain: float = 200.0
    labels: tuple[str, ...] = ("N", "L")
    split: tuple[float, float] = (0.7, 0.3)


@dataclass(frozen=True)
class SegmentConfig:
    length: int = 64
    cutoff: float = 0.75


@dataclass(frozen=True)
class EmbedConfig:
    bins: int = 8


@dataclass(frozen=True)
class DdpmRunConfig:
    cases: tuple[str, ...] = ("00", "01", "02")
    T: int = 100
    steps: int = 2000
    hidden: int = 32
    emb_dim: int = 32
    batch_size: int = 16
    lr: float = 2e-3


@dataclass(frozen=True)
class WganRunConfig:
    steps: int = 2000
    batch_size: int = 16
    n_critic: int = 5
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    lambda_gp: float = 10.0
    latent_dim: int = 100
    generator_widths: tuple[int, ...] = (256, 128, 64, 32)
    critic_widths: tuple[int, ...] = (32, 64, 128, 256)


@dataclass(frozen=True)
class HarnessRunConfig:
    train_per_class: int = 7000
    minority: int = 350
    test_per_class: int = 1000
    scale: float = 1.0
    threshold: float = 0.5
    classifier_widths: tuple[int, ...] = (8, 16, 16)
    epochs: int = 8
    batch_size: int = 32
    lr: float = 2e-3


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = DataConfig()
    segment: SegmentConfig = SegmentConfig()
    embed: EmbedConfig = EmbedConfig()
    ddpm: DdpmRunConfig = DdpmRunConfig()
    wgan: WganRunConfig = WganRunConfig()
    harness: HarnessRunConfig = HarnessRunConfig()
    plots: bool = True

    def __post_init__(self):
        validate(self)

    @property
    def hash(self) -> str:
        return config_hash(self)


def validate(cfg: RunConfig) -> None:
    s, d, w, h = cfg.segment, cfg.data, cfg.wgan, cfg.harness
    checks = [
        (s.length >= 2, "segment.length must be >= 2"),
        (0.0 < s.cutoff < 1.0, "segment.cutoff must lie in (0, 1)"),
        (2 <= cfg.embed.bins <= s.length, "embed.bins must satisfy 2 <= bins <= segment.length"),
        (set(cfg.ddpm.cases) <= {"00", "01", "02"}, f"unknown ddpm case in {list(cfg.ddpm.cases)}"),
        (cfg.ddpm.T >= 1 and cfg.ddpm.steps >= 0, "ddpm.T must be >= 1 and ddpm.steps >= 0"),
        (w.steps >= 0 and w.n_critic >= 1, "wgan.steps must be >= 0 and wgan.n_critic >= 1"),
        (w.lambda_gp >= 0, "wgan.lambda_gp must be >= 0"),
        (len(w.generator_widths) >= 1 and len(w.critic_widths) >= 1, "wgan widths must be non-empty"),
        (s.length % 2 ** len(w.critic_widths) == 0,
         f"segment.length must be a multiple of {2 ** len(w.critic_widths)} for the critic"),
        (s.length % 2 ** len(h.classifier_widths) == 0,
         f"segment.length must be a multiple of {2 ** len(h.classifier_widths)} for the classifier"),
        (len(d.split) == 2 and min(d.split) > 0 and sum(d.split) <= 1.0, "data.split must be two positive fractions"),
        (0 < h.minority <= h.train_per_class, "harness.minority must lie in (0, train_per_class]"),
        (h.scale > 0, "harness.scale must be positive"),
        (set(d.labels) == {"N", "L"}, "data.labels must be N and L"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)


def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        args = typing.get_args(tp)
        item_tp = args[0]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(item_tp, v, f"{where}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} items, got {len(value)}")
        return tuple(_convert(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported field type {tp}")  # pragma: no cover


def from_dict(cls, data, where: str = "config"):
    """Build ``cls`` from a mapping, rejecting unknown keys and ill-typed values."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path) -> RunConfig:
    return from_dict(RunConfig, read_json(path))


def resolve(path: str, base: Path) -> Path:
    """Input paths in a config are relative to the config file's directory."""
    p = Path(path)
    return p if p.is_absolute() else base / p
