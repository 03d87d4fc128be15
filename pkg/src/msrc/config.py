"""Experiment configuration: an INI-style text file with one section per stage.

Every key has a default; only ``data.train_path`` must be given.  Keys can
be overridden with dotted paths such as ``window.sw=256``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

from .wavelet import SUPPORTED_FILTERS, max_level


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    train_path: str = ""
    test_path: str = ""
    schema: str = "nsl-kdd"
    columns: str = ""  # custom "name:kind, ..." list; overrides the preset when set
    normal_label: str = "normal"
    max_train: int = 8000
    max_test: int = 4000
    anonymize: bool = False
    anonymize_seed: int = 0


@dataclass
class WindowConfig:
    sw: int = 800
    stride: int = 0  # 0 means non-overlapping (stride = sw)
    k: int = 6
    filter: str = "db3"


@dataclass
class SAEConfig:
    dims: tuple = ()  # empty: derive from the input width with 150:110:90:64 ratios
    pretrain_epochs: int = 50
    finetune_epochs: int = 50
    lr: float = 0.01
    batch_size: int = 64
    momentum: float = 0.0
    finetune_loss: str = "mse"


@dataclass
class ResidualSection:
    n_blocks: int = 3
    channels: int = 8
    kernel_width: int = 3
    group_width: int = 32
    threshold: float = 0.5
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 64
    momentum: float = 0.9


@dataclass
class RunConfig:
    seed: int = 0
    folds: int = 10
    out_dir: str = "results"


@dataclass
class SweepGrid:
    sw: tuple = (64, 256, 800)
    k: tuple = (2, 4, 6)
    repeats: int = 1

    def cells(self):
        """``(sw, k, valid)`` for every grid cell, row-major over ``sw``."""
        return [(s, k, k <= max_level(s)) for s in self.sw for k in self.k]


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    sae: SAEConfig = field(default_factory=SAEConfig)
    residual: ResidualSection = field(default_factory=ResidualSection)
    run: RunConfig = field(default_factory=RunConfig)
    sweep: SweepGrid = field(default_factory=SweepGrid)

    @property
    def stride(self) -> int:
        return self.window.stride or self.window.sw

    def replace(self, **sections) -> "ExperimentConfig":
        return dataclasses.replace(self, **sections)


SECTIONS = [f.name for f in dataclasses.fields(ExperimentConfig)]


def _coerce(section: str, key: str, raw: str, default):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
        return text
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply(config: ExperimentConfig, values: dict[str, str]) -> ExperimentConfig:
    """Return a copy of ``config`` with dotted-key string values applied."""
    sections = {name: dataclasses.replace(getattr(config, name)) for name in SECTIONS}
    for dotted, raw in values.items():
        section, _, key = dotted.partition(".")
        if section not in sections:
            raise ConfigError(f"unknown config section {section!r} (in key {dotted!r})")
        obj = sections[section]
        names = {f.name for f in dataclasses.fields(obj)}
        if key not in names:
            raise ConfigError(f"unknown config key {dotted!r}")
        setattr(obj, key, _coerce(section, key, raw, getattr(obj, key)))
    return ExperimentConfig(**sections)


def validate(config: ExperimentConfig, require_data: bool = True) -> ExperimentConfig:
    d, w, s, r = config.data, config.window, config.sae, config.residual
    if require_data and not d.train_path:
        raise ConfigError("missing dataset path: set data.train_path")
    if w.filter.lower() not in SUPPORTED_FILTERS:
        raise ConfigError(f"window.filter {w.filter!r} unsupported; choose one of {SUPPORTED_FILTERS}")
    if w.sw < 2:
        raise ConfigError(f"window.sw must be >= 2, got {w.sw}")
    if not 1 <= w.k <= max_level(w.sw):
        raise ConfigError(f"constraint k <= floor(log2(sw)) violated: k={w.k}, floor(log2({w.sw}))={max_level(w.sw)}")
    if w.stride < 0:
        raise ConfigError(f"window.stride must be >= 0, got {w.stride}")
    for name, cap in (("data.max_train", d.max_train), ("data.max_test", d.max_test)):
        if cap and cap < w.sw:
            raise ConfigError(f"constraint subset cap >= sw violated: {name}={cap} < window.sw={w.sw}")
    for name, rate in (("sae.lr", s.lr), ("residual.lr", r.lr)):
        if not rate > 0:
            raise ConfigError(f"constraint rate > 0 violated: {name}={rate}")
    if s.finetune_loss not in ("mse", "bce"):
        raise ConfigError(f"sae.finetune_loss must be 'mse' or 'bce', got {s.finetune_loss!r}")
    if r.n_blocks < 1 or r.channels < 1 or r.group_width < 1:
        raise ConfigError("residual.n_blocks, residual.channels and residual.group_width must be >= 1")
    if r.kernel_width % 2 != 1:
        raise ConfigError(f"residual.kernel_width must be odd, got {r.kernel_width}")
    if not 0 < r.threshold < 1:
        raise ConfigError(f"residual.threshold must lie in (0, 1), got {r.threshold}")
    if config.run.folds < 2:
        raise ConfigError(f"run.folds must be >= 2, got {config.run.folds}")
    if s.dims and len(s.dims) < 2:
        raise ConfigError("sae.dims needs at least two widths")
    return config


def parse_text(text: str, overrides: dict[str, str] | None = None, require_data: bool = True) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        for key, raw in parser.items(section):
            values[f"{section}.{key}"] = raw
    values.update(overrides or {})
    return validate(apply(ExperimentConfig(), values), require_data)


def parse_config(path, overrides: dict[str, str] | None = None, require_data: bool = True) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_text(path.read_text(encoding="utf-8"), overrides, require_data)


def serialize(config: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    for name in SECTIONS:
        section = getattr(config, name)
        parser[name] = {f.name: _format(getattr(section, f.name)) for f in dataclasses.fields(section)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(serialize(config).encode()).hexdigest()
