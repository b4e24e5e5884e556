"""Run configuration: one YAML tree, flag overrides, resolved-config echo.

Every field has a default; a config file only states what it changes.
Seed precedence is --seed flag > CFREE_SEED env var > file > 0. Every
command writes the fully resolved tree next to its outputs so a rerun
from that file reproduces the outputs byte for byte.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .encoders import ConfigError, EncoderConfig
from .heads import ProbeConfig
from .objective import PredictorConfig, ScheduleConfig
from .views import ViewConfig

__all__ = ["RunConfig", "DataConfig", "AblateConfig", "WlbenchConfig",
           "BenchConfig", "FitConfig", "load_config", "resolve_config",
           "dump_config", "config_to_dict", "SEED_ENV_VAR"]

SEED_ENV_VAR = "CFREE_SEED"


@dataclass(frozen=True)
class DataConfig:
    train: str = ""                      # dataset path (.jsonl or .sdf)
    split_train: str = ""                # newline-delimited molecule ids
    split_val: str = ""
    split_test: str = ""
    tasks: tuple[str, ...] = ()          # empty: infer from labels seen


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 60
    lr: float = 1e-3
    batch_size: int = 32
    label_fraction: int = 100            # percent of train ids kept

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("fit epochs/batch_size must be >= 1 and lr > 0")
        if not 1 <= self.label_fraction <= 100:
            raise ConfigError(f"label_fraction must be in [1, 100], "
                              f"got {self.label_fraction}")


@dataclass(frozen=True)
class AblateConfig:
    grid: str = "predictor"              # "modality" or "predictor"
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.grid not in ("modality", "predictor"):
            raise ConfigError(f"ablate grid must be 'modality' or 'predictor', "
                              f"got {self.grid!r}")
        if not self.seeds:
            raise ConfigError("ablate needs at least one seed")


@dataclass(frozen=True)
class WlbenchConfig:
    pairs: int = 100
    size_min: int = 6
    size_max: int = 16
    seeds: tuple[int, ...] = (0, 1, 2)
    ks: tuple[int, ...] = (1, 2, 3)
    epochs: int = 25

    def __post_init__(self):
        if self.pairs < 1 or self.epochs < 1 or not self.seeds or not self.ks:
            raise ConfigError("wlbench needs pairs/epochs >= 1 and non-empty seeds/ks")


@dataclass(frozen=True)
class BenchConfig:
    sizes: tuple[int, ...] = (1000, 2000, 4000)
    avg_degree: float = 2.1
    trials: int = 100
    k: int = 3

    def __post_init__(self):
        if not self.sizes or self.trials < 1 or self.k < 1:
            raise ConfigError("bench needs sizes, trials >= 1, k >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "runs/out"
    threads: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    views: ViewConfig = field(default_factory=ViewConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    wlbench: WlbenchConfig = field(default_factory=WlbenchConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)


_SECTIONS = {
    "data": DataConfig,
    "encoder": EncoderConfig,
    "predictor": PredictorConfig,
    "schedule": ScheduleConfig,
    "views": ViewConfig,
    "probe": ProbeConfig,
    "fit": FitConfig,
    "ablate": AblateConfig,
    "wlbench": WlbenchConfig,
    "bench": BenchConfig,
}

_TUPLE_FIELDS = {"k_choices", "tasks", "seeds", "ks", "sizes"}


def _build_section(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str | None) -> RunConfig:
    """Parse a YAML config file into a RunConfig; missing file is an error."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    known = {"seed", "out", "threads"} | set(_SECTIONS)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")
    kwargs = {}
    for key in ("seed", "out", "threads"):
        if key in raw:
            kwargs[key] = raw[key]
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build_section(cls, raw[name], f"{path}: {name}")
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def resolve_config(cfg: RunConfig, overrides: dict, env: dict | None = None) -> RunConfig:
    """Apply env seed then flag overrides. Override keys use dots: 'encoder.mode'."""
    env = os.environ if env is None else env
    if env.get(SEED_ENV_VAR):
        try:
            cfg = replace(cfg, seed=int(env[SEED_ENV_VAR]))
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, "
                              f"got {env[SEED_ENV_VAR]!r}") from None
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            section, _, name = key.partition(".")
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            sub = getattr(cfg, section)
            if name not in {f.name for f in fields(sub)}:
                raise ConfigError(f"unknown config field {key!r}")
            if name in _TUPLE_FIELDS and isinstance(value, list):
                value = tuple(value)
            try:
                cfg = replace(cfg, **{section: replace(sub, **{name: value})})
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"{key}: {exc}") from exc
        else:
            if key not in ("seed", "out", "threads"):
                raise ConfigError(f"unknown config field {key!r}")
            cfg = replace(cfg, **{key: value})
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    out = asdict(cfg)

    def detuple(node):
        if isinstance(node, dict):
            return {k: detuple(v) for k, v in node.items()}
        if isinstance(node, tuple):
            return [detuple(v) for v in node]
        return node

    return detuple(out)


def dump_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)
