"""Run configuration: nested dataclasses loaded from YAML with dotted overrides."""
from __future__ import annotations

import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import yaml

from .augmentation import AugmentConfig
from .errors import ConfigError
from .model import ModelConfig
from .objectives import LossWeights
from .observations import NoiseConfig
from .refinement import RefinementConfig
from .synthetic import KINDS
from .training import CurriculumConfig


@dataclass
class PathsConfig:
    skeleton: str = ""  # empty: packaged default skeleton
    dataset_dir: str = "run/data"
    checkpoint: str = "run/model.safetensors"
    output_dir: str = "run/out"


@dataclass
class DataConfig:
    kinds: list = field(default_factory=lambda: list(KINDS))
    clips_per_kind: int = 2
    heldout_per_kind: int = 1
    clip_length: int = 150
    fps: float = 30.0
    closeup_variants: int = 2

    def __post_init__(self):
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise ValueError(f"unknown clip kinds {bad}")
        if self.clips_per_kind < 1 or self.clip_length < 4:
            raise ValueError("need at least one clip per kind and 4 frames per clip")


@dataclass
class RunConfig:
    seed: int = 0
    deterministic: bool = False
    threads: int = 0  # 0 keeps the torch default
    paths: PathsConfig = field(default_factory=PathsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    loss_stage1: LossWeights = field(default_factory=lambda: LossWeights.for_stage("I"))
    loss_stage2: LossWeights = field(default_factory=lambda: LossWeights.for_stage("II"))
    refinement: RefinementConfig = field(default_factory=RefinementConfig)

    def to_dict(self):
        return asdict(self)


def _coerce(value, hint, key):
    origin = typing.get_origin(hint) or hint
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean for {key}", key)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"expected an integer for {key}", key)
        return int(value)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number for {key}", key)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string for {key}", key)
        return value
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list for {key}", key)
        return origin(value)
    return value


def _build(cls, data, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError(f"section {prefix or '<root>'} must be a mapping", prefix or None)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    for k in data:
        if k not in names:
            key = f"{prefix}{k}"
            raise ConfigError(f"unknown configuration key {key}", key)
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        key = f"{prefix}{f.name}"
        hint = hints[f.name]
        if is_dataclass(hint):
            kwargs[f.name] = _build(hint, data[f.name], key + ".")
        else:
            kwargs[f.name] = _coerce(data[f.name], hint, key)
    try:
        if cls is RunConfig:
            base = RunConfig()
            for f in fields(cls):
                kwargs.setdefault(f.name, getattr(base, f.name))
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {prefix.rstrip('.') or 'configuration'}: {exc}", prefix.rstrip(".") or None) from exc


def _set_dotted(tree, dotted, value):
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"{dotted} descends into a non-section value", dotted)
        node = nxt
    node[parts[-1]] = value


def parse_overrides(pairs):
    """``["--model.width", "32", ...]`` -> {"model.width": 32}; values are parsed as YAML scalars."""
    out = {}
    it = iter(pairs)
    for tok in it:
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument {tok!r}; overrides look like --key.subkey value", tok)
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            raw = next(it, None)
            if raw is None:
                raise ConfigError(f"override --{key} has no value", key)
        try:
            out[key] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value for --{key}: {exc}", key) from exc
    return out


def _merge(base, top):
    out = dict(base)
    for k, v in top.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path=None, overrides=None, base=None):
    """Defaults, then ``base`` (dotted preset), then the YAML file, then dotted overrides."""
    tree = {}
    for k, v in (base or {}).items():
        _set_dotted(tree, k, v)
    if path:
        with open(path) as f:
            try:
                loaded = yaml.safe_load(f) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} must contain a mapping at the top level")
        tree = _merge(tree, loaded)
    for k, v in (overrides or {}).items():
        _set_dotted(tree, k, v)
    return _build(RunConfig, tree)


def dump_config(cfg, path):
    with open(path, "w") as f:
        yaml.safe_dump(_plain(cfg.to_dict()), f, sort_keys=True)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x
