"""Pipeline configuration: a YAML tree, dotted overrides and content hashes."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dataset import DEFAULT_BLACKLIST, SyntheticConfig
from .errors import ConfigError
from .evaluation import ExperimentConfig
from .features import EmbedderHyper
from .selection import DsaeeConfig

OUTPUT_ROOT_ENV = "ERNEST_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "ernest_runs"
SOURCES = ("synthetic", "uci", "cache")


@dataclass
class DataConfig:
    source: str = "synthetic"
    path: str | None = None  # UCI root or cache file
    condition: str | None = None  # e.g. "S1_obj"; None keeps every condition
    blacklist: tuple = DEFAULT_BLACKLIST
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class SplitConfig:
    n_test_subjects: int = 20
    seed: int | None = None  # None: use master_seed


@dataclass
class PipelineConfig:
    master_seed: int = 0
    output_dir: str | None = None
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    embedder: EmbedderHyper = field(default_factory=EmbedderHyper)
    dsaee: DsaeeConfig = field(default_factory=DsaeeConfig)
    evaluation: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self):
        if self.data.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}, got {self.data.source!r}")
        if self.data.source != "synthetic" and not self.data.path:
            raise ConfigError(f"data.path is required for source {self.data.source!r}")
        if self.data.source == "synthetic":
            self.data.synthetic.validate()
        if self.split.n_test_subjects < 2 or self.split.n_test_subjects % 2:
            raise ConfigError("split.n_test_subjects must be a positive even number")
        if not self.evaluation.K_list:
            raise ConfigError("evaluation.K_list is empty")
        if any(int(K) < 1 for K in self.evaluation.K_list):
            raise ConfigError("every K must be positive")
        if self.evaluation.folds < 2:
            raise ConfigError("evaluation.folds must be at least 2")
        return self

    @property
    def split_seed(self) -> int:
        return self.master_seed if self.split.seed is None else self.split.seed

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    @classmethod
    def from_dict(cls, d) -> PipelineConfig:
        return _build(cls, d or {}, "").validate()


def _plain(obj):
    """Dataclasses to dicts and tuples to lists (recursively) so YAML and JSON stay plain."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _tupled(value):
    if isinstance(value, (list, tuple)):
        return tuple(_tupled(v) for v in value)
    return value


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(d).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in d.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, path)
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path} must be a list")
            kwargs[name] = _tupled(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where or 'config'}: {exc}") from None


def parse_override(text: str):
    """``a.b.c=value`` -> (["a", "b", "c"], parsed YAML value)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    keys = [k for k in key.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in {text!r}: {exc}") from None
    return keys, value


def apply_overrides(tree: dict, overrides) -> dict:
    tree = json.loads(json.dumps(tree))  # deep copy of plain data
    for item in overrides or ():
        keys, value = parse_override(item) if isinstance(item, str) else item
        node = tree
        for k in keys[:-1]:
            child = node.setdefault(k, {})
            if not isinstance(child, dict):
                raise ConfigError(f"cannot set {'.'.join(keys)}: {k} is not a mapping")
            node = child
        node[keys[-1]] = value
    return tree


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Defaults, then the YAML file, then overrides; validated."""
    tree = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            tree = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return PipelineConfig.from_dict(apply_overrides(tree, overrides))


def content_hash(*parts) -> str:
    """SHA-256 over canonical JSON of ``parts``."""
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(_plain(p), sort_keys=True, separators=(",", ":")).encode())
        h.update(b"\x00")
    return h.hexdigest()


def output_dir_for(cfg: PipelineConfig, command: str) -> Path:
    """Configured directory, else ``$ERNEST_OUTPUT_ROOT/<command>-<hash>``."""
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        return out if out.is_absolute() or OUTPUT_ROOT_ENV not in os.environ else root / out
    tree = cfg.to_dict()
    tree.pop("output_dir", None)
    return root / f"{command}-{content_hash(tree)[:12]}"
