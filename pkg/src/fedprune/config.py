"""Run configuration: dataclasses plus a YAML loader whose errors cite line numbers."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .graph import FAMILIES


@dataclass
class DatasetConfig:
    kind: str = "synthetic"          # synthetic | idx
    seed: int = 0
    classes: int = 10
    samples_per_client: int = 40
    test_samples: int = 500
    image_size: int = 16
    noise: float = 1.0
    smooth: float = 1.5
    shards_per_client: int = 2
    images: str = ""                 # idx only
    labels: str = ""
    test_size: int = 1000


@dataclass
class RunConfig:
    seed: int = 0
    family: str = "conv"
    widths: list = field(default_factory=lambda: [64, 128])
    kernel: int = 5
    clients: int = 50
    fraction: float = 0.10
    clients_per_round: int = 0       # 0 -> use fraction
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-3
    k: float = 2.0
    patience: int = 3
    stage1_cap: int = 100
    stage2_rounds: int = 50
    prune: bool = True
    workers: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        ds = changes.pop("dataset", None)
        out = dataclasses.replace(self, **changes)
        if ds is not None:
            out.dataset = ds if isinstance(ds, DatasetConfig) else dataclasses.replace(self.dataset, **ds)
        return out


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return value
    return value


def _build(cls, mapping_node, source: str):
    defaults = cls()
    known = {f.name for f in fields(cls)}
    values = {}
    for key_node, val_node in mapping_node.value:
        key = key_node.value
        where = f"{source}:{key_node.start_mark.line + 1}"
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
        default = getattr(defaults, key)
        if dataclasses.is_dataclass(default):
            if not isinstance(val_node, yaml.MappingNode):
                raise ConfigError(f"{where}: {key!r} must be a mapping")
            values[key] = _build(type(default), val_node, source)
            continue
        value = yaml.safe_load(yaml.serialize(val_node))
        values[key] = _coerce(value, default, f"{where}: {key}")
    cfg = cls(**values)
    lines = {k.value: k.start_mark.line + 1 for k, _ in mapping_node.value}
    try:
        validate(cfg)
    except ConfigError as exc:
        field_name = getattr(exc, "field", None)
        line = lines.get(field_name)
        prefix = f"{source}:{line}" if line else source
        raise ConfigError(f"{prefix}: {exc}") from None
    return cfg


def _fail(field_name: str, msg: str):
    err = ConfigError(f"{field_name}: {msg}")
    err.field = field_name
    raise err


def validate(cfg) -> None:
    if isinstance(cfg, DatasetConfig):
        if cfg.kind not in ("synthetic", "idx"):
            _fail("kind", f"must be 'synthetic' or 'idx', got {cfg.kind!r}")
        if cfg.classes < 2:
            _fail("classes", "need at least 2 classes")
        if cfg.samples_per_client < 1:
            _fail("samples_per_client", "must be positive")
        if cfg.shards_per_client < 1:
            _fail("shards_per_client", "must be positive")
        if cfg.image_size < 5:
            _fail("image_size", "must be at least 5")
        if cfg.noise < 0:
            _fail("noise", "must be nonnegative")
        if cfg.kind == "idx" and not (cfg.images and cfg.labels):
            _fail("images", "idx datasets need both 'images' and 'labels' paths")
        return
    if cfg.family not in FAMILIES:
        _fail("family", f"must be one of {FAMILIES}, got {cfg.family!r}")
    if not cfg.widths or any(isinstance(w, bool) or not isinstance(w, (int, list)) for w in cfg.widths):
        _fail("widths", "must be a nonempty list of integers (or triples for inception)")
    for name in ("clients", "epochs", "batch_size", "patience", "workers", "kernel"):
        if getattr(cfg, name) < 1 and not (name == "epochs" and cfg.epochs == 0):
            _fail(name, "must be positive")
    if cfg.stage1_cap < 0 or cfg.stage2_rounds < 0:
        _fail("stage2_rounds" if cfg.stage2_rounds < 0 else "stage1_cap", "must be nonnegative")
    if not 0.0 < cfg.fraction <= 1.0:
        _fail("fraction", f"must lie in (0, 1], got {cfg.fraction}")
    if cfg.clients_per_round < 0:
        _fail("clients_per_round", "must be nonnegative")
    if cfg.k < 0:
        _fail("k", f"must be nonnegative, got {cfg.k}")
    if cfg.lr <= 0:
        _fail("lr", "must be positive")
    validate(cfg.dataset)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(text, str(path))


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}{line}: malformed YAML ({getattr(exc, 'problem', exc)})") from None
    if node is None:
        return RunConfig()
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{source}:1: top level must be a mapping")
    return _build(RunConfig, node, source)


def apply_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Overrides use config keys; dataset keys are prefixed ``dataset_``."""
    top, ds = {}, {}
    for key, val in overrides.items():
        if val is None:
            continue
        if key.startswith("dataset_"):
            ds[key[len("dataset_"):]] = val
        else:
            top[key] = val
    out = cfg.replace(**top, dataset=ds) if ds else cfg.replace(**top)
    try:
        validate(out)
    except ConfigError as exc:
        raise ConfigError(f"command-line override: {exc}") from None
    return out


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
