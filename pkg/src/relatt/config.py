"""Run configuration: ``key = value`` files, flag overrides, hashing, manifests.

Precedence, highest first: command-line flags, the ``RELATT_SEED``
environment variable (seed only), the config file, built-in defaults.

Defaults::

    lr = 0.01            layers = 2          dim = 100         bases = 2
    neg_ratio = 10       seed = 42           hidden_dropout = 0.0
    attn_dropout = 0.0   max_epochs = 6000   min_epochs = 0    patience = 10
    eval_interval = 100  attention = true    inverse = true    self_loop = true
    attn_nonlinearity = none                 share_attn_a = false
    attention_once = false                   filtered_negatives = false
    beta1 = 0.9          beta2 = 0.999       eps = 1e-8
    features = auto      th = 1.0            include_ranks = false
    raw = false          split = test
"""
from __future__ import annotations

import hashlib
import itertools
import json
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping

from relatt.errors import ConfigError
from relatt.training import TrainConfig

SEED_ENV = "RELATT_SEED"


@dataclass(frozen=True)
class RunConfig(TrainConfig):
    data: str = ""
    out: str = ""
    checkpoint: str = ""
    reference: str = ""
    queries: str = ""
    graph: str = ""
    features: str = "auto"
    th: float = 1.0
    include_ranks: bool = False
    raw: bool = False
    split: str = "test"

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 < self.th <= 1.0:
            raise ConfigError("th must be in (0, 1]", key="th")
        if self.split not in ("test", "valid", "train"):
            raise ConfigError("split must be one of test, valid, train", key="split")

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)


FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    typ = FIELD_TYPES[key]
    text = raw.strip()
    if typ is bool:
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{key}: expected bool, got {text!r}", key=key)
    if typ is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected int, got {text!r}", key=key) from None
    if typ is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected float, got {text!r}", key=key) from None
    return text


def read_config_file(path) -> dict[str, str]:
    """Raw ``key = value`` pairs; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in FIELD_TYPES:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}", key=key)
            out[key] = value
    return out


def parse_config(path=None, overrides: Mapping[str, object] | None = None,
                 env: Mapping[str, str] | None = None) -> RunConfig:
    env = os.environ if env is None else env
    values: dict[str, object] = {}
    if path is not None:
        for key, raw in read_config_file(path).items():
            values[key] = _coerce(key, raw)
    overrides = dict(overrides or {})
    if "seed" not in overrides and env.get(SEED_ENV):
        values["seed"] = _coerce("seed", env[SEED_ENV])
    for key, value in overrides.items():
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}", key=key)
        values[key] = _coerce(key, value) if isinstance(value, str) else value
    return RunConfig(**values)


# Where results are written does not change what is computed.
HASH_EXCLUDE = ("out",)


def config_hash(cfg) -> str:
    values = {k: v for k, v in asdict(cfg).items() if k not in HASH_EXCLUDE}
    payload = json.dumps(values, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def expand_matrix(base: RunConfig, grid: Mapping[str, list]) -> list[RunConfig]:
    """Cartesian product of ``grid`` applied over ``base``, in key-sorted order."""
    keys = sorted(grid)
    out = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        values = {**base.to_dict(), **dict(zip(keys, combo))}
        out.append(RunConfig(**values))
    return out


# Hyperparameter search space for the full-scale link-prediction runs.
SEARCH_GRID = {
    "lr": [0.01, 0.001],
    "layers": [1, 2],
    "hidden_dropout": [0.0, 0.1, 0.2, 0.3],
    "attn_dropout": [0.0, 0.1, 0.3, 0.6],
    "dim": [100, 200, 400],
    "bases": [2, 3, 5, 10, 50, 100],
    "neg_ratio": [10],
}


class Timer:
    def __init__(self):
        self.phases: dict[str, float] = {}

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - start


def write_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_manifest(path, cfg: RunConfig, command: str, timings: Mapping[str, float], version: str) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "version": version,
        "timings_sec": dict(timings),
    }
    write_atomic(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
