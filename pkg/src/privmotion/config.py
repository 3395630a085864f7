"""Training configuration and the flat ``key=value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import ConfigError

METRICS = ("mp", "ma")


@dataclass(frozen=True)
class TrainConfig:
    n: int = 10
    t: int = 25
    p: int = 10
    c: int = 0  # 0 keeps every coefficient: C = N + T + P
    hidden: int = 256
    lr0: float = 0.0005
    decay: float = 0.96
    decay_every: int = 2
    dropout: float = 0.5
    batch: int = 16
    epochs_itp: int = 50
    epochs_fp: int = 50
    lam: float = 0.6
    clip_norm: float = 1.0
    seed: int = 0
    metric: str = "mp"
    obs_skip: float = 0.7
    priv_skip: float = 0.3
    fp_skip: float = 1.0
    warm_start: bool = False

    def __post_init__(self):
        if self.n < 1 or self.t < 1:
            raise ConfigError(f"n and t must be at least 1, got n={self.n}, t={self.t}")
        if self.p < 0:
            raise ConfigError(f"p must be non-negative, got {self.p}")
        if self.c < 0 or self.c > self.length:
            raise ConfigError(f"c={self.c} must lie in [0, n+t+p={self.length}]")
        if self.hidden < 1 or self.batch < 1 or self.decay_every < 1:
            raise ConfigError("hidden, batch and decay_every must be positive")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")

    @property
    def length(self) -> int:
        return self.n + self.t + self.p

    @property
    def coeffs(self) -> int:
        return self.c or self.length

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# file key -> dataclass field, where they differ
_KEY_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}


def config_keys(cls=TrainConfig) -> list[str]:
    return [_FIELD_TO_KEY.get(f.name, f.name) for f in fields(cls)]


def parse_value(key: str, raw: str, kind: type) -> Any:
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_kv_file(path) -> dict[str, str]:
    """Read ``key=value`` lines; ``#`` starts a comment line."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key = key.strip()
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def parse_assignments(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def train_config_from(values: Mapping[str, Any], base: TrainConfig | None = None) -> TrainConfig:
    """Build a TrainConfig from file-style keys; unknown keys are rejected."""
    base = base or TrainConfig()
    types = {f.name: type(getattr(base, f.name)) for f in fields(TrainConfig)}
    changes = {}
    for key, raw in values.items():
        name = _KEY_TO_FIELD.get(key, key)
        if name not in types:
            raise ConfigError(f"unknown config key {key!r}")
        changes[name] = parse_value(key, raw, types[name]) if isinstance(raw, str) else raw
    return base.replace(**changes)


def train_config_items(cfg: TrainConfig) -> dict[str, str]:
    return {_FIELD_TO_KEY.get(f.name, f.name): format_value(getattr(cfg, f.name)) for f in fields(cfg)}
