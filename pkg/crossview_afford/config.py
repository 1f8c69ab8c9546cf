from __future__ import annotations

import dataclasses
import itertools
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

RUN_CONFIG_NAME = "run_config.txt"

# --- flat key=value files ---


def read_config(path: Path | str) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    config: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if "=" in line and not line.startswith("#"):
            key, _, value = line.partition("=")
            config[key.strip()] = value.strip()
    return config


def write_config(path: Path | str, config: Mapping[str, str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        "\n".join(f"{k}={v}" for k, v in sorted(config.items())) + "\n",
        encoding="utf-8",
    )
    return path


# --- run configuration ---


@dataclass(frozen=True)
class TrainConfig:
    """Every hyperparameter of a run. Field defaults are the full-scale settings."""

    profile: str = "paper"
    seed: int = 0
    epochs: int = 35
    lr: float = 1e-3
    batch_size: int = 32
    n_exo: int = 3
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.5
    temperature: float = 1.0
    alpha: float = 0.9
    rank: int = 64
    channels: int = 64
    nmf_iters: int = 6
    refine_iters: int = 6
    refine_at_test: bool = True
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    grad_clip: float = 0.0
    crop: bool = True
    flip: bool = True
    input_size: int = 224
    crop_source: int = 256
    stem_width: int = 64
    stage_widths: tuple[int, ...] = (256, 512, 1024, 2048, 2048)
    head_channels: int = 1024
    use_aim: bool = True
    use_cft: bool = True
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("lr", "lambda1", "lambda2", "lambda3", "sgd_momentum", "weight_decay", "grad_clip"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("n_exo", "batch_size", "rank", "channels", "stem_width", "head_channels", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("epochs", "nmf_iters", "refine_iters"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.stage_widths:
            raise ConfigError("stage_widths must name at least one stage")
        if self.input_size % (2 ** len(self.stage_widths)):
            raise ConfigError(
                f"input_size {self.input_size} is not divisible by 2^{len(self.stage_widths)}"
            )
        if self.crop_source < self.input_size:
            raise ConfigError(f"crop_source {self.crop_source} is smaller than input_size {self.input_size}")
        if self.use_cft and not self.use_aim:
            raise ConfigError("use_cft needs the AIM dictionary; enable use_aim or disable use_cft")

    @property
    def feat_channels(self) -> int:
        return self.stage_widths[-1]

    @property
    def feat_size(self) -> int:
        return self.input_size // 2 ** len(self.stage_widths)

    def replace(self, **changes: object) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def to_mapping(self) -> dict[str, str]:
        return {f.name: _format_value(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base: TrainConfig | None = None) -> TrainConfig:
        base = base or cls()
        known = {f.name: f for f in fields(cls)}
        changes: dict[str, object] = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key '{key}'")
            changes[key] = _parse_value(key, raw, type(getattr(base, key)))
        return dataclasses.replace(base, **changes)


PROFILES: dict[str, dict[str, str]] = {
    "paper": {},
    "toy": {
        "profile": "toy",
        "epochs": "20",
        "lr": "0.005",
        "batch_size": "4",
        "lambda3": "0.1",
        "grad_clip": "5.0",
        "rank": "8",
        "channels": "16",
        "input_size": "64",
        "crop_source": "80",
        "stem_width": "16",
        "stage_widths": "16,32,32",
        "head_channels": "64",
    },
}


def profile_config(name: str) -> TrainConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile '{name}' (choose from {', '.join(PROFILES)})")
    return TrainConfig.from_mapping(PROFILES[name])


def resolve_config(
    profile: str | None = None,
    config_file: Path | str | None = None,
    overrides: Mapping[str, str] | None = None,
) -> TrainConfig:
    """Effective config: profile defaults, then the config file, then flag overrides.

    An explicit *profile* wins over a ``profile`` key in the file; with neither,
    the toy profile is used.
    """
    file_values = read_config(config_file) if config_file else {}
    name = profile or file_values.get("profile") or "toy"
    if name not in PROFILES:
        raise ConfigError(f"unknown profile '{name}' (choose from {', '.join(PROFILES)})")
    merged = {**PROFILES[name], **file_values, **(overrides or {}), "profile": name}
    return TrainConfig.from_mapping(merged)


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(key: str, raw: str, kind: type) -> object:
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"invalid value for '{key}': {raw!r}") from e


SWEEP_KEYS: dict[str, str] = {"temperature": "T", "channels": "c", "rank": "r", "n_exo": "N"}


def sweep_configs(base: TrainConfig, sweeps: Mapping[str, Sequence[str]]) -> list[tuple[str, TrainConfig]]:
    """One config per combination of swept values, with a directory-safe name each.

    A single combination is returned with an empty name.
    """
    keys = [k for k in SWEEP_KEYS if sweeps.get(k)]
    combos = list(itertools.product(*(sweeps[k] for k in keys)))
    if len(combos) <= 1:
        return [("", TrainConfig.from_mapping(dict(zip(keys, combos[0])), base=base))] if keys else [("", base)]
    runs = []
    for values in combos:
        config = TrainConfig.from_mapping(dict(zip(keys, values)), base=base)
        name = "_".join(f"{SWEEP_KEYS[k]}{_format_value(getattr(config, k))}" for k in keys)
        runs.append((name, config))
    return runs
