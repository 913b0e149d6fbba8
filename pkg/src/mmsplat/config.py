"""Training configuration: one serializable record with every hyperparameter."""

from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .density import DensifyConfig, PruneMode
from .rasterizer import DEFAULT_CUTOFF
from .scene import Mode


class ConfigError(ValueError):
    pass


@dataclass
class LearningRates:
    means: float = 1.6e-4
    means_final: float = 1.6e-6
    log_scales: float = 5e-3
    rotations: float = 1e-3
    indicator_logits: float = 5e-2
    opacity_logits: float = 5e-2
    features: float = 2.5e-3


# Clone/split and decomposition thresholds recalibrated for world-unit
# gradients on the 128x128 fixture (see ``mmsplat calibrate-thresholds``);
# DensifyConfig keeps the screen-space values as its own defaults.
DESK_DENSIFY = {"grad_threshold": 0.002, "decomp_threshold": 0.002}


def desk_densify(**overrides) -> DensifyConfig:
    return DensifyConfig(**{**DESK_DENSIFY, **overrides})


@dataclass
class TrainConfig:
    iterations: int = 3000
    seed: int = 0
    mode: Mode = Mode.PER_MODALITY_INDICATOR
    n_init: int = 1500
    lr: LearningRates = field(default_factory=LearningRates)
    densify_start: int = 100
    densify_stop: int = 1500
    densify: DensifyConfig = field(default_factory=desk_densify)
    loss_weights: dict[str, float] | None = None
    smooth_weight: float | None = None
    lambda_dssim: float = 0.2
    smooth: str = "tv"
    cutoff: float = DEFAULT_CUTOFF
    early_stop: float = 1e-4
    log_every: int = 100

    def __post_init__(self):
        if isinstance(self.lr, dict):
            self.lr = LearningRates(**self.lr)
        if isinstance(self.densify, dict):
            self.densify = desk_densify(**self.densify)
        self.mode = Mode(self.mode)

    def validate(self) -> "TrainConfig":
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.n_init < 1:
            raise ConfigError("n_init must be >= 1")
        for name, value in dataclasses.asdict(self.lr).items():
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"learning rate {name} must be > 0")
        if not 0 <= self.densify_start <= self.densify_stop <= self.iterations:
            raise ConfigError("need 0 <= densify_start <= densify_stop <= iterations")
        if not 0.0 <= self.cutoff < 1.0:
            raise ConfigError("cutoff must lie in [0, 1)")
        if not 0.0 <= self.early_stop < 1.0:
            raise ConfigError("early_stop must lie in [0, 1)")
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise ConfigError("lambda_dssim must lie in [0, 1]")
        if self.smooth not in ("tv", "none"):
            raise ConfigError("smooth must be 'tv' or 'none'")
        if self.mode is Mode.SHARED_OPACITY:
            if self.densify.mode is PruneMode.SOFT:
                raise ConfigError("soft prune needs per-modality indicators")
            if self.densify.decomposition:
                raise ConfigError("decomposition needs per-modality indicators")
        for name, w in (self.loss_weights or {}).items():
            if not (math.isfinite(w) and w >= 0):
                raise ConfigError(f"loss weight for {name} must be finite and >= 0")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mode"] = self.mode.value
        d["densify"] = self.densify.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = copy.deepcopy(dict(d or {}))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "lr" in d:
                extra = set(d["lr"]) - {f.name for f in dataclasses.fields(LearningRates)}
                if extra:
                    raise ConfigError(f"unknown lr keys: {sorted(extra)}")
            if "densify" in d:
                extra = set(d["densify"]) - {f.name for f in dataclasses.fields(DensifyConfig)}
                if extra:
                    raise ConfigError(f"unknown densify keys: {sorted(extra)}")
            return cls(**d).validate()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, overrides: dict) -> "TrainConfig":
        return TrainConfig.from_dict(deep_merge(self.to_dict(), overrides))


def deep_merge(base: dict, overrides: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path) -> TrainConfig:
    """Read a YAML (or JSON) config file; missing keys take the defaults."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return TrainConfig.from_dict(data or {})


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


# Rows of the component ablation, from the joint baseline to the full method.
METHODS = {
    "MM-J": {"mode": "shared_opacity", "densify": {"mode": "joint", "decomposition": False}},
    "+MM": {"mode": "per_modality_indicator", "densify": {"mode": "joint", "decomposition": False}},
    "Prune(H)": {"mode": "per_modality_indicator",
                 "densify": {"mode": "hard_prune", "decomposition": False}},
    "Prune(S)": {"mode": "per_modality_indicator",
                 "densify": {"mode": "soft_prune", "decomposition": False}},
    "Decomp.": {"mode": "per_modality_indicator",
                "densify": {"mode": "soft_prune", "decomposition": True}},
}


def method_config(name: str, base: TrainConfig | None = None) -> TrainConfig:
    if name not in METHODS:
        raise ConfigError(f"unknown method {name!r}; choose from {list(METHODS)}")
    return (base or TrainConfig()).with_overrides(METHODS[name])


def ablation_matrix(base: TrainConfig | None = None) -> list[tuple[str, TrainConfig]]:
    return [(name, method_config(name, base)) for name in METHODS]


def load_matrix(path, base: TrainConfig | None = None) -> list[tuple[str, TrainConfig]]:
    """A matrix file is a mapping ``{base: {...}, rows: [{name, method?, overrides?}]}``."""
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read matrix {path}: {exc}") from exc
    if not isinstance(data, dict) or "rows" not in data:
        raise ConfigError("matrix file needs a 'rows' list")
    base = base or TrainConfig()
    if data.get("base"):
        base = base.with_overrides(data["base"])
    rows = []
    for row in data["rows"]:
        if "name" not in row:
            raise ConfigError("every matrix row needs a name")
        cfg = method_config(row["method"], base) if row.get("method") else base
        rows.append((str(row["name"]), cfg.with_overrides(row.get("overrides") or {})))
    return rows
