"""Run configuration: plain-text ``section.key = value`` files with
environment-variable overrides, serializable back out for exact replay.

Every key can be overridden by ``SELDMAMBA_<key with '.' -> '__'>``, e.g.
``SELDMAMBA_optimizer__lr=0.001``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

from .features import FeatureConfig
from .model import ModelConfig

ENV_PREFIX = "SELDMAMBA_"


@dataclass
class OptimizerConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class ScheduleConfig:
    epochs: int = 80
    lr_halve_epoch: int = 65
    batch_size: int = 8


@dataclass
class StageConfig:
    plan: str = "unified"        # "unified" or "two-stage"
    stage1_epochs: int = 0       # 0 -> first half of the epochs

    def __post_init__(self):
        if self.plan not in ("unified", "two-stage"):
            raise ValueError(f"unknown stage plan {self.plan!r}")


@dataclass
class DataConfig:
    n_scenes: int = 10
    scene_seconds: float = 20.0
    events_per_scene: int = 6
    seed: int = 1234
    manifest: str = ""           # non-empty -> load this dataset instead of synthesizing
    segment_seconds: float = 5.0
    snr_db_lo: float = 20.0
    snr_db_hi: float = 30.0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    stage: StageConfig = field(default_factory=StageConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    out_dir: str = "runs/default"

    @staticmethod
    def desk_preset():
        """Small preset sized for CPU closed-loop runs: the optimizer schedule
        scales the 80-epoch / halve-at-65 defaults down proportionally."""
        cfg = RunConfig()
        cfg.model = ModelConfig(conv_channels=(4, 8, 16, 32), embed_dim=32,
                                state_dim=4, dtype="float32")
        cfg.optimizer.lr = 1e-3
        cfg.schedule = ScheduleConfig(epochs=30, lr_halve_epoch=24, batch_size=8)
        cfg.data = DataConfig(n_scenes=50, scene_seconds=20.0, events_per_scene=6)
        return cfg


_SECTIONS = ("model", "features", "optimizer", "schedule", "stage", "data")


def _format_value(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(text, template):
    text = text.strip()
    if template is None or text.lower() == "none":
        return None if text.lower() == "none" else int(text)
    if isinstance(template, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(template, (tuple, list)):
        return tuple(int(v) for v in text.split(","))
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    return text


def config_to_kv(cfg: RunConfig):
    """Flatten to an ordered {dotted key: string value} mapping."""
    out = {}
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in fields(sub):
            out[f"{section}.{f.name}"] = _format_value(getattr(sub, f.name))
    out["seed"] = str(cfg.seed)
    out["out_dir"] = cfg.out_dir
    return out


def apply_kv(cfg: RunConfig, pairs):
    """Set dotted keys on a RunConfig, coercing strings by field type."""
    for key, value in pairs.items():
        if key == "seed":
            cfg.seed = int(value)
            continue
        if key == "out_dir":
            cfg.out_dir = str(value)
            continue
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise KeyError(f"unknown config key {key!r}")
        sub = getattr(cfg, section)
        if not hasattr(sub, name):
            raise KeyError(f"unknown config key {key!r}")
        setattr(sub, name, _parse_value(str(value), getattr(sub, name)))
    return cfg


def parse_config_text(text):
    """Parse ``key = value`` lines; '#' starts a comment, blanks ignored."""
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def env_overrides(environ=None):
    """Dotted-key overrides picked up from the process environment."""
    environ = environ if environ is not None else os.environ
    pairs = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            pairs[name[len(ENV_PREFIX):].replace("__", ".")] = value
    return pairs


def load_config(path=None, text=None, environ=None) -> RunConfig:
    """Config file plus environment overrides, highest priority last."""
    cfg = RunConfig()
    pairs = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    if text is not None:
        pairs.update(parse_config_text(text))
    pairs.update(env_overrides(environ))
    # rebuild model config through its constructor so invariants re-run
    apply_kv(cfg, pairs)
    cfg.model = ModelConfig(**{f.name: getattr(cfg.model, f.name)
                               for f in fields(ModelConfig)})
    return cfg


def save_config_snapshot(path, cfg: RunConfig):
    lines = [f"{key} = {value}" for key, value in config_to_kv(cfg).items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def snapshot_string(cfg: RunConfig):
    """Single-line snapshot for embedding in checkpoint metadata."""
    return ";".join(f"{k}={v}" for k, v in config_to_kv(cfg).items())


def config_from_snapshot(snapshot: str) -> RunConfig:
    pairs = dict(item.split("=", 1) for item in snapshot.split(";") if item)
    cfg = RunConfig()
    apply_kv(cfg, pairs)
    cfg.model = ModelConfig(**{f.name: getattr(cfg.model, f.name)
                               for f in fields(ModelConfig)})
    return cfg
