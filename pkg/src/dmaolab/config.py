"""Training configuration and the sectioned key=value config file.

Sections: model / score / plan / train / data. Keys match the config
dataclass fields exactly; unknown keys are rejected.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .data import DataConfig
from .encoder import ModelConfig
from .errors import InvalidConfig
from .scoring import ScoreConfig
from .surgery import AdaptationPlan


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    plan: AdaptationPlan = field(default_factory=AdaptationPlan)
    data: DataConfig = field(default_factory=DataConfig)
    total_steps: int = 3000
    batch_size: int = 8
    lr_start: float = 4e-6
    lr_peak: float = 4e-4
    lr_final: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    out_dir: str = "runs/desk"

    def __post_init__(self):
        if self.total_steps < 1 or self.batch_size < 1:
            raise InvalidConfig("total_steps and batch_size must be >= 1")
        if not self.lr_start < self.lr_peak:
            raise InvalidConfig("lr_start must be below lr_peak")
        if not self.lr_final < self.lr_start:
            raise InvalidConfig("lr_final must be below lr_start")
        if self.model.vocab != self.data.vocab:
            raise InvalidConfig(
                f"model vocab {self.model.vocab} != data vocab {self.data.vocab}"
            )


_SECTIONS = {
    "model": (ModelConfig, {
        "architecture": str, "d_model": int, "L": int, "k": int,
        "C": int, "M": int, "vocab": int, "seed": int,
    }),
    "score": (ScoreConfig, {
        "metric": str, "alpha": float, "update_interval": int, "scale_prob": float,
    }),
    "plan": (AdaptationPlan, {
        "delta": float, "iterations": int, "t_end_fraction": float,
        "init": str, "noise_std": float,
    }),
    "data": (DataConfig, {
        "vocab": int, "seq_len_range": "range", "frames_per_symbol": int,
        "noise_std": float, "seed": int,
    }),
}

_TRAIN_KEYS = {
    "total_steps": int, "batch_size": int, "lr_start": float, "lr_peak": float,
    "lr_final": float, "beta1": float, "beta2": float, "eps": float, "out_dir": str,
}


def _convert(section, key, kind, raw):
    try:
        if kind == "range":
            lo, hi = (part.strip() for part in raw.split(","))
            return (int(lo), int(hi))
        return kind(raw)
    except (ValueError, TypeError) as exc:
        raise InvalidConfig(f"[{section}] {key} = {raw!r}: {exc}") from exc


def load_config(path) -> TrainConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise InvalidConfig(f"cannot read config file {path}")
    kwargs = {}
    for section, (cls, keys) in _SECTIONS.items():
        values = {}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                if key not in keys:
                    raise InvalidConfig(f"unknown key {key!r} in [{section}]")
                values[key] = _convert(section, key, keys[key], raw)
        kwargs[section] = cls(**values)
    train_kwargs = {}
    if parser.has_section("train"):
        for key, raw in parser.items("train"):
            if key not in _TRAIN_KEYS:
                raise InvalidConfig(f"unknown key {key!r} in [train]")
            train_kwargs[key] = _convert("train", key, _TRAIN_KEYS[key], raw)
    for section in parser.sections():
        if section not in ("model", "score", "plan", "data", "train"):
            raise InvalidConfig(f"unknown section [{section}]")
    return TrainConfig(**kwargs, **train_kwargs)


def dump_config(cfg: TrainConfig) -> str:
    """Render a TrainConfig back to the file format (exact float reprs)."""
    lines = []
    for section, (cls, keys) in _SECTIONS.items():
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        for key, kind in keys.items():
            value = getattr(obj, key)
            if kind == "range":
                lines.append(f"{key} = {value[0]},{value[1]}")
            elif kind is float:
                lines.append(f"{key} = {value!r}")
            else:
                lines.append(f"{key} = {value}")
        lines.append("")
    lines.append("[train]")
    for key, kind in _TRAIN_KEYS.items():
        value = getattr(cfg, key)
        lines.append(f"{key} = {value!r}" if kind is float else f"{key} = {value}")
    lines.append("")
    return "\n".join(lines)
