"""Training configuration and the flat ``key = value`` config file format.

Files are UTF-8 lines of ``dotted.key = value`` with ``#`` comments; the CLI
layers ``--set key=value`` overrides on top (highest precedence).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .backbone import SCALE_PRESETS
from .hac import HacConfig
from .rap import EdlLossConfig

__all__ = ["TrainConfig", "parse_config_text", "apply_settings", "config_hash", "RETINAMNIST_PRESET"]


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    scale: str = "T"
    image_size: int = 32
    patch_size: int = 4
    in_channels: int = 3
    val_fraction: float = 0.1
    checkpoint_every: int = 0   # 0 = only final/best
    hac: HacConfig = field(default_factory=HacConfig)
    rap: EdlLossConfig = field(default_factory=EdlLossConfig)

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("need epochs >= 0, batch_size >= 1, learning_rate > 0")
        if self.scale not in SCALE_PRESETS:
            raise ValueError(f"scale must be one of {sorted(SCALE_PRESETS)}")
        self.rap.validate()


# Table-style preset for the public 28x28 five-class benchmark.
RETINAMNIST_PRESET = {"epochs": 100, "batch_size": 96, "scale": "B", "image_size": 28}


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _convert(raw: str, target_type):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() not in _BOOL_WORDS:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return _BOOL_WORDS[raw.lower()]
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines into a dict of raw strings."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply_settings(cfg: TrainConfig, settings: dict[str, str]) -> TrainConfig:
    """Apply dotted-key string settings onto a TrainConfig in place."""
    top = {f.name: f for f in fields(TrainConfig)}
    sub = {"hac": HacConfig, "rap": EdlLossConfig}
    for key, raw in settings.items():
        if "." in key:
            group, leaf = key.split(".", 1)
            if group not in sub:
                raise ValueError(f"unknown config group {group!r} in {key!r}")
            target = getattr(cfg, group)
            leaf_fields = {f.name: f for f in fields(sub[group])}
            if leaf not in leaf_fields:
                raise ValueError(f"unknown config key {key!r}")
            setattr(target, leaf, _convert(raw, type(getattr(target, leaf))))
        else:
            if key not in top:
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, _convert(raw, type(getattr(cfg, key))))
    return cfg


def _flatten(cfg: TrainConfig) -> dict[str, str]:
    out = {}
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if f.name in ("hac", "rap"):
            for sf in fields(type(v)):
                out[f"{f.name}.{sf.name}"] = str(getattr(v, sf.name))
        else:
            out[f.name] = str(v)
    return out


def serialize_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in sorted(_flatten(cfg).items()))


def config_hash(cfg: TrainConfig) -> str:
    """Digest of everything that shapes the model and its update trajectory.

    ``epochs`` is deliberately excluded: it only decides when training stops,
    so a checkpoint may be resumed under a larger epoch budget.
    """
    flat = {k: v for k, v in _flatten(cfg).items() if k != "epochs"}
    text = "".join(f"{k} = {v}\n" for k, v in sorted(flat.items()))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
