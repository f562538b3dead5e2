"""Run configuration with flat ``key=value`` file support."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    input_len: int = 96
    horizon: int = 16
    patch_len: int = 16
    stride: int = 8
    states: int = 10
    topk: int = 8
    d_model: int = 128
    d_llm: int = 64
    layers: int = 2
    heads: int = 4
    backbone_layers: int = 2
    backbone_heads: int = 4
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    few_shot: float = 1.0
    freeze_prior: bool = False
    loss: str = "mse"
    memm_mode: str = "softmax"
    attn_temperature: str = "sqrt"
    split_ratios: tuple = (0.7, 0.1, 0.2)
    seasonality: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("input_len", "horizon", "patch_len", "stride", "states", "topk", "d_model",
                     "d_llm", "layers", "heads", "backbone_layers", "backbone_heads", "epochs",
                     "batch_size", "seasonality"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.few_shot <= 1:
            raise ConfigError("few_shot must lie in (0, 1]")
        if self.patch_len > self.input_len:
            raise ConfigError("patch_len exceeds input_len")
        if self.loss not in ("mse", "smape"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.memm_mode not in ("softmax", "normalize"):
            raise ConfigError(f"unknown memm_mode {self.memm_mode!r}")
        if self.attn_temperature not in ("sqrt", "linear"):
            raise ConfigError(f"unknown attn_temperature {self.attn_temperature!r}")
        if self.d_llm % self.heads or self.d_model % self.heads or self.d_llm % self.backbone_heads:
            raise ConfigError("model widths must be divisible by head counts")
        ratios = tuple(float(r) for r in self.split_ratios)
        if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError("split_ratios must be three positive fractions summing to 1")
        self.split_ratios = ratios

    @property
    def n_patches(self) -> int:
        return (self.input_len - self.patch_len) // self.stride + 1

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["split_ratios"] = list(self.split_ratios)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        return cls(**{k: _coerce(k, v) for k, v in data.items()})

    def updated(self, **overrides) -> "TrainConfig":
        return TrainConfig.from_dict({**self.to_dict(), **overrides})


def _coerce(name: str, value):
    kind = {f.name: f.type for f in fields(TrainConfig)}[name]
    if not isinstance(value, str):
        return tuple(value) if kind == "tuple" else value
    text = value.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "tuple":
            return tuple(float(x) for x in text.replace("/", ",").split(","))
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None
    return text


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def load_config(path) -> TrainConfig:
    return TrainConfig.from_dict(parse_config_text(Path(path).read_text(encoding="utf-8")))
