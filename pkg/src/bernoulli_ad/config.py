"""Flat ``key = value`` run configuration with typed defaults."""
from __future__ import annotations

from pathlib import Path

from .anomaly import InferenceConfig
from .codec import BinaryAutoencoder, BitplaneCodec
from .denoiser import Architecture
from .io import FormatError, format_kv, parse_kv
from .schedule import build_schedule
from .training import TrainConfig

DEFAULTS = {
    "schedule.kind": "linear",
    "schedule.T": 1000,
    "schedule.beta_start": 1e-4,
    "schedule.beta_end": 0.02,
    "codec.kind": "bitplane",
    "codec.bits": 4,
    "codec.factor": 4,
    "codec.latent_channels": 8,
    "codec.width": 8,
    "ae.learning_rate": 1e-3,
    "ae.batch_size": 8,
    "ae.iterations": 1000,
    "denoiser.width": 32,
    "denoiser.n_blocks": 3,
    "denoiser.kernel": 3,
    "denoiser.emb_dim": 32,
    "denoiser.recenter": True,
    "train.learning_rate": 1e-4,
    "train.batch_size": 32,
    "train.iterations": 1000,
    "train.optimizer": "adam",
    "train.checkpoint_every": 0,
    "inference.L": 200,
    "inference.P": 0.5,
    "inference.binarize_mode": "sample",
    "inference.median_kernel": 5,
    "inference.threshold": 0.5,
    "inference.min_component": 10,
    "inference.normalize_map": False,
    "paths.data": "",
    "paths.codec": "",
    "paths.model": "",
    "paths.out": "",
    "seed": 0,
}


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(value, type(default)) and not isinstance(value, str):
        return value
    text = str(value).strip()
    if isinstance(default, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise FormatError(f"{key}: expected a boolean, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise FormatError(f"{key}: expected {type(default).__name__}, got {text!r}") from None
    return text


class RunConfig(dict):
    """All pipeline settings; unknown keys are rejected."""

    def __init__(self, values=None, **kw):
        super().__init__(DEFAULTS)
        self.update_from({**(values or {}), **kw})

    def update_from(self, values: dict):
        for k, v in values.items():
            if k not in DEFAULTS:
                raise FormatError(f"unknown config key {k!r}")
            self[k] = _coerce(k, v)
        return self

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls(parse_kv(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        return format_kv({k: self[k] for k in DEFAULTS})

    # builders --------------------------------------------------------------
    def schedule(self):
        return build_schedule(self["schedule.kind"], self["schedule.T"],
                              self["schedule.beta_start"], self["schedule.beta_end"])

    def codec(self):
        if self["codec.kind"] == "bitplane":
            return BitplaneCodec(bits=self["codec.bits"], factor=self["codec.factor"])
        if self["codec.kind"] == "learned":
            return BinaryAutoencoder(
                latent_channels=self["codec.latent_channels"], factor=self["codec.factor"],
                width=self["codec.width"], learning_rate=self["ae.learning_rate"],
                batch_size=self["ae.batch_size"], iterations=self["ae.iterations"],
                seed=self["seed"])
        raise FormatError(f"unknown codec kind {self['codec.kind']!r}")

    def architecture(self, channels: int) -> Architecture:
        return Architecture(channels=channels, width=self["denoiser.width"],
                            n_blocks=self["denoiser.n_blocks"], kernel=self["denoiser.kernel"],
                            emb_dim=self["denoiser.emb_dim"], recenter=self["denoiser.recenter"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self["train.learning_rate"],
                           batch_size=self["train.batch_size"],
                           iterations=self["train.iterations"], optimizer=self["train.optimizer"],
                           seed=self["seed"], checkpoint_every=self["train.checkpoint_every"])

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(L=self["inference.L"], P=self["inference.P"],
                               binarize_mode=self["inference.binarize_mode"], seed=self["seed"],
                               median_kernel=self["inference.median_kernel"],
                               threshold=self["inference.threshold"],
                               min_component=self["inference.min_component"],
                               normalize_map=self["inference.normalize_map"])
