"""key=value experiment configuration files.

One ``key = value`` per line, ``#`` starts a comment, lists are comma
separated. Channel keys follow the simulation parameter table (bandwidth,
sampling_factor, reflection_factor, radio_frequency, speed_of_light,
transmit_power, background_noise, spread_gain, max_taps) plus p_obs,
power_convention, max_order, occlusion, noise, n_scatterers, scatterer_seed.
Frequencies may carry a unit suffix (``100MHz``, ``2.4GHz``).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, fields
from pathlib import Path

from .channel import ChannelParams, params_from_mapping
from .model import ModelConfig, TrainConfig

_UNITS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
_NUM_UNIT = re.compile(r"^\s*([-+0-9.eE]+)\s*([a-zA-Z]+)?\s*$")


class ConfigFileError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigFileError(f"line {lineno}: empty key")
        out[key.lower()] = value
    return out


def parse_quantity(value: str) -> float:
    m = _NUM_UNIT.match(value)
    if not m:
        raise ConfigFileError(f"cannot parse number {value!r}")
    num, unit = m.groups()
    scale = 1.0
    if unit:
        if unit.lower() == "db":
            scale = 1.0
        elif unit.lower() in _UNITS:
            scale = _UNITS[unit.lower()]
        else:
            raise ConfigFileError(f"unknown unit {unit!r}")
    return float(num) * scale


def parse_list(value: str, conv=parse_quantity) -> list:
    return [conv(v) for v in value.split(",") if v.strip()]


@dataclass
class ExperimentConfig:
    scene: str = "two-room"
    sweep: str = "snr"  # "snr" or "bandwidth"
    snr_list: list = field(default_factory=lambda: [-10.0, 0.0, 10.0, 20.0])
    bandwidth_list: list = field(default_factory=lambda: [100e6])
    snr_db: float | None = None  # fixed SNR for bandwidth sweeps; None keeps transmit_power
    methods: list = field(default_factory=lambda: ["mudinet", "mlp", "transformer"])
    seeds: list = field(default_factory=lambda: [0])
    epochs: int = 300
    batch: int = 128
    dataset_size: int = 5000
    T: int = 110
    train_frac: float = 0.8
    channel: ChannelParams = field(default_factory=ChannelParams)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.sweep not in ("snr", "bandwidth"):
            raise ConfigFileError("sweep must be 'snr' or 'bandwidth'")
        settings = self.snr_list if self.sweep == "snr" else self.bandwidth_list
        if not settings or not self.methods or not self.seeds:
            raise ConfigFileError("settings, methods and seeds must be nonempty")

    @property
    def settings(self) -> list[float]:
        return list(self.snr_list if self.sweep == "snr" else self.bandwidth_list)

    def model_config(self, taps: int) -> ModelConfig:
        return ModelConfig(taps=taps, T=self.T, **self.model)


_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"taps", "T"}
_TRAIN_KEYS = {"lr_base", "lr_floor", "lr_decay"}


def config_from_mapping(kv: dict[str, str]) -> ExperimentConfig:
    kw: dict = {}
    model: dict = {}
    train: dict = {}
    channel: dict = {}
    for key, value in kv.items():
        if key in ("scene", "sweep"):
            kw[key] = value
        elif key in ("snr_list", "snr"):
            kw["snr_list"] = parse_list(value)
        elif key in ("bandwidth_list", "bandwidths"):
            kw["bandwidth_list"] = parse_list(value)
        elif key == "snr_db":
            kw["snr_db"] = None if value.lower() in ("none", "") else parse_quantity(value)
        elif key == "methods":
            kw["methods"] = [m.strip().lower() for m in value.split(",") if m.strip()]
        elif key == "seeds":
            kw["seeds"] = parse_list(value, int)
        elif key in ("epochs", "batch", "dataset_size", "t"):
            kw["T" if key == "t" else key] = int(parse_quantity(value))
        elif key == "trajectory_length":
            kw["T"] = int(parse_quantity(value))
        elif key == "train_frac":
            kw["train_frac"] = float(value)
        elif key in _MODEL_KEYS:
            conv = int if isinstance(getattr(ModelConfig, key), int) else float
            model[key] = conv(parse_quantity(value))
        elif key in _TRAIN_KEYS:
            train[key] = float(value)
        else:
            channel[key] = str(parse_quantity(value)) if key in ("bandwidth", "radio_frequency") else value
    try:
        ch = params_from_mapping(channel)
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(str(exc)) from None
    unknown = set(channel) - set(_channel_keys())
    if unknown:
        raise ConfigFileError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(channel=ch, model=model, train=TrainConfig(**train), **kw)


def _channel_keys():
    from .channel import PARAM_KEYS
    return set(PARAM_KEYS) | {f.name for f in fields(ChannelParams)}


def load_config(path) -> ExperimentConfig:
    return config_from_mapping(parse_kv(Path(path).read_text()))
