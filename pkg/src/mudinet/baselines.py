"""Reference regressors: a single-time MLP with MudiNet's UE-branch layer
sizes and a multi-time attention regressor."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import (
    LossBreakdown,
    ModelConfig,
    TrainConfig,
    _attention_params,
    _dense,
    _linear,
    _mlp,
    _mlp_params,
    fit,
    self_attention_forward,
)

KINDS = ("mlp", "transformer")


@dataclass
class BaselineConfig:
    kind: str = "mlp"
    taps: int = 300
    d: int = 64
    l_u: int = 32
    hidden: int = 128
    layers: int = 2
    input_mode: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        expected = "single-time" if self.kind == "mlp" else "multi-time"
        if not self.input_mode:
            self.input_mode = expected
        if self.input_mode != expected:
            raise ValueError(f"{self.kind} baseline requires {expected} input")

    @classmethod
    def mirroring(cls, kind: str, mc: ModelConfig) -> BaselineConfig:
        return cls(kind, mc.taps, mc.d, mc.l_u, mc.hidden, mc.layers)


def _zero():
    return Tensor(0.0)


def _pos_only(pos) -> LossBreakdown:
    return LossBreakdown(_zero(), _zero(), _zero(), _zero(), pos, pos)


class _Regressor:
    kind = ""

    def loss(self, x, labels, rng=None, eta=None) -> LossBreakdown:
        p_hat = self.forward(ad._t(x))
        return _pos_only(ad.mean(ad.sum(ad.square(p_hat - ad._t(labels)), axis=-1)))

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (2, 3) or x.shape[-1] != self.config.taps:
            raise ad.ShapeError(f"expected (..., T, {self.config.taps}) input, got {x.shape}")
        return self.forward(x).data * self.label_std + self.label_mean

    def meta(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config),
                "label_mean": self.label_mean.tolist(), "label_std": self.label_std.tolist()}


class MLPRegressor(_Regressor):
    """Per-row network: taps -> hidden x layers -> l_u -> hidden x layers -> 2,
    the layer sizes of MudiNet's encode_ue followed by its position head."""

    kind = "mlp"

    def __init__(self, config: BaselineConfig, seed: int = 0):
        self.config = c = config
        rng = np.random.default_rng(seed)
        p: dict[str, Tensor] = {}
        h = _mlp_params(p, rng, "ue", c.taps, c.hidden, c.layers)
        _dense(p, rng, "ue_mu", h, c.l_u, he=False)
        h = _mlp_params(p, rng, "pos", c.l_u, c.hidden, c.layers)
        _dense(p, rng, "pos.out", h, 2, he=False)
        self.params = p
        self.label_mean = np.zeros(2)
        self.label_std = np.ones(2)

    def forward(self, x):
        c = self.config
        z = _linear(self.params, "ue_mu", _mlp(self.params, "ue", x, c.layers))
        return _linear(self.params, "pos.out", _mlp(self.params, "pos", z, c.layers))


class TransformerRegressor(_Regressor):
    """Self-attention block over the whole trajectory, then a per-step head."""

    kind = "transformer"

    def __init__(self, config: BaselineConfig, seed: int = 0):
        self.config = c = config
        rng = np.random.default_rng(seed)
        p: dict[str, Tensor] = {}
        _attention_params(p, rng, c.taps, c.d)
        h = _mlp_params(p, rng, "pos", c.d, c.hidden, c.layers)
        _dense(p, rng, "pos.out", h, 2, he=False)
        self.params = p
        self.label_mean = np.zeros(2)
        self.label_std = np.ones(2)

    def forward(self, x):
        r = self_attention_forward(self.params, x)
        return _linear(self.params, "pos.out", _mlp(self.params, "pos", r, self.config.layers))


def make_baseline(config: BaselineConfig, seed: int = 0):
    return (MLPRegressor if config.kind == "mlp" else TransformerRegressor)(config, seed)


def single_time_view(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split (N, T, taps) samples into N*T single-step samples of shape (1, taps)."""
    n, t, taps = x.shape
    return x.reshape(n * t, 1, taps), y.reshape(n * t, 1, 2)


def train_baseline(split, config: BaselineConfig, epochs: int = 300, batch: int = 128, seed: int = 0,
                   train_config: TrainConfig | None = None, log=None):
    """Train a baseline; returns (model, history).

    The MLP trains on single-time rows with ``batch * T`` rows per step, so it
    takes the same number of optimiser steps over the same rows per epoch as
    the multi-time models.
    """
    if not split.train:
        raise ValueError("empty training split")
    x, y = split.arrays("train")
    rows = batch
    if config.kind == "mlp":
        rows = batch * x.shape[1]
        x, y = single_time_view(x, y)
    tc = train_config or TrainConfig()
    tc = TrainConfig(epochs, rows, tc.lr_base, tc.lr_floor, tc.lr_decay)
    init_seed, fit_seed = np.random.SeedSequence(seed).generate_state(2)
    model = make_baseline(config, int(init_seed))
    history = fit(model, x, y, tc, int(fit_seed), log)
    return model, history


def predict_baseline(model, x) -> np.ndarray:
    return model.predict(x)


def mean_predictor(split):
    """Constant predictor returning the training-label mean."""
    _, y = split.arrays("train")
    centre = y.reshape(-1, 2).mean(axis=0)

    def predict(x):
        x = np.asarray(x)
        return np.broadcast_to(centre, x.shape[:-1] + (2,)).copy()
    return predict
