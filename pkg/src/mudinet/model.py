"""MudiNet: temporal self-attention, three disentangled Gaussian latents
(specular environment z_s, diffuse environment z_d, UE features z_u), a
reconstruction decoder and a position head fed only by (z_u, z_s)."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, NonFiniteGradient, Tape, Tensor, adam_step, lr_schedule


class ConfigError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, last_good: dict, history: list):
        super().__init__(message)
        self.last_good = last_good
        self.history = history


@dataclass
class ModelConfig:
    taps: int = 300
    T: int = 110
    d: int = 64
    l_s: int = 16
    l_d: int = 16
    l_u: int = 32
    hidden: int = 128
    layers: int = 2
    eps_s: float = 0.1
    eps_d: float = 0.5
    eps_u: float = 1.0
    beta: float = 1.0
    logvar_init: float = -4.0

    def __post_init__(self):
        for name in ("taps", "T", "d", "l_s", "l_d", "l_u", "hidden", "layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not (self.eps_u > self.eps_d > self.eps_s > 0):
            raise ConfigError("prior std devs must satisfy eps_u > eps_d > eps_s > 0")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 128
    lr_base: float = 1e-4
    lr_floor: float = 5e-6
    lr_decay: float = 0.9


@dataclass
class LatentGaussian:
    mean: Tensor
    logvar: Tensor

    @property
    def variance(self) -> np.ndarray:
        return np.exp(_data(self.logvar))


@dataclass
class LossBreakdown:
    rec: Tensor
    kl_s: Tensor
    kl_d: Tensor
    kl_u: Tensor
    pos: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(_data(getattr(self, k))) for k in ("rec", "kl_s", "kl_d", "kl_u", "pos", "total")}


def _data(t) -> np.ndarray:
    return t.data if isinstance(t, Tensor) else np.asarray(t, dtype=float)


# -- parameter construction --------------------------------------------------

def _dense(params, rng, name, n_in, n_out, he=True, scale=None, bias=0.0):
    if scale is None:
        scale = math.sqrt((2.0 if he else 1.0) / n_in)
    params[f"{name}.W"] = Tensor(rng.normal(0.0, scale, (n_in, n_out)), True, f"{name}.W")
    params[f"{name}.b"] = Tensor(np.full(n_out, float(bias)), True, f"{name}.b")


def _latent_heads(params, rng, name, n_in, dim, prior_std, logvar_init):
    # means start at the prior's scale, variances at exp(logvar_init)
    _dense(params, rng, f"{name}_mu", n_in, dim, scale=prior_std / math.sqrt(n_in))
    _dense(params, rng, f"{name}_lv", n_in, dim, scale=0.01 / math.sqrt(n_in), bias=logvar_init)


def _mlp_params(params, rng, name, n_in, hidden, layers):
    for k in range(layers):
        _dense(params, rng, f"{name}.h{k}", n_in if k == 0 else hidden, hidden)
    return hidden


def _attention_params(params, rng, taps, d):
    for key in ("Wq", "Wk", "Wv"):
        params[f"att.{key}"] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(taps), (taps, d)), True, f"att.{key}")
    params["att.gamma"] = Tensor(np.ones(d), True, "att.gamma")
    params["att.beta"] = Tensor(np.zeros(d), True, "att.beta")


def _mlp(params, name, h, layers):
    for k in range(layers):
        h = ad.relu(h @ params[f"{name}.h{k}.W"] + params[f"{name}.h{k}.b"])
    return h


def _linear(params, name, h):
    return h @ params[f"{name}.W"] + params[f"{name}.b"]


# -- building blocks ---------------------------------------------------------

def self_attention_forward(params, x, return_weights: bool = False):
    """Temporal self-attention over rows of ``x`` (..., T, taps) followed by a
    residual connection on the value projection and layer normalisation."""
    x = ad._t(x)
    if x.shape[-2] == 0:
        raise ValueError("self-attention needs at least one time step")
    q = x @ params["att.Wq"]
    k = x @ params["att.Wk"]
    v = x @ params["att.Wv"]
    d = q.shape[-1]
    weights = ad.softmax_rows((q @ ad.swap_last(k)) * (1.0 / math.sqrt(d)))
    attended = weights @ v
    r = ad.layer_norm_rows(v + attended) * params["att.gamma"] + params["att.beta"]
    if return_weights:
        return r, weights, attended
    return r


def attention_weights(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Row-stochastic attention matrix softmax(Q K^T / sqrt(d))."""
    d = q.shape[-1]
    return ad.softmax_rows(Tensor(q @ np.swapaxes(k, -1, -2) / math.sqrt(d))).data


def encode_env(params, r, layers: int) -> tuple[LatentGaussian, LatentGaussian]:
    # pool with keepdims so an unbatched (T, d) input stays a matrix
    h = _mlp(params, "env", ad.mean(r, axis=-2, keepdims=True), layers)

    def head(name):
        z = _linear(params, name, h)
        return ad.reshape(z, z.shape[:-2] + z.shape[-1:])
    q_s = LatentGaussian(head("env.s_mu"), head("env.s_lv"))
    q_d = LatentGaussian(head("env.d_mu"), head("env.d_lv"))
    return q_s, q_d


def encode_ue(params, x, layers: int) -> LatentGaussian:
    h = _mlp(params, "ue", ad._t(x), layers)
    return LatentGaussian(_linear(params, "ue_mu", h), _linear(params, "ue_lv", h))


def _tile_time(z, steps: int):
    z = ad._t(z)
    shape = z.shape[:-1] + (1, z.shape[-1])
    return ad.broadcast_to(ad.reshape(z, shape), z.shape[:-1] + (steps, z.shape[-1]))


def decode(params, z_u, z_s, z_d, layers: int):
    z_u = ad._t(z_u)
    steps = z_u.shape[-2]
    h = ad.concat([z_u, _tile_time(z_s, steps), _tile_time(z_d, steps)], axis=-1)
    return _linear(params, "dec.out", _mlp(params, "dec", h, layers))


def position_head(params, z_u, z_s, layers: int):
    z_u = ad._t(z_u)
    h = ad.concat([z_u, _tile_time(z_s, z_u.shape[-2])], axis=-1)
    return _linear(params, "pos.out", _mlp(params, "pos", h, layers))


def reparameterize(q: LatentGaussian, rng=None, eta=None):
    if eta is None:
        eta = rng.standard_normal(q.mean.shape)
    return q.mean + ad.exp(q.logvar * 0.5) * eta


def kl_gaussian(q: LatentGaussian, prior_std: float):
    """KL(q || N(0, prior_std^2 I)), summed over the latent axis and averaged
    over any leading axes."""
    if not prior_std > 0:
        raise ValueError("prior std must be positive")
    inv = 1.0 / prior_std**2
    per = (ad.exp(q.logvar) * inv + ad.square(q.mean) * inv
           + (-1.0 + math.log(prior_std**2)) - q.logvar) * 0.5
    total = ad.sum(per, axis=-1)
    return ad.mean(total) if total.ndim else total


# -- model -------------------------------------------------------------------

class MudiNet:
    kind = "mudinet"

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        p: dict[str, Tensor] = {}
        _attention_params(p, rng, c.taps, c.d)
        h = _mlp_params(p, rng, "env", c.d, c.hidden, c.layers)
        _latent_heads(p, rng, "env.s", h, c.l_s, c.eps_s, c.logvar_init)
        _latent_heads(p, rng, "env.d", h, c.l_d, c.eps_d, c.logvar_init)
        h = _mlp_params(p, rng, "ue", c.taps, c.hidden, c.layers)
        _latent_heads(p, rng, "ue", h, c.l_u, c.eps_u, c.logvar_init)
        h = _mlp_params(p, rng, "dec", c.l_u + c.l_s + c.l_d, c.hidden, c.layers)
        _dense(p, rng, "dec.out", h, c.taps, he=False)
        h = _mlp_params(p, rng, "pos", c.l_u + c.l_s, c.hidden, c.layers)
        _dense(p, rng, "pos.out", h, 2, he=False)
        self.params = p
        self.label_mean = np.zeros(2)
        self.label_std = np.ones(2)

    def latents(self, x):
        c = self.config
        r = self_attention_forward(self.params, x)
        q_s, q_d = encode_env(self.params, r, c.layers)
        q_u = encode_ue(self.params, x, c.layers)
        return q_s, q_d, q_u

    def loss(self, x, labels, rng, eta=None) -> LossBreakdown:
        """Loss on a batch: x (B, T, taps) normalised inputs, labels (B, T, 2)
        standardised positions. ``eta`` optionally fixes the reparameterisation
        noise as a (eta_s, eta_d, eta_u) triple."""
        c = self.config
        x = ad._t(x)
        q_s, q_d, q_u = self.latents(x)
        if eta is None:
            eta = (rng.standard_normal(q_s.mean.shape), rng.standard_normal(q_d.mean.shape),
                   rng.standard_normal(q_u.mean.shape))
        z_s = reparameterize(q_s, eta=eta[0])
        z_d = reparameterize(q_d, eta=eta[1])
        z_u = reparameterize(q_u, eta=eta[2])
        x_hat = decode(self.params, z_u, z_s, z_d, c.layers)
        p_hat = position_head(self.params, z_u, z_s, c.layers)
        rec = ad.mse(x_hat, x)
        kl_s = kl_gaussian(q_s, c.eps_s)
        kl_d = kl_gaussian(q_d, c.eps_d)
        kl_u = kl_gaussian(q_u, c.eps_u)
        pos = ad.mean(ad.sum(ad.square(p_hat - ad._t(labels)), axis=-1))
        total = rec + (kl_s + kl_d + kl_u) * c.beta + pos
        return LossBreakdown(rec, kl_s, kl_d, kl_u, pos, total)

    def predict_standardized(self, x) -> np.ndarray:
        c = self.config
        q_s, _, q_u = self.latents(x)
        return position_head(self.params, q_u.mean, q_s.mean, c.layers).data

    def predict(self, x) -> np.ndarray:
        """Positions in metres from latent means; x is (T, taps) or (B, T, taps)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (2, 3) or x.shape[-1] != self.config.taps:
            raise ad.ShapeError(f"expected (..., T, {self.config.taps}) input, got {x.shape}")
        return self.predict_standardized(x) * self.label_std + self.label_mean

    def meta(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config),
                "label_mean": self.label_mean.tolist(), "label_std": self.label_std.tolist()}


def snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def restore(params: dict[str, Tensor], values: dict[str, np.ndarray]) -> None:
    for k, v in values.items():
        params[k].data = np.array(v, dtype=np.float64)


def fit(model, x: np.ndarray, y: np.ndarray, train: TrainConfig, seed: int = 0,
        log=None) -> list[dict]:
    """Minibatch Adam on ``model.loss``; returns one history row per epoch.

    ``x`` is (N, T, taps); ``y`` is (N, T, 2) in metres and is standardised
    internally with statistics stored on the model.
    """
    if len(x) == 0:
        raise ValueError("empty training set")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    model.label_mean = y.reshape(-1, 2).mean(axis=0)
    std = y.reshape(-1, 2).std(axis=0)
    model.label_std = np.where(std > 0, std, 1.0)
    ys = (y - model.label_mean) / model.label_std
    shuffle_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    noise_rng = np.random.default_rng(noise_ss)
    params = list(model.params.values())
    state = AdamState()
    history: list[dict] = []
    last_good = snapshot(model.params)
    n = len(x)
    for epoch in range(train.epochs):
        lr = lr_schedule(epoch, train.lr_base, train.lr_floor, train.lr_decay)
        order = shuffle_rng.permutation(n)
        sums = dict.fromkeys(("rec", "kl_s", "kl_d", "kl_u", "pos", "total"), 0.0)
        t0 = time.perf_counter()
        for start in range(0, n, train.batch_size):
            idx = order[start:start + train.batch_size]
            for p in params:
                p.grad = None
            with Tape() as tape:
                lb = model.loss(x[idx], ys[idx], noise_rng)
                vals = lb.values()
                if not all(math.isfinite(v) for v in vals.values()):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}: {vals}", last_good, history)
                tape.backward(lb.total)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            try:
                adam_step(params, grads, state, lr)
            except NonFiniteGradient as exc:
                restore(model.params, last_good)
                raise TrainingDiverged(f"epoch {epoch}: {exc}", last_good, history) from exc
            for k, v in vals.items():
                sums[k] += v * len(idx)
        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}, "lr": lr}
        history.append(row)
        last_good = snapshot(model.params)
        if log is not None:
            log(f"epoch {epoch:3d} total {row['total']:.5f} pos {row['pos']:.5f} "
                f"({time.perf_counter() - t0:.2f}s)")
    return history


def train(split, config: ModelConfig | None = None, epochs: int = 300, batch_size: int = 128,
          master_seed: int = 0, train_config: TrainConfig | None = None, log=None):
    """Train MudiNet on ``split.train``; returns (model, history)."""
    if not split.train:
        raise ValueError("empty training split")
    x, y = split.arrays("train")
    if config is None:
        config = ModelConfig(taps=x.shape[-1], T=x.shape[1])
    tc = train_config or TrainConfig()
    tc = TrainConfig(epochs, batch_size, tc.lr_base, tc.lr_floor, tc.lr_decay)
    init_seed, fit_seed = np.random.SeedSequence(master_seed).generate_state(2)
    model = MudiNet(config, int(init_seed))
    history = fit(model, x, y, tc, int(fit_seed), log)
    return model, history


def predict(model, x) -> np.ndarray:
    return model.predict(x)


HISTORY_COLUMNS = ("epoch", "rec", "kl_s", "kl_d", "kl_u", "pos", "total", "lr")


def write_history(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: row.get(k, 0.0) for k in HISTORY_COLUMNS})


def save_model(model, path) -> None:
    ad.save_params(path, model.params, model.meta())


def load_model(path):
    from .baselines import MLPRegressor, TransformerRegressor, BaselineConfig

    values, meta = ad.load_params(path)
    kind = meta.get("kind")
    if kind == "mudinet":
        model = MudiNet(ModelConfig(**meta["config"]))
    elif kind in ("mlp", "transformer"):
        cls = MLPRegressor if kind == "mlp" else TransformerRegressor
        model = cls(BaselineConfig(**meta["config"]))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    restore(model.params, values)
    model.label_mean = np.array(meta["label_mean"])
    model.label_std = np.array(meta["label_std"])
    return model
