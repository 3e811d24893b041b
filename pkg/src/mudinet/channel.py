"""Power-delay-profile synthesis: specular paths, diffuse scatterers, noise and
first-path SNR control."""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .geometry import (
    GeometryError,
    Point2D,
    Scene,
    ScattererRegion,
    ScattererSet,
    as_point,
    bistatic_lengths,
    sample_scatterers,
    specular_paths,
)

POWER_CONVENTIONS = ("friis-total", "bistatic-product")
CIR_MAGIC = b"MDNTCIR1"


class TapRangeError(ValueError):
    pass


class NoPathError(GeometryError):
    pass


@dataclass(frozen=True)
class ChannelParams:
    bandwidth_hz: float = 100e6
    sampling_factor: float = 4.0
    reflection_factor: float = 0.25
    carrier_hz: float = 2.4e9
    c: float = 3.0e8
    tx_power: float = 1.0
    background_noise: float = 1e-10
    spread_gain_db: float = 20.0
    max_taps: int = 300
    power_convention: str = "friis-total"
    p_obs: float = 0.8
    max_order: int = 2
    occlusion: bool = True
    noise: bool = True
    n_scatterers: int = 256
    scatterer_seed: int = 0

    def __post_init__(self):
        for name in ("bandwidth_hz", "sampling_factor", "reflection_factor", "carrier_hz",
                     "c", "tx_power", "background_noise"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_taps < 1:
            raise ValueError("max_taps must be >= 1")
        if not 0.0 <= self.p_obs <= 1.0:
            raise ValueError("p_obs must lie in [0, 1]")
        if self.power_convention not in POWER_CONVENTIONS:
            raise ValueError(f"power_convention must be one of {POWER_CONVENTIONS}")

    @property
    def wavelength(self) -> float:
        return self.c / self.carrier_hz

    @property
    def tap_spacing_s(self) -> float:
        return 1.0 / (self.bandwidth_hz * self.sampling_factor)

    @property
    def tap_length_m(self) -> float:
        return self.c * self.tap_spacing_s

    def with_(self, **kw) -> ChannelParams:
        return replace(self, **kw)


# key=value names follow the simulation parameter table
PARAM_KEYS = {
    "bandwidth": "bandwidth_hz",
    "sampling_factor": "sampling_factor",
    "reflection_factor": "reflection_factor",
    "radio_frequency": "carrier_hz",
    "speed_of_light": "c",
    "transmit_power": "tx_power",
    "background_noise": "background_noise",
    "spread_gain": "spread_gain_db",
    "max_taps": "max_taps",
    "power_convention": "power_convention",
    "p_obs": "p_obs",
    "max_order": "max_order",
    "occlusion": "occlusion",
    "noise": "noise",
    "n_scatterers": "n_scatterers",
    "scatterer_seed": "scatterer_seed",
}


def params_from_mapping(values: dict) -> ChannelParams:
    types = {f.name: f.type for f in fields(ChannelParams)}
    kw = {}
    for key, raw in values.items():
        name = PARAM_KEYS.get(key, key if key in types else None)
        if name is None:
            continue
        default = getattr(ChannelParams, name)
        if isinstance(default, bool):
            kw[name] = str(raw).strip().lower() in ("1", "true", "yes", "on")
        elif isinstance(default, int):
            kw[name] = int(float(raw))
        elif isinstance(default, float):
            kw[name] = float(raw)
        else:
            kw[name] = str(raw).strip()
    return ChannelParams(**kw)


@dataclass(frozen=True)
class PathContribution:
    tap_index: int
    power: float
    kind: str  # "direct" | "specular" | "diffuse"


@dataclass
class CIRVector:
    taps: np.ndarray
    tap_spacing_s: float

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=float)
        if np.any(self.taps < 0):
            raise ValueError("tap powers must be nonnegative")

    def __len__(self) -> int:
        return len(self.taps)


def tap_index(path_length: float, params: ChannelParams) -> int:
    if path_length < 0:
        raise ValueError("path length must be nonnegative")
    k = int(math.floor(path_length / params.tap_length_m + 0.5))
    if k >= params.max_taps:
        raise TapRangeError(f"path length {path_length:.3f} m maps to tap {k} >= {params.max_taps}")
    return k


def path_power(total_length: float, segment_lengths, order: int, params: ChannelParams,
               tx_power: float | None = None) -> float:
    segment_lengths = tuple(segment_lengths)
    if order != len(segment_lengths) - 1:
        raise ValueError("order must equal len(segment_lengths) - 1")
    if total_length <= 0 or min(segment_lengths) <= 0:
        raise ValueError("path lengths must be positive")
    p = params.tx_power if tx_power is None else tx_power
    gain = (params.wavelength / (4.0 * math.pi)) ** 2
    atten = params.reflection_factor**order
    if params.power_convention == "friis-total":
        return p * atten * gain / total_length**2
    return p * atten * gain / math.prod(segment_lengths)


def diffuse_profile(scatterers: ScattererSet, tx, ue, params: ChannelParams, rng,
                    tx_power: float | None = None) -> np.ndarray:
    """Tap-wise diffuse power; each scatterer is observed with probability p_obs."""
    out = np.zeros(params.max_taps)
    if len(scatterers) == 0 or params.p_obs == 0.0:
        return out
    observed = rng.random(len(scatterers)) < params.p_obs
    xy = scatterers.positions[observed]
    w = scatterers.weights[observed]
    r_d, r_t = bistatic_lengths(tx, ue, xy)
    singular = (r_d < 1e-9) | (r_t < 1e-9)
    if singular.any():
        warnings.warn(f"skipping {int(singular.sum())} scatterer(s) coincident with tx/ue")
        keep = ~singular
        r_d, r_t, w = r_d[keep], r_t[keep], w[keep]
    p = params.tx_power if tx_power is None else tx_power
    power = w * params.reflection_factor**2 * p * (params.wavelength / (4 * math.pi)) ** 2 / (r_d * r_t)
    idx = np.floor((r_d + r_t) / params.tap_length_m + 0.5).astype(np.int64)
    ok = idx < params.max_taps
    np.add.at(out, idx[ok], power[ok])
    return out


def diffuse_contributions(scatterers, tx, ue, params: ChannelParams, rng,
                          tx_power: float | None = None) -> list[PathContribution]:
    if not isinstance(scatterers, ScattererSet):
        scatterers = ScattererSet.from_points(list(scatterers))
    out = []
    if len(scatterers) == 0 or params.p_obs == 0.0:
        return out
    observed = rng.random(len(scatterers)) < params.p_obs
    p = params.tx_power if tx_power is None else tx_power
    unit = params.reflection_factor**2 * p * (params.wavelength / (4 * math.pi)) ** 2
    for k in np.flatnonzero(observed):
        pt = scatterers[int(k)]
        r_d, r_t = as_point(tx).dist(pt.pos), as_point(ue).dist(pt.pos)
        if r_d < 1e-9 or r_t < 1e-9:
            warnings.warn("skipping scatterer coincident with tx/ue")
            continue
        try:
            idx = tap_index(r_d + r_t, params)
        except TapRangeError:
            continue
        out.append(PathContribution(idx, pt.weight * unit / (r_d * r_t), "diffuse"))
    return out


def specular_contributions(scene: Scene, ue, params: ChannelParams,
                           tx_power: float | None = None) -> list[PathContribution]:
    out = []
    for path in specular_paths(scene, ue, params.max_order, params.occlusion):
        try:
            idx = tap_index(path.total_length, params)
        except TapRangeError:
            continue
        power = path_power(path.total_length, path.segment_lengths, path.order, params, tx_power)
        out.append(PathContribution(idx, power, "direct" if path.order == 0 else "specular"))
    return out


@lru_cache(maxsize=64)
def _region_scatterers(region: ScattererRegion, n: int, seed: int) -> ScattererSet:
    return sample_scatterers(region, n, seed)


def scene_scatterers(scene: Scene, params: ChannelParams) -> list[ScattererSet]:
    """Fixed scatterer realisation of every region of ``scene``."""
    return [_region_scatterers(r, params.n_scatterers, params.scatterer_seed + k)
            for k, r in enumerate(scene.regions)]


def cir_components(scene: Scene, ue, params: ChannelParams, rng, include_diffuse: bool = True,
                   tx_power: float | None = None, scatterers=None):
    """Specular, diffuse and noise tap-power vectors (their sum is the CIR)."""
    ue = as_point(ue)
    spec = np.zeros(params.max_taps)
    for c in specular_contributions(scene, ue, params, tx_power):
        spec[c.tap_index] += c.power
    diff = np.zeros(params.max_taps)
    if include_diffuse and scene.regions:
        sets = scatterers if scatterers is not None else scene_scatterers(scene, params)
        for s in sets:
            diff += diffuse_profile(s, scene.tx, ue, params, rng, tx_power)
    if params.noise:
        noise = rng.exponential(params.background_noise, params.max_taps)
    else:
        noise = np.zeros(params.max_taps)
    return spec, diff, noise


def synthesize_cir(scene: Scene, ue, params: ChannelParams, rng, include_diffuse: bool = True,
                   tx_power: float | None = None, scatterers=None) -> CIRVector:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    spec, diff, noise = cir_components(scene, ue, params, rng, include_diffuse, tx_power, scatterers)
    return CIRVector(spec + diff + noise, params.tap_spacing_s)


def first_path_gain(scene: Scene, start, params: ChannelParams) -> tuple[int, float]:
    """Tap index and unit-transmit-power specular tap power of the first path."""
    paths = specular_paths(scene, start, params.max_order, params.occlusion)
    if not paths:
        raise NoPathError(f"no valid path from tx to {as_point(start)}")
    fp = tap_index(paths[0].total_length, params)
    gain = sum(c.power for c in specular_contributions(scene, start, params, tx_power=1.0)
               if c.tap_index == fp)
    return fp, gain


def solve_tx_power(scene: Scene, start, target_snr_db: float, params: ChannelParams) -> float:
    _, gain = first_path_gain(scene, start, params)
    required = required_fp_power(target_snr_db, params)
    return required / gain


def required_fp_power(target_snr_db: float, params: ChannelParams) -> float:
    return params.background_noise * 10.0 ** ((target_snr_db + params.spread_gain_db) / 10.0)


def measure_snr_db(scene: Scene, start, params: ChannelParams, tx_power: float) -> float:
    """First-path SNR of the noise-free specular channel at ``tx_power``."""
    fp, _ = first_path_gain(scene, start, params)
    quiet = params.with_(noise=False)
    cir = synthesize_cir(scene, start, quiet, np.random.default_rng(0), include_diffuse=False,
                         tx_power=tx_power)
    return 10.0 * math.log10(cir.taps[fp] / params.background_noise) - params.spread_gain_db


# -- CIR dump ----------------------------------------------------------------

def save_cirs(path, cirs) -> None:
    """Write one or more CIRs sharing a tap grid: 8-byte magic, u32 tap count,
    f64 tap spacing, then little-endian f32 rows."""
    if isinstance(cirs, CIRVector):
        cirs = [cirs]
    cirs = list(cirs)
    if not cirs:
        raise ValueError("nothing to save")
    n, spacing = len(cirs[0]), cirs[0].tap_spacing_s
    if any(len(c) != n or c.tap_spacing_s != spacing for c in cirs):
        raise ValueError("CIRs must share tap count and spacing")
    rows = np.stack([c.taps for c in cirs]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(CIR_MAGIC + struct.pack("<Id", n, spacing))
        fh.write(rows.tobytes())


def load_cirs(path) -> list[CIRVector]:
    blob = Path(path).read_bytes()
    head = len(CIR_MAGIC) + 12
    if len(blob) < head or blob[:8] != CIR_MAGIC:
        raise ValueError("not a CIR dump")
    n, spacing = struct.unpack_from("<Id", blob, 8)
    body = blob[head:]
    if n == 0 or len(body) % (4 * n):
        raise ValueError("CIR dump truncated")
    rows = np.frombuffer(body, dtype="<f4").reshape(-1, n)
    return [CIRVector(r.astype(float), spacing) for r in rows]


__all__ = [
    "ChannelParams", "CIRVector", "PathContribution", "TapRangeError", "NoPathError",
    "tap_index", "path_power", "diffuse_contributions", "diffuse_profile", "synthesize_cir",
    "cir_components", "solve_tx_power", "measure_snr_db", "first_path_gain", "scene_scatterers",
    "params_from_mapping", "save_cirs", "load_cirs", "Point2D",
]
