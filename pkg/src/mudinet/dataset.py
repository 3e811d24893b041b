"""Random-walk trajectories, labelled multi-time CIR samples, min-max
normalisation, train/test split and the dataset container."""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ChannelParams, synthesize_cir, solve_tx_power, scene_scatterers
from .geometry import GeometryError, Point2D, Scene, segment_blocked

DATASET_MAGIC = b"MDNT"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIddd")
_MASK64 = (1 << 64) - 1


class DatasetFormatError(ValueError):
    pass


class DatasetVersionError(DatasetFormatError):
    pass


class DatasetTruncatedError(DatasetFormatError):
    pass


class DatasetDimensionError(DatasetFormatError):
    pass


def splitmix64(i: int) -> int:
    z = (i + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, i: int) -> int:
    """Per-trajectory seed: master XOR splitmix64(i)."""
    return (int(master) ^ splitmix64(i)) & _MASK64


@dataclass
class Trajectory:
    positions: np.ndarray  # (T, 2) metres
    headings: np.ndarray  # (T,) radians, heading of the step leaving each position
    speed: float = 1.0

    def __len__(self) -> int:
        return len(self.positions)

    def points(self) -> list[Point2D]:
        return [Point2D(float(x), float(y)) for x, y in self.positions]


@dataclass
class Sample:
    x: np.ndarray  # (T, taps)
    labels: np.ndarray  # (T, 2)
    snr_db: float = math.nan
    seed: int = 0


@dataclass
class DatasetSplit:
    train: list[Sample]
    test: list[Sample]
    norm_min: float
    norm_max: float
    tap_spacing_s: float = 2.5e-9

    def arrays(self, which: str = "train") -> tuple[np.ndarray, np.ndarray]:
        samples = self.train if which == "train" else self.test
        x = np.stack([s.x for s in samples]).astype(np.float64)
        y = np.stack([s.labels for s in samples]).astype(np.float64)
        return x, y


def _step_blocked(scene: Scene, p: Point2D, q: Point2D) -> bool:
    if not scene.in_bounds(q):
        return True
    return segment_blocked(p, q, scene.walls) or any(
        _touches(w, q) for w in scene.walls)


def _touches(wall, q: Point2D, tol: float = 1e-9) -> bool:
    ax, ay, bx, by = wall.a.x, wall.a.y, wall.b.x, wall.b.y
    dx, dy = bx - ax, by - ay
    t = min(1.0, max(0.0, ((q.x - ax) * dx + (q.y - ay) * dy) / (dx * dx + dy * dy)))
    return math.hypot(ax + t * dx - q.x, ay + t * dy - q.y) < tol


def generate_trajectory(scene: Scene, rng, length: int = 110, speed: float = 1.0,
                        start=None, heading: float | None = None, increments=None) -> Trajectory | None:
    """Constant-speed random walk sampled at 1 Hz.

    Returns None (rejection) when a step would cross or touch a wall or leave
    the scene bounds. ``start``, ``heading`` and ``increments`` override the
    random draws.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    x0, y0, x1, y1 = scene.bounds
    if start is None:
        start = (rng.uniform(x0, x1), rng.uniform(y0, y1))
    if heading is None:
        heading = rng.uniform(0.0, 2.0 * math.pi)
    if increments is None:
        increments = rng.uniform(-math.pi / 2, math.pi / 2, size=max(length - 2, 0))
    increments = np.asarray(increments, dtype=float)
    cur = Point2D(float(start[0]), float(start[1]))
    if not scene.in_bounds(cur) or any(_touches(w, cur) for w in scene.walls):
        return None
    pos = np.empty((length, 2))
    heads = np.empty(length)
    pos[0] = cur.x, cur.y
    h = float(heading)
    for k in range(1, length):
        if k >= 2:
            h += float(increments[k - 2])
        heads[k - 1] = h
        nxt = Point2D(cur.x + speed * math.cos(h), cur.y + speed * math.sin(h))
        if _step_blocked(scene, cur, nxt):
            return None
        pos[k] = nxt.x, nxt.y
        cur = nxt
    heads[length - 1] = h
    return Trajectory(pos, np.mod(heads, 2.0 * math.pi), speed)


def build_sample(trajectory: Trajectory, scene: Scene, params: ChannelParams,
                 target_snr_db: float | None, rng, seed: int = 0,
                 include_diffuse: bool = True) -> Sample:
    """Log power-delay profiles along a trajectory (not yet normalised).

    With ``target_snr_db`` set, the transmit power is chosen so the first path
    at the trajectory start hits that SNR; otherwise the configured power is
    used.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    start = trajectory.points()[0]
    if target_snr_db is None or (isinstance(target_snr_db, float) and math.isnan(target_snr_db)):
        p_tx, snr = params.tx_power, math.nan
    else:
        p_tx, snr = solve_tx_power(scene, start, target_snr_db, params), float(target_snr_db)
    sets = scene_scatterers(scene, params) if include_diffuse else None
    rows = []
    for p in trajectory.points():
        cir = synthesize_cir(scene, p, params, rng, include_diffuse, tx_power=p_tx, scatterers=sets)
        rows.append(np.log10(cir.taps + params.background_noise))
    return Sample(np.array(rows), trajectory.positions.copy(), snr, seed)


def generate_samples(scene: Scene, params: ChannelParams, snr_db: float | None, count: int,
                     master_seed: int, length: int = 110, max_attempts: int = 200_000) -> list[Sample]:
    """``count`` accepted samples; sample i is drawn from stream derive_seed(master, i)."""
    out = []
    for i in range(count):
        seed = derive_seed(master_seed, i)
        rng = np.random.default_rng(seed)
        for _ in range(max_attempts):
            traj = generate_trajectory(scene, rng, length)
            if traj is None:
                continue
            try:
                out.append(build_sample(traj, scene, params, snr_db, rng, seed))
            except GeometryError:
                continue
            break
        else:
            raise RuntimeError(f"no acceptable trajectory for sample {i} after {max_attempts} attempts")
    return out


def normalize_split(samples: list[Sample], train_frac: float = 0.8, rng=None,
                    tap_spacing_s: float = 2.5e-9) -> DatasetSplit:
    if len(samples) < 2:
        raise ValueError("need at least two samples to split")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n = len(samples)
    n_train = min(max(int(round(train_frac * n)), 1), n - 1)
    order = rng.permutation(n)
    train = [samples[i] for i in order[:n_train]]
    test = [samples[i] for i in order[n_train:]]
    lo = float(min(s.x.min() for s in train))
    hi = float(max(s.x.max() for s in train))
    if hi == lo:
        warnings.warn("constant dataset: all normalised values set to 0")

    def scale(s: Sample) -> Sample:
        if hi == lo:
            x = np.zeros_like(s.x)
        else:
            x = np.clip((s.x - lo) / (hi - lo), 0.0, 1.0)
        return Sample(x.astype(np.float32), np.asarray(s.labels, dtype=np.float32), s.snr_db, s.seed)

    return DatasetSplit([scale(s) for s in train], [scale(s) for s in test], lo, hi, tap_spacing_s)


def save_dataset(split: DatasetSplit, path) -> None:
    samples = split.train + split.test
    if not samples:
        raise ValueError("refusing to save an empty dataset")
    T, taps = samples[0].x.shape
    for s in samples:
        if s.x.shape != (T, taps) or s.labels.shape != (T, 2):
            raise DatasetDimensionError("samples disagree on (T, taps)")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(samples), len(split.train),
                              T, taps, split.tap_spacing_s, split.norm_min, split.norm_max))
        for s in samples:
            fh.write(np.ascontiguousarray(s.x, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(s.labels, dtype="<f4").tobytes())
            fh.write(struct.pack("<dQ", float(s.snr_db), int(s.seed) & _MASK64))


def load_dataset(path) -> DatasetSplit:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise DatasetTruncatedError("file shorter than the header")
    magic, version, count, n_train, T, taps, spacing, lo, hi = _HEADER.unpack_from(blob)
    if magic != DATASET_MAGIC or version != DATASET_VERSION:
        raise DatasetVersionError(f"unsupported container {magic!r} v{version}")
    if n_train > count or T == 0 or taps == 0:
        raise DatasetDimensionError("inconsistent header dimensions")
    per = 4 * T * taps + 4 * T * 2 + 16
    body = len(blob) - _HEADER.size
    if body < per * count:
        raise DatasetTruncatedError(f"expected {per * count} payload bytes, found {body}")
    if body > per * count:
        raise DatasetDimensionError("payload larger than header dimensions imply")
    samples = []
    off = _HEADER.size
    for _ in range(count):
        x = np.frombuffer(blob, "<f4", T * taps, off).reshape(T, taps).astype(np.float32)
        off += 4 * T * taps
        y = np.frombuffer(blob, "<f4", T * 2, off).reshape(T, 2).astype(np.float32)
        off += 8 * T
        snr, seed = struct.unpack_from("<dQ", blob, off)
        off += 16
        samples.append(Sample(x, y, snr, seed))
    return DatasetSplit(samples[:n_train], samples[n_train:], lo, hi, spacing)
