"""Sweep orchestration: one shared dataset per (setting, seed), one training
cell per (setting, method, seed), results merged in cell order."""
from __future__ import annotations

import csv
import hashlib
import json
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, mean_predictor, train_baseline
from .channel import ChannelParams
from .config import ExperimentConfig
from .dataset import generate_samples, load_dataset, normalize_split, save_dataset
from .geometry import Scene, load_scene, two_room_scene
from .metrics import MetricsReport, compute_metrics
from .model import train

METHODS = ("mudinet", "mlp", "transformer", "mean")
RESULT_COLUMNS = ("setting", "method", "seed", "me_m", "rmse_m", "epochs", "wall_s", "error")


def resolve_scene(name) -> Scene:
    if str(name) in ("two-room", "two_room"):
        return two_room_scene()
    path = Path(name)
    if not path.exists():
        raise FileNotFoundError(f"scene file {path} does not exist")
    return load_scene(path)


def cell_params(config: ExperimentConfig, setting: float) -> tuple[ChannelParams, float | None]:
    """Channel parameters and target SNR for one sweep setting."""
    if config.sweep == "snr":
        return config.channel, float(setting)
    return config.channel.with_(bandwidth_hz=float(setting)), config.snr_db


def build_dataset(config: ExperimentConfig, scene: Scene, setting: float, seed: int, path) -> str:
    params, snr = cell_params(config, setting)
    samples = generate_samples(scene, params, snr, config.dataset_size, seed, config.T)
    split = normalize_split(samples, config.train_frac, np.random.default_rng(seed),
                            params.tap_spacing_s)
    save_dataset(split, path)
    return file_sha256(path)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class CellResult:
    setting: float
    method: str
    seed: int
    report: MetricsReport | None
    epochs: int
    wall_s: float
    error: str = ""

    def row(self) -> dict:
        r = self.report
        return {"setting": self.setting, "method": self.method, "seed": self.seed,
                "me_m": "" if r is None else repr(r.me_m),
                "rmse_m": "" if r is None else repr(r.rmse_m),
                "epochs": self.epochs, "wall_s": f"{self.wall_s:.3f}", "error": self.error}


def fit_method(method: str, split, config: ExperimentConfig, seed: int):
    """Train ``method`` on ``split.train``; returns a predict(x) callable."""
    x, _ = split.arrays("train")
    taps = x.shape[-1]
    if method == "mean":
        return mean_predictor(split)
    if method == "mudinet":
        model, _ = train(split, config.model_config(taps), config.epochs, config.batch, seed, config.train)
        return model.predict
    if method in ("mlp", "transformer"):
        bc = BaselineConfig.mirroring(method, config.model_config(taps))
        model, _ = train_baseline(split, bc, config.epochs, config.batch, seed, config.train)
        return model.predict
    raise ValueError(f"unknown method {method!r}")


def run_cell(config: ExperimentConfig, setting: float, method: str, seed: int, dataset_path) -> CellResult:
    t0 = time.perf_counter()
    epochs = 0 if method == "mean" else config.epochs
    try:
        split = load_dataset(dataset_path)
        predict = fit_method(method, split, config, seed)
        x, y = split.arrays("test")
        report = compute_metrics(predict(x), y)
        return CellResult(setting, method, seed, report, epochs, time.perf_counter() - t0)
    except Exception as exc:  # recorded per row; the sweep carries on
        msg = f"{type(exc).__name__}: {exc}"
        return CellResult(setting, method, seed, None, epochs, time.perf_counter() - t0,
                          msg.replace("\n", " "))


def _run_cell_args(args):
    return run_cell(*args)


def _dataset_name(config: ExperimentConfig, setting: float, seed: int) -> str:
    tag = f"snr{setting:g}" if config.sweep == "snr" else f"bw{setting / 1e6:g}MHz"
    return f"dataset_{tag}_seed{seed}.mdnt"


def run_sweep(config: ExperimentConfig, out_dir, jobs: int = 1, log=None) -> list[CellResult]:
    """Run every (setting, method, seed) cell and write results.csv, cdf.csv
    and a dataset manifest with sha256 hashes into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for m in config.methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    scene = resolve_scene(config.scene)

    manifest = {}
    cells = []
    for setting in config.settings:
        for seed in config.seeds:
            path = out / _dataset_name(config, setting, seed)
            try:
                manifest[path.name] = build_dataset(config, scene, setting, seed, path)
            except Exception:
                if log:
                    log(traceback.format_exc())
                manifest[path.name] = None
            for method in config.methods:
                cells.append((config, setting, method, seed, path))
    (out / "datasets.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_cell_args, cells))
    else:
        results = []
        for cell in cells:
            results.append(run_cell(*cell))
            if log:
                r = results[-1]
                log(f"{r.method} setting={r.setting:g} seed={r.seed} "
                    + (f"ME={r.report.me_m:.3f} m" if r.report else f"failed: {r.error}"))
    write_results(out / "results.csv", results)
    write_cdf(out / "cdf.csv", results)
    return results


def write_results(path, results: list[CellResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        for r in results:
            w.writerow(r.row())


def write_cdf(path, results: list[CellResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("setting", "method", "seed", "error_m", "cdf"))
        for r in results:
            if r.report is None:
                continue
            for e, p in r.report.cdf:
                w.writerow((r.setting, r.method, r.seed, repr(e), repr(p)))


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(results: list[CellResult]) -> dict[tuple[float, str], float]:
    """Mean ME across seeds per (setting, method), skipping failed cells."""
    acc: dict[tuple[float, str], list[float]] = {}
    for r in results:
        if r.report is not None:
            acc.setdefault((r.setting, r.method), []).append(r.report.me_m)
    return {k: float(np.mean(v)) for k, v in acc.items()}
