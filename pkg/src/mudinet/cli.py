"""Command line entry point: ``mudinet gen-scene|gen-dataset|train|eval|sweep``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, train_baseline
from .config import ExperimentConfig, load_config
from .dataset import generate_samples, load_dataset, normalize_split, save_dataset
from .experiment import resolve_scene, run_sweep, summarize
from .geometry import save_scene, two_room_scene
from .metrics import compute_metrics
from .model import load_model, save_model, train, write_history


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MUDINET_SEED")
    return int(env) if env else 0


def _config(args) -> ExperimentConfig:
    return load_config(args.config) if args.config else ExperimentConfig()


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_gen_scene(args) -> int:
    out = Path(args.out)
    if out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "two_room.scene"
    save_scene(two_room_scene(), out)
    print(out)
    return 0


def cmd_gen_dataset(args) -> int:
    cfg = _config(args)
    scene = resolve_scene(args.scene or cfg.scene)
    count = args.count or cfg.dataset_size
    length = args.length or cfg.T
    seed = _seed(args)
    snr = args.snr if args.snr is not None else cfg.snr_db
    samples = generate_samples(scene, cfg.channel, snr, count, seed, length)
    split = normalize_split(samples, cfg.train_frac, np.random.default_rng(seed),
                            cfg.channel.tap_spacing_s)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(split, out)
    print(out)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    split = load_dataset(args.dataset)
    x, _ = split.arrays("train")
    mc = cfg.model_config(x.shape[-1])
    seed = _seed(args)
    log = None if args.quiet else _log
    if args.method == "mudinet":
        model, history = train(split, mc, cfg.epochs, cfg.batch, seed, cfg.train, log)
    else:
        bc = BaselineConfig.mirroring(args.method, mc)
        model, history = train_baseline(split, bc, cfg.epochs, cfg.batch, seed, cfg.train, log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / f"{args.method}.mdpw")
    write_history(out / f"{args.method}_history.csv", history)
    print(out / f"{args.method}.mdpw")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    split = load_dataset(args.dataset)
    x, y = split.arrays("test")
    report = compute_metrics(model.predict(x), y)
    summary = {"me_m": report.me_m, "rmse_m": report.rmse_m, "n": int(y.size // 2)}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps({**summary, "cdf": report.cdf}))
    print(json.dumps(summary))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.seed is not None or os.environ.get("MUDINET_SEED"):
        cfg.seeds = [_seed(args)]
    results = run_sweep(cfg, args.out, args.jobs, None if args.quiet else _log)
    for (setting, method), me in sorted(summarize(results).items()):
        print(f"{setting:g}\t{method}\t{me:.4f}")
    return 1 if any(r.error for r in results) else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mudinet")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="key=value experiment config")
        sp.add_argument("--seed", type=int, help="master seed (falls back to $MUDINET_SEED)")
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--quiet", action="store_true")

    sp = sub.add_parser("gen-scene", help="write the built-in two-room scene file")
    common(sp)
    sp.set_defaults(func=cmd_gen_scene)

    sp = sub.add_parser("gen-dataset", help="simulate trajectories and CIR sequences")
    common(sp)
    sp.add_argument("--scene")
    sp.add_argument("--snr", type=float)
    sp.add_argument("--count", type=int)
    sp.add_argument("--length", type=int, help="trajectory length T")
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("train", help="train one method on a dataset file")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--method", default="mudinet", choices=("mudinet", "mlp", "transformer"))
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a trained model on a dataset's test split")
    common(sp, out_required=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="SNR or bandwidth sweep across methods and seeds")
    common(sp)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
