"""Desk-scale SNR sweep: MudiNet, MLP, transformer and the mean predictor at
-10, 0 and 20 dB on the two-room map, three seeds.

    python scripts/run_snr_sweep.py --out runs/snr [--jobs 2]
"""
import argparse
import sys
from pathlib import Path

from mudinet.config import load_config
from mudinet.experiment import run_sweep, summarize

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=ROOT / "configs" / "snr_scaled.cfg")
    p.add_argument("--out", default=ROOT / "runs" / "snr")
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args(argv)

    cfg = load_config(args.config)
    results = run_sweep(cfg, args.out, args.jobs, log=lambda m: print(m, file=sys.stderr, flush=True))
    me = summarize(results)
    methods = [m for m in cfg.methods if any(k[1] == m for k in me)]
    print("snr_db\t" + "\t".join(methods))
    for s in cfg.settings:
        print(f"{s:g}\t" + "\t".join(f"{me.get((s, m), float('nan')):.3f}" for m in methods))
    print(f"results in {Path(args.out) / 'results.csv'}")
    return 1 if any(r.error for r in results) else 0


if __name__ == "__main__":
    sys.exit(main())
