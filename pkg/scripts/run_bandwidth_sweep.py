"""Desk-scale noise-free bandwidth sweep: MudiNet at 25, 50 and 100 MHz,
three seeds, with the per-step improvement in mean error.

    python scripts/run_bandwidth_sweep.py --out runs/bandwidth
"""
import argparse
import sys
from pathlib import Path

from mudinet.config import load_config
from mudinet.experiment import run_sweep, summarize

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=ROOT / "configs" / "bandwidth_scaled.cfg")
    p.add_argument("--out", default=ROOT / "runs" / "bandwidth")
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args(argv)

    cfg = load_config(args.config)
    results = run_sweep(cfg, args.out, args.jobs, log=lambda m: print(m, file=sys.stderr, flush=True))
    me = summarize(results)
    prev = None
    print("bandwidth_mhz\tmudinet_me_m\tgain_m")
    for bw in cfg.settings:
        cur = me.get((bw, "mudinet"), float("nan"))
        gain = "" if prev is None else f"{prev - cur:.3f}"
        print(f"{bw / 1e6:g}\t{cur:.3f}\t{gain}")
        prev = cur
    print(f"results in {Path(args.out) / 'results.csv'}")
    return 1 if any(r.error for r in results) else 0


if __name__ == "__main__":
    sys.exit(main())
