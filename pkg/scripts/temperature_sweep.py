"""Temperature sensitivity grid: T_E x T x beta on the desk-scale dataset, 3 seeds.

    python scripts/temperature_sweep.py --out runs/temp [--workers N]

Writes per-run reports and aggregate.csv under --out and prints the cells
ranked by mean clean-test accuracy.
"""
import argparse

from aeonlab.experiments import DEFAULT_TEMP_CELL, rank_of, temperature_sweep_spec
from aeonlab.sweep import run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    rows = run_sweep(temperature_sweep_spec(), args.out, workers=args.workers)
    keys = list(DEFAULT_TEMP_CELL)
    for r in sorted(rows, key=lambda r: -(r["test_accuracy"] or 0.0)):
        cell = "  ".join(f"{k.split('.')[-1]}={r[k]:g}" for k in keys)
        print(f"{cell}  acc={r['test_accuracy']:.4f}  eta=({r['eta_id']:.3f}, {r['eta_ood']:.3f})  failed={r['failed']}")
    print("default cell rank:", rank_of(rows, DEFAULT_TEMP_CELL), "of", len(rows))


if __name__ == "__main__":
    main()
