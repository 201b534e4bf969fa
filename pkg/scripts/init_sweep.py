"""Initialization sensitivity: gamma_id = gamma_ood = g for g in {0.01, 0.1, 1, 10}.

    python scripts/init_sweep.py --out runs/init [--seeds 0 1 2]
"""
import argparse

from aeonlab.experiments import init_sweep_spec
from aeonlab.sweep import run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()
    rows = run_sweep(init_sweep_spec(args.seeds), args.out)
    for r in rows:
        print(f"|gamma| init={r['train.gamma_init']:<5g} acc={r['test_accuracy']:.4f} "
              f"eta_id={r['eta_id']:.3f} eta_ood={r['eta_ood']:.3f}")
    accs = [r["test_accuracy"] for r in rows]
    print(f"accuracy spread: {100 * (max(accs) - min(accs)):.2f} pp")
    for k in ("eta_id", "eta_ood"):
        vals = [r[k] for r in rows]
        print(f"{k} spread: {max(vals) - min(vals):.3f}")


if __name__ == "__main__":
    main()
