"""k sweep over {2.0, 2.5, 3.0} with a parameters-vs-accuracy chart.

    python3 scripts/run_sweep_k.py [configs/desk.yaml] [--out runs/sweep_k]
"""
import argparse
import json

from fedprune.config import load_config
from fedprune.experiment import sweep_k
from fedprune.plots import emit_plots


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config", nargs="?", default="configs/desk.yaml")
    ap.add_argument("--out", default="runs/sweep_k")
    ap.add_argument("--ks", type=float, nargs="+", default=[2.0, 2.5, 3.0])
    args = ap.parse_args()

    rows = sweep_k(load_config(args.config), args.ks, args.out)
    for r in rows:
        print(json.dumps(r))
    emit_plots([r["ledger"] for r in rows], args.out, rows)


if __name__ == "__main__":
    main()
