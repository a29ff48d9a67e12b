"""Final stage-1 model size for several clients-per-round counts over repeated seeds.

    python3 scripts/run_sweep_clients.py [configs/desk.yaml] --counts 5 10 50 --seeds 10
"""
import argparse
import json
import math

from fedprune.config import load_config
from fedprune.experiment import sweep_clients


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config", nargs="?", default="configs/desk.yaml")
    ap.add_argument("--out", default="runs/sweep_clients")
    ap.add_argument("--counts", type=int, nargs="+", default=[5, 10, 50])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--widths", type=int, nargs="+", help="override model widths")
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.widths:
        cfg = cfg.replace(widths=args.widths)
    rows = sweep_clients(cfg, args.counts, args.seeds, args.out)
    for r in rows:
        print(json.dumps(r))
    for a, b in zip(rows, rows[1:]):
        pooled = math.sqrt((a["std_params"] ** 2 + b["std_params"] ** 2) / 2)
        print(f"{a['clients_per_round']} vs {b['clients_per_round']} clients: "
              f"|mean diff| {abs(a['mean_params'] - b['mean_params']):.0f}, pooled sd {pooled:.0f}")


if __name__ == "__main__":
    main()
