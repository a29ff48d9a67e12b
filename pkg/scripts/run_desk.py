"""Desk-scale pruned run plus an unpruned baseline over the same total rounds.

    python3 scripts/run_desk.py [configs/desk.yaml] [--out runs/desk]

Writes both ledgers, the final checkpoints, and the comparison figures.
"""
import argparse
import json
import logging
import time

from fedprune.config import load_config
from fedprune.experiment import build_dataset, run_experiment
from fedprune.graph import count_params
from fedprune.metrics import cumulative_cost
from fedprune.plots import emit_plots


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config", nargs="?", default="configs/desk.yaml")
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    cfg = load_config(args.config)
    data = build_dataset(cfg)
    t0 = time.perf_counter()
    pruned = run_experiment(cfg, args.out, data=data, tag="pruned")
    minutes = (time.perf_counter() - t0) / 60
    total = pruned.stage1_rounds + cfg.stage2_rounds
    base = run_experiment(cfg.replace(prune=False, stage2_rounds=total), args.out, data=data, tag="baseline")
    figures = emit_plots([pruned.ledger_path, base.ledger_path], args.out)

    summary = {
        "stage1_rounds": pruned.stage1_rounds,
        "initial_params": pruned.initial_params,
        "final_params": count_params(pruned.model),
        "param_ratio": count_params(pruned.model) / pruned.initial_params,
        "pruned_acc": pruned.ledger.records[-1].test_acc,
        "baseline_acc": base.ledger.records[-1].test_acc,
        "pruned_bytes": cumulative_cost(pruned.ledger),
        "baseline_bytes": cumulative_cost(base.ledger),
        "pruned_minutes": round(minutes, 2),
        "filters": pruned.model.filter_counts(),
        "figures": [str(f) for f in figures],
    }
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
