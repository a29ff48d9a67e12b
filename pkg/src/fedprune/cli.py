"""Command line: ``fedprune {run,sweep-k,sweep-clients,plot,inspect-checkpoint}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

from .checkpoint import describe, load_checkpoint
from .config import DatasetConfig, RunConfig, apply_overrides, load_config
from .errors import ConfigError, FedPruneError
from .graph import count_flops, count_params

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _str2bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


def _add_overrides(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides (take precedence over the file)")
    for prefix, cls in (("", RunConfig), ("dataset_", DatasetConfig)):
        default = cls()
        for f in fields(cls):
            val = getattr(default, f.name)
            if f.name == "dataset":
                continue
            flag = "--" + (prefix + f.name).replace("_", "-")
            dest = prefix + f.name
            if isinstance(val, bool):
                g.add_argument(flag, dest=dest, type=_str2bool, metavar="BOOL")
            elif isinstance(val, list):
                g.add_argument(flag, dest=dest, type=int, nargs="+")
            else:
                g.add_argument(flag, dest=dest, type=type(val))


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    names = [f.name for f in fields(RunConfig) if f.name != "dataset"]
    names += ["dataset_" + f.name for f in fields(DatasetConfig)]
    return apply_overrides(cfg, {n: getattr(args, n, None) for n in names})


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedprune", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run stage 1 + stage 2 and write ledger and checkpoint")
    p.add_argument("config", nargs="?")
    p.add_argument("--out", default="runs/run")
    p.add_argument("--tag", default="run")
    _add_overrides(p)

    p = sub.add_parser("sweep-k", help="one experiment per k value")
    p.add_argument("config", nargs="?")
    p.add_argument("--out", default="runs/sweep_k")
    p.add_argument("--ks", type=float, nargs="+", default=[2.0, 2.5, 3.0])
    _add_overrides(p)

    p = sub.add_parser("sweep-clients", help="stage-1 searches over clients-per-round counts")
    p.add_argument("config", nargs="?")
    p.add_argument("--out", default="runs/sweep_clients")
    p.add_argument("--counts", type=int, nargs="+", default=[5, 10])
    p.add_argument("--seeds", type=int, default=10)
    _add_overrides(p)

    p = sub.add_parser("plot", help="emit figures from ledger files")
    p.add_argument("ledgers", nargs="+")
    p.add_argument("--out", default="runs/plots")
    p.add_argument("--sweep", help="sweep_k.csv summary for the Pareto chart")

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint's architecture and sizes")
    p.add_argument("path")
    return ap


def _run(args) -> int:
    from . import experiment

    if args.command == "run":
        res = experiment.run_experiment(_config(args), args.out, tag=args.tag)
        print(json.dumps({"ledger": str(res.ledger_path), "checkpoint": str(res.checkpoint_path),
                          "stage1_rounds": res.stage1_rounds, "initial_params": res.initial_params,
                          "final_params": res.ledger.records[-1].params if res.ledger.records else res.initial_params,
                          "final_acc": res.ledger.records[-1].test_acc if res.ledger.records else None}))
    elif args.command == "sweep-k":
        for row in experiment.sweep_k(_config(args), args.ks, args.out):
            print(json.dumps(row))
    elif args.command == "sweep-clients":
        cfg = _config(args)
        for c in args.counts:
            if c < 1:
                raise ConfigError(f"--counts: client counts must be >= 1, got {c}")
        for row in experiment.sweep_clients(cfg, args.counts, args.seeds, args.out):
            print(json.dumps(row))
    elif args.command == "plot":
        from .plots import emit_plots

        rows = experiment.read_rows(args.sweep) if args.sweep else None
        for path in emit_plots(args.ledgers, args.out, rows):
            print(path)
    elif args.command == "inspect-checkpoint":
        model = load_checkpoint(args.path)
        desc = describe(model)
        desc["params"] = count_params(model)
        desc["flops"] = count_flops(model)
        desc["filters"] = model.filter_counts()
        print(json.dumps(desc, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FedPruneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
