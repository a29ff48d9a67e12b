"""Experiment drivers: single run, k sweep, client-count sweep."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig, dump_config
from .data import FederatedDataset, generate_synthetic, load_idx, partition_label_shards
from .federation import TRAIN, FederatedRun, run_stage1, run_stage2
from .graph import ModelGraph, build_architecture, count_params, init_weights
from .metrics import MetricsLedger
from .pruning import PruneConfig, prune_model

log = logging.getLogger(__name__)


def build_dataset(cfg: RunConfig) -> FederatedDataset:
    d = cfg.dataset
    if d.kind == "synthetic":
        return generate_synthetic(d.classes, cfg.clients, d.samples_per_client,
                                  (1, d.image_size, d.image_size), seed=d.seed, noise=d.noise,
                                  shards_per_client=d.shards_per_client, test_samples=d.test_samples,
                                  smooth=d.smooth)
    x, y = load_idx(d.images, d.labels)
    return partition_label_shards(x, y, cfg.clients, d.shards_per_client, d.seed, test_size=d.test_size,
                                  num_classes=d.classes)


def initial_model(cfg: RunConfig, data: FederatedDataset) -> ModelGraph:
    model = build_architecture(cfg.family, cfg.widths, data.image_shape, data.num_classes, cfg.kernel)
    return init_weights(model, cfg.seed)


def make_run(cfg: RunConfig, data: FederatedDataset, model: ModelGraph | None = None) -> FederatedRun:
    model = model if model is not None else initial_model(cfg, data)
    ledger = MetricsLedger(meta={"config_hash": cfg.digest(), "seed": cfg.seed,
                                 "dataset_seed": cfg.dataset.seed, "family": cfg.family,
                                 "prune": cfg.prune, "k": cfg.k})
    return FederatedRun(model, data.clients(), data.test_x, data.test_y, fraction=cfg.fraction,
                        clients_per_round=cfg.clients_per_round or None, epochs=cfg.epochs,
                        batch_size=cfg.batch_size, lr=cfg.lr, stage1_cap=cfg.stage1_cap, seed=cfg.seed,
                        workers=cfg.workers, ledger=ledger)


@dataclass
class ExperimentResult:
    ledger: MetricsLedger
    model: ModelGraph
    stage1_rounds: int
    initial_params: int
    ledger_path: Path | None = None
    checkpoint_path: Path | None = None


def run_experiment(cfg: RunConfig, out_dir=None, data: FederatedDataset | None = None,
                   tag: str = "run") -> ExperimentResult:
    """Stage 1 (skipped when ``cfg.prune`` is false) followed by ``stage2_rounds`` of stage 2."""
    data = data if data is not None else build_dataset(cfg)
    run = make_run(cfg, data)
    initial = count_params(run.global_model)
    stage1 = 0
    if cfg.prune:
        _, stage1 = run_stage1(run, PruneConfig(cfg.k, cfg.patience))
    else:
        run.stage = TRAIN
    run_stage2(run, cfg.stage2_rounds)
    res = ExperimentResult(run.ledger, run.global_model, stage1, initial)
    run.ledger.meta["stage1_rounds"] = stage1
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        res.ledger_path = run.ledger.write(out / f"{tag}_ledger.csv")
        res.checkpoint_path = save_checkpoint(run.global_model, out / f"{tag}_final.ckpt")
        (out / f"{tag}_config.yaml").write_text(dump_config(cfg))
    return res


def sweep_k(cfg: RunConfig, ks=(2.0, 2.5, 3.0), out_dir=None) -> list[dict]:
    """One full experiment per k, all starting from the same initial model.

    ``snapshot_params`` is the size after a single prune of the shared
    stage-1-entry model, which is monotone in k by construction.
    """
    data = build_dataset(cfg)
    entry = initial_model(cfg, data)
    rows = []
    for k in ks:
        sub = cfg.replace(k=float(k))
        snap, _ = prune_model(entry, PruneConfig(float(k), cfg.patience))
        res = run_experiment(sub, out_dir, data=data, tag=f"k{k:g}")
        rows.append({"k": float(k), "snapshot_params": count_params(snap),
                     "initial_params": res.initial_params, "final_params": count_params(res.model),
                     "stage1_rounds": res.stage1_rounds,
                     "final_acc": res.ledger.records[-1].test_acc if res.ledger.records else float("nan"),
                     "best_acc": res.ledger.records[-1].best_acc if res.ledger.records else float("nan"),
                     "ledger": str(res.ledger_path) if res.ledger_path else ""})
    if out_dir is not None:
        write_rows(Path(out_dir) / "sweep_k.csv", rows)
    return rows


def sweep_clients(cfg: RunConfig, counts=(5, 10), seeds: int = 10, out_dir=None) -> list[dict]:
    """Stage-1 searches for each clients-per-round count over ``seeds`` run seeds."""
    data = build_dataset(cfg)
    rows = []
    for count in counts:
        finals = []
        for s in range(seeds):
            sub = cfg.replace(seed=cfg.seed + s, clients_per_round=int(count))
            run = make_run(sub, data)
            model, _ = run_stage1(run, PruneConfig(sub.k, sub.patience))
            finals.append(count_params(model))
        arr = np.asarray(finals, dtype=np.float64)
        rows.append({"clients_per_round": int(count), "seeds": seeds, "mean_params": float(arr.mean()),
                     "std_params": float(arr.std()), "params": ";".join(str(v) for v in finals)})
        log.info("clients/round=%d mean=%.1f std=%.1f", count, arr.mean(), arr.std())
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_rows(Path(out_dir) / "sweep_clients.csv", rows)
    return rows


def write_rows(path: Path, rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def read_rows(path) -> list[dict]:
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))
