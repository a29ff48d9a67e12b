"""Server-side orchestration: client selection, FedAvg, and the two FL stages.

Stage 1 (architecture search) prunes the aggregated model after every round
and halts once the parameter count has failed to decrease for ``patience``
consecutive rounds. Stage 2 trains the frozen architecture.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .client import ClientState, local_train
from .errors import AggregationError, ConsistencyError, ContractViolation
from .graph import ModelGraph, count_flops, count_params, forward
from .metrics import MetricsLedger
from .pruning import PruneConfig, prune_model

log = logging.getLogger(__name__)

SEARCH, TRAIN = "search", "train"


@dataclass(eq=False)
class FederatedRun:
    global_model: ModelGraph
    clients: list
    test_x: np.ndarray
    test_y: np.ndarray
    fraction: float = 0.10
    clients_per_round: int | None = None
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-3
    stage1_cap: int = 100
    seed: int = 0
    workers: int = 1
    stage: str = SEARCH
    round: int = 0
    param_history: list = field(default_factory=list)
    ledger: MetricsLedger = field(default_factory=MetricsLedger)

    @property
    def num_clients(self) -> int:
        return len(self.clients)


def selection_size(run: FederatedRun) -> int:
    m = run.num_clients
    if run.clients_per_round is not None:
        return max(1, min(m, int(run.clients_per_round)))
    return max(1, min(m, int(np.floor(run.fraction * m + 0.5))))


def select_clients(run: FederatedRun, rnd: int) -> list[int]:
    """Uniform sample without replacement, a pure function of (seed, round)."""
    m = run.num_clients
    if m < 1:
        raise ContractViolation("no clients to select from")
    rng = np.random.default_rng([run.seed, rnd, 0x5E1])
    return sorted(int(i) for i in rng.choice(m, size=selection_size(run), replace=False))


def fedavg(locals_: list) -> ModelGraph:
    """Sample-weighted elementwise mean of ``[(model, n_i), ...]``."""
    if not locals_:
        raise AggregationError("nothing to aggregate")
    ref_model = locals_[0][0]
    ref = ref_model.named_parameters()
    layout = [(n, t.shape) for n, t in ref]
    for m, n_i in locals_:
        if [(n, t.shape) for n, t in m.named_parameters()] != layout:
            raise AggregationError("client models do not share one architecture")
        if n_i <= 0:
            raise AggregationError(f"sample count must be positive, got {n_i}")
    total = float(sum(n for _, n in locals_))
    acc = {name: np.zeros(shape, dtype=np.float64) for name, shape in layout}
    for m, n_i in locals_:
        w = n_i / total
        for name, t in m.named_parameters():
            acc[name] += w * t.data.astype(np.float64)
    out = ref_model.clone()
    out.load_parameters({name: T.Tensor(acc[name].astype(t.data.dtype), requires_grad=True)
                         for name, t in ref})
    return out


def evaluate(model: ModelGraph, x, y, batch_size: int = 256) -> float:
    """Top-1 accuracy; argmax ties go to the lowest class index."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ContractViolation("empty test set")
    correct = 0
    with T.no_grad():
        for i in range(0, len(y), batch_size):
            logits = forward(model, x[i:i + batch_size]).data
            correct += int((logits.argmax(axis=1) == y[i:i + batch_size]).sum())
    return correct / len(y)


def _train_selected(run: FederatedRun, model: ModelGraph, ids: list, rnd: int) -> list:
    def job(cid):
        client: ClientState = run.clients[cid]
        trained = local_train(model, client, run.epochs, run.batch_size, run.lr, seed=[run.seed, rnd, cid])
        return trained, client.n_samples

    if run.workers > 1:
        with ThreadPoolExecutor(run.workers) as pool:
            return list(pool.map(job, ids))
    return [job(cid) for cid in ids]


def run_round(run: FederatedRun, prune: Callable | None = None, prune_config: PruneConfig | None = None):
    """One FL round on ``run.global_model``; returns the pruning report (or None)."""
    t0 = time.perf_counter()
    run.round += 1
    ids = select_clients(run, run.round)
    broadcast = run.global_model
    sent = count_params(broadcast)
    model = fedavg(_train_selected(run, broadcast, ids, run.round))
    report = None
    params_after = sent
    if prune is not None:
        model, report = prune(model, prune_config)
        params_after = report.params_after
    run.global_model = model
    acc = evaluate(model, run.test_x, run.test_y)
    run.ledger.add_round(stage=run.stage, clients=len(ids), params_sent=sent,
                         params=count_params(model), flops=count_flops(model), test_acc=acc,
                         filters=model.filter_counts(), wall_seconds=time.perf_counter() - t0)
    log.info("round %d [%s] clients=%d params=%d acc=%.4f", run.round, run.stage, len(ids),
             params_after, acc)
    return report, params_after


def run_stage1(run: FederatedRun, pc: PruneConfig, prune_fn: Callable = prune_model):
    """Architecture search. Returns ``(model, rounds_used)``."""
    if run.stage != SEARCH:
        raise ConsistencyError(f"stage 1 needs stage={SEARCH!r}, run is in {run.stage!r}")
    last = count_params(run.global_model)
    stale = 0
    rounds = 0
    while rounds < run.stage1_cap:
        _, params = run_round(run, prune_fn, pc)
        rounds += 1
        run.param_history.append(params)
        stale = stale + 1 if params >= last else 0
        last = min(last, params)
        if stale >= pc.patience:
            break
    run.stage = TRAIN
    return run.global_model, rounds


def run_stage2(run: FederatedRun, rounds: int) -> ModelGraph:
    """Standard FL on the frozen architecture."""
    if run.stage != TRAIN:
        raise ConsistencyError(f"stage 2 needs stage={TRAIN!r}, run is in {run.stage!r}")
    frozen = count_params(run.global_model)
    for _ in range(rounds):
        _, params = run_round(run)
        if params != frozen or count_params(run.global_model) != frozen:
            raise ConsistencyError("parameter count changed during stage 2")
    return run.global_model
