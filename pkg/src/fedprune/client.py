"""Client role: local training on a private dataset.

Clients never prune; nothing here touches :mod:`fedprune.pruning`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .graph import ModelGraph, forward


@dataclass(eq=False)
class ClientState:
    cid: int
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.y) < 1 or len(self.x) != len(self.y):
            raise ConfigError(f"client {self.cid} needs >= 1 sample and matching x/y lengths")

    @property
    def n_samples(self) -> int:
        return len(self.y)


def train_loss(model: ModelGraph, x, y, batch_size: int = 256) -> float:
    """Mean cross-entropy over a dataset, without recording gradients."""
    total = 0.0
    with T.no_grad():
        for i in range(0, len(y), batch_size):
            xb, yb = x[i:i + batch_size], y[i:i + batch_size]
            total += T.cross_entropy(forward(model, xb), yb).item() * len(yb)
    return total / len(y)


def local_train(model: ModelGraph, client: ClientState, epochs: int = 5, batch_size: int = 32,
                lr: float = 1e-3, seed=0) -> ModelGraph:
    """Train a copy of ``model`` for ``epochs`` passes of Adam + cross-entropy.

    Adam state starts fresh each call; the caller's model is not modified.
    ``seed`` fixes the per-epoch shuffling.
    """
    if client.n_samples < 1:
        raise ConfigError(f"client {client.cid} has an empty dataset")
    local = model.clone()
    if epochs <= 0:
        return local
    rng = np.random.default_rng(seed)
    params = local.parameters()
    state = T.adam_init(params)
    n = client.n_samples
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            with T.GradTape() as tape:
                loss = T.cross_entropy(forward(local, client.x[idx]), client.y[idx])
                grads = tape.backward(loss, params.values())
            by_name = {name: grads[p].data for name, p in params.items()}
            params, state = T.adam_step(params, by_name, state, lr=lr)
            local.load_parameters(params)
    return local
