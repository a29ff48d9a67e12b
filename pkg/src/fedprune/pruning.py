"""Server-side structured filter pruning.

Each filter is scored by the sum of absolute values of all its weights
(input channels included, bias excluded). Filters whose score falls outside
``mean +/- k * std`` of their layer (population std, inclusive bounds) are
removed, and the consumer of that layer's output is rewired so the graph
stays dense.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError, ConsistencyError, NumericOverflowError
from .graph import (Activation, ConvLayer, DenseLayer, Flatten, InceptionBlock, ModelGraph, Pool,
                    ResidualBlock, count_flops, count_params)
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PruneConfig:
    k: float = 2.0
    patience: int = 3
    min_filters: int = 1

    def __post_init__(self):
        if not (self.k >= 0) or not np.isfinite(self.k):
            raise ConfigError(f"k must be a finite nonnegative number, got {self.k}")
        if int(self.patience) != self.patience or self.patience < 1:
            raise ConfigError(f"patience c must be a positive integer, got {self.patience}")
        if int(self.min_filters) != self.min_filters or self.min_filters < 1:
            raise ConfigError(f"min_filters must be a positive integer, got {self.min_filters}")


@dataclass
class FilterScoreSummary:
    scores: np.ndarray
    mean: float
    std: float
    lower: float
    upper: float
    keep_indices: list | None = None
    guarded: bool = False


def filter_scores(weight) -> np.ndarray:
    w = weight.data if isinstance(weight, Tensor) else np.asarray(weight)
    w = w.astype(np.float64, copy=False)
    if not np.all(np.isfinite(w)):
        raise NumericOverflowError("cannot score filters with non-finite weights")
    return np.abs(w).reshape(w.shape[0], -1).sum(axis=1)


def score_layer(layer, config: PruneConfig | None = None) -> FilterScoreSummary:
    """Scores, mean, population std and boundary for one conv layer (or weight array)."""
    config = config or PruneConfig()
    weight = layer.weight if isinstance(layer, ConvLayer) else layer
    s = filter_scores(weight)
    if s.size < 1:
        raise ConfigError("cannot score a layer with zero filters")
    if s.min() == s.max():
        # summing N equal values and dividing can miss the value by an ulp
        mu, sigma = float(s[0]), 0.0
    else:
        mu = float(s.mean())
        sigma = float(np.sqrt(np.mean((s - mu) ** 2)))
    return FilterScoreSummary(s, mu, sigma, mu - config.k * sigma, mu + config.k * sigma)


def select_keep_set(summary: FilterScoreSummary, config: PruneConfig) -> list[int]:
    s = summary.scores
    lower = summary.mean - config.k * summary.std
    upper = summary.mean + config.k * summary.std
    keep = [n for n in range(s.size) if lower <= s[n] <= upper]
    guarded = False
    if len(keep) < config.min_filters:
        # exact rationals so mathematically tied distances stay tied
        exact = [Fraction(float(v)) for v in s]
        mu = sum(exact, Fraction(0)) / len(exact)
        order = sorted(range(s.size), key=lambda n: (abs(exact[n] - mu), n))
        keep = sorted(order[:config.min_filters])
        guarded = True
        log.warning("keep set below min_filters=%d; retaining filters %s nearest the mean",
                    config.min_filters, keep)
    summary.lower, summary.upper = lower, upper
    summary.keep_indices, summary.guarded = keep, guarded
    return keep


@dataclass
class LayerReduction:
    name: str
    before: int
    after: int
    guarded: bool = False


@dataclass
class PruneReport:
    layers: list = field(default_factory=list)
    params_before: int = 0
    params_after: int = 0
    flops_before: int = 0
    flops_after: int = 0

    @property
    def filters_removed(self) -> int:
        return sum(l.before - l.after for l in self.layers)


def _pct(before, after) -> float:
    return 0.0 if before == 0 else 100.0 * (before - after) / before


def prune_report_format(report: PruneReport) -> dict:
    return {
        "layers": [{"name": l.name, "filters_before": l.before, "filters_after": l.after,
                    "filter_reduction_pct": _pct(l.before, l.after), "guarded": l.guarded}
                   for l in report.layers],
        "params_before": report.params_before,
        "params_after": report.params_after,
        "params_reduction_pct": _pct(report.params_before, report.params_after),
        "flops_before": report.flops_before,
        "flops_after": report.flops_after,
        "flops_reduction_pct": _pct(report.flops_before, report.flops_after),
    }


# ---------------------------------------------------------------------------
# rewiring


def _slice(t: Tensor, idx, axis: int) -> Tensor:
    return Tensor(np.take(t.data, idx, axis=axis), requires_grad=t.requires_grad, name=t.name)


def _walk(nodes, prefix, shape, in_keep, keep_map):
    """Apply keep sets along a node chain.

    ``shape`` is the pre-pruning shape of the tensor entering the chain and
    ``in_keep`` the retained indices of its leading axis (None = all kept).
    Returns the pre-pruning output shape and the retained output indices.
    """
    for i, node in enumerate(nodes):
        name = f"{prefix}{i}"
        out_shape = tuple(node.output_shape(shape))
        if isinstance(node, ConvLayer):
            in_keep = _prune_conv(node, name, in_keep, keep_map)
        elif isinstance(node, (Activation, Pool)):
            pass
        elif isinstance(node, Flatten):
            if in_keep is not None:
                c, *rest = shape
                per = int(np.prod(rest)) if rest else 1
                in_keep = (np.asarray(in_keep)[:, None] * per + np.arange(per)).ravel()
        elif isinstance(node, DenseLayer):
            if in_keep is not None:
                node.weight = _slice(node.weight, in_keep, 0)
            in_keep = None
        elif isinstance(node, ResidualBlock):
            if in_keep is not None:
                raise ConsistencyError(f"node {name}: channels removed upstream of a residual addition")
            if f"{name}.conv2" in keep_map:
                raise ConsistencyError(f"node {name}.conv2 is not prunable")
            mid = _prune_conv(node.conv1, f"{name}.conv1", None, keep_map)
            _prune_conv(node.conv2, f"{name}.conv2", mid, keep_map)
        elif isinstance(node, InceptionBlock):
            parts, offset, touched = [], 0, False
            for b, chain in enumerate(node.branches):
                bshape, bkeep = _walk(chain, f"{name}.b{b}.", shape, in_keep, keep_map)
                touched |= bkeep is not None
                parts.append((np.arange(bshape[0]) if bkeep is None else np.asarray(bkeep)) + offset)
                offset += bshape[0]
            in_keep = np.concatenate(parts) if touched else None
        else:
            raise ConsistencyError(f"node {name}: cannot rewire {type(node).__name__}")
        shape = out_shape
    return shape, in_keep


def _prune_conv(layer: ConvLayer, name, in_keep, keep_map):
    if in_keep is not None:
        layer.weight = _slice(layer.weight, in_keep, 1)
    keep = keep_map.get(name)
    if keep is None:
        return None
    if not layer.prunable:
        raise ConsistencyError(f"conv {name} is marked non-prunable")
    layer.weight = _slice(layer.weight, keep, 0)
    layer.bias = _slice(layer.bias, keep, 0)
    return keep


def apply_keep_sets(model: ModelGraph, keep_map: dict) -> ModelGraph:
    """New model retaining only ``keep_map[name]`` filters of each named conv, rewired."""
    out = model.clone()
    _walk(out.nodes, "", tuple(model.input_shape), None, {k: list(v) for k, v in keep_map.items()})
    try:
        shapes = out.infer_shapes()
    except Exception as exc:  # noqa: BLE001 - any failure here is a rewiring bug
        raise ConsistencyError(f"pruned graph fails shape inference: {exc}") from exc
    if shapes[-1] != (model.num_classes,):
        raise ConsistencyError(f"pruned graph emits {shapes[-1]}, expected ({model.num_classes},)")
    return out


def prune_model(model: ModelGraph, config: PruneConfig) -> tuple[ModelGraph, PruneReport]:
    """Score every prunable conv on the incoming snapshot, drop out-of-bound filters, rewire."""
    keep_map, layers = {}, []
    for name, layer in model.conv_layers():
        if not layer.prunable:
            layers.append(LayerReduction(name, layer.filters, layer.filters))
            continue
        summary = score_layer(layer, config)
        keep = select_keep_set(summary, config)
        layers.append(LayerReduction(name, layer.filters, len(keep), summary.guarded))
        if len(keep) < layer.filters:
            keep_map[name] = keep
    pruned = apply_keep_sets(model, keep_map) if keep_map else model.clone()
    report = PruneReport(layers, count_params(model), count_params(pruned),
                         count_flops(model), count_flops(pruned))
    if report.params_after > report.params_before or (not keep_map and report.params_after != report.params_before):
        raise ConsistencyError("pruning increased the parameter count")
    return pruned, report
