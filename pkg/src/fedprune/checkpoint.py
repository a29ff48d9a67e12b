"""Checkpoint container: a zip holding ``architecture.json`` plus one ``.npy`` blob
per parameter (little-endian, explicit shape header)."""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import IngestionError
from .graph import (Activation, ConvLayer, DenseLayer, Flatten, InceptionBlock, ModelGraph,
                    Pool, ResidualBlock)
from .tensor import Tensor

FORMAT_VERSION = 1


def _node_desc(node) -> dict:
    if isinstance(node, ConvLayer):
        return {"type": "conv", "in": node.in_channels, "out": node.filters, "kernel": node.kernel,
                "padding": node.padding, "stride": node.stride, "prunable": node.prunable}
    if isinstance(node, DenseLayer):
        return {"type": "dense", "in": node.weight.shape[0], "out": node.weight.shape[1]}
    if isinstance(node, Activation):
        return {"type": "activation", "kind": node.kind}
    if isinstance(node, Pool):
        return {"type": "pool", "size": node.size, "stride": node.stride, "padding": node.padding}
    if isinstance(node, Flatten):
        return {"type": "flatten"}
    if isinstance(node, ResidualBlock):
        return {"type": "residual", "conv1": _node_desc(node.conv1), "conv2": _node_desc(node.conv2)}
    if isinstance(node, InceptionBlock):
        return {"type": "inception", "branches": [[_node_desc(n) for n in ch] for ch in node.branches]}
    raise TypeError(f"cannot describe node {node!r}")


def _node_from(d: dict, width: int):
    kind = d["type"]
    if kind == "conv":
        return ConvLayer.new(d["in"], d["out"], d["kernel"], d["padding"], d["stride"], d["prunable"], width)
    if kind == "dense":
        return DenseLayer.new(d["in"], d["out"], width)
    if kind == "activation":
        return Activation(d["kind"])
    if kind == "pool":
        return Pool(d["size"], d["stride"], d["padding"])
    if kind == "flatten":
        return Flatten()
    if kind == "residual":
        return ResidualBlock(_node_from(d["conv1"], width), _node_from(d["conv2"], width))
    if kind == "inception":
        return InceptionBlock([[_node_from(n, width) for n in ch] for ch in d["branches"]])
    raise IngestionError(f"unknown node type {kind!r} in architecture descriptor")


def describe(model: ModelGraph) -> dict:
    params = model.named_parameters()
    width = params[0][1].width if params else 4
    return {"format": FORMAT_VERSION, "family": model.family, "input_shape": list(model.input_shape),
            "num_classes": model.num_classes, "width": width,
            "nodes": [_node_desc(n) for n in model.nodes]}


def from_descriptor(desc: dict) -> ModelGraph:
    """Zero-weight model with the described structure."""
    width = desc.get("width", 4)
    nodes = [_node_from(d, width) for d in desc["nodes"]]
    model = ModelGraph(nodes, tuple(desc["input_shape"]), desc["num_classes"], desc.get("family", "custom"))
    model.infer_shapes()
    return model


def save_checkpoint(model: ModelGraph, path) -> Path:
    path = Path(path)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("architecture.json", json.dumps(describe(model), indent=2, sort_keys=True))
        for name, t in model.named_parameters():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(t.data, dtype=t.data.dtype.newbyteorder("<")),
                                      allow_pickle=False)
            zf.writestr(f"weights/{name}.npy", buf.getvalue())
    return path


def load_checkpoint(path) -> ModelGraph:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            desc = json.loads(zf.read("architecture.json"))
            model = from_descriptor(desc)
            params = {}
            for name, t in model.named_parameters():
                arr = np.lib.format.read_array(io.BytesIO(zf.read(f"weights/{name}.npy")), allow_pickle=False)
                if arr.shape != t.shape:
                    raise IngestionError(f"{path}: blob {name} has shape {arr.shape}, descriptor says {t.shape}")
                params[name] = Tensor(arr.astype(t.data.dtype), requires_grad=True)
    except (KeyError, zipfile.BadZipFile, ValueError) as exc:
        raise IngestionError(f"{path}: not a valid checkpoint ({exc})") from exc
    model.load_parameters(params)
    return model
