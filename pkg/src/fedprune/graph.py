"""Layer graph for the three conv families (plain, residual, inception).

A :class:`ModelGraph` is an ordered list of nodes. Residual and inception
blocks are nodes that own their inner conv layers. Each conv carries a
``prunable`` flag; a conv whose output feeds a residual addition is never
prunable.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractViolation
from .tensor import Tensor

FAMILIES = ("conv", "resnet", "inception")

DEFAULT_WIDTHS = {
    "conv": (32, 64),
    "resnet": (16, 16, 16, 16),
    "inception": (8, 16, 16),
}


def _zeros(shape, width=4, name=None):
    return Tensor(np.zeros(shape, dtype=T.WIDTH_DTYPES[width]), requires_grad=True, name=name)


@dataclass(eq=False)
class ConvLayer:
    weight: Tensor
    bias: Tensor
    padding: str | int = "same"
    stride: int = 1
    prunable: bool = True

    @classmethod
    def new(cls, cin, cout, k=5, padding="same", stride=1, prunable=True, width=4):
        return cls(_zeros((cout, cin, k, k), width), _zeros((cout,), width), padding, stride, prunable)

    @property
    def filters(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.padding, self.stride)

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ContractViolation(f"conv expects {self.in_channels} input channels, got shape {shape}")
        h, w = T.conv_output_hw(shape[1], shape[2], self.kernel, self.padding, self.stride)
        if h < 1 or w < 1:
            raise ContractViolation(f"conv kernel {self.kernel} does not fit input {shape}")
        return (self.filters, h, w)

    def flops(self, shape):
        n, h, w = self.output_shape(shape)
        return 2 * self.kernel * self.kernel * self.in_channels * h * w * n

    def slots(self):
        yield "weight", self, "weight"
        yield "bias", self, "bias"


@dataclass(eq=False)
class DenseLayer:
    weight: Tensor  # [F, O]
    bias: Tensor

    @classmethod
    def new(cls, fin, fout, width=4):
        return cls(_zeros((fin, fout), width), _zeros((fout,), width))

    def forward(self, x):
        return T.dense(x, self.weight, self.bias)

    def output_shape(self, shape):
        if len(shape) != 1 or shape[0] != self.weight.shape[0]:
            raise ContractViolation(f"dense expects {self.weight.shape[0]} features, got shape {shape}")
        return (self.weight.shape[1],)

    def flops(self, shape):
        return 2 * self.weight.shape[0] * self.weight.shape[1]

    def slots(self):
        yield "weight", self, "weight"
        yield "bias", self, "bias"


@dataclass(eq=False)
class Activation:
    kind: str = "relu"

    def forward(self, x):
        return T.relu(x)

    def output_shape(self, shape):
        return tuple(shape)

    def flops(self, shape):
        return math.prod(shape)

    def slots(self):
        return iter(())


@dataclass(eq=False)
class Pool:
    size: int = 2
    stride: int | None = None
    padding: int = 0

    def forward(self, x):
        return T.max_pool2d(x, self.size, self.stride, self.padding)

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ContractViolation(f"pool expects a (C,H,W) input, got {shape}")
        s = self.stride or self.size
        h = (shape[1] + 2 * self.padding - self.size) // s + 1
        w = (shape[2] + 2 * self.padding - self.size) // s + 1
        if h < 1 or w < 1:
            raise ContractViolation(f"pool window {self.size} does not fit input {shape}")
        return (shape[0], h, w)

    def flops(self, shape):
        return math.prod(self.output_shape(shape))

    def slots(self):
        return iter(())


@dataclass(eq=False)
class Flatten:
    def forward(self, x):
        return T.flatten(x)

    def output_shape(self, shape):
        return (math.prod(shape),)

    def flops(self, shape):
        return 0

    def slots(self):
        return iter(())


@dataclass(eq=False)
class ResidualBlock:
    """relu(conv2(relu(conv1(x))) + x); conv2 keeps the skip width fixed."""

    conv1: ConvLayer
    conv2: ConvLayer

    def forward(self, x):
        h = T.relu(self.conv1.forward(x))
        return T.relu(T.add(self.conv2.forward(h), x))

    def output_shape(self, shape):
        out = self.conv2.output_shape(self.conv1.output_shape(shape))
        if tuple(out) != tuple(shape):
            raise ContractViolation(f"residual branch output {out} does not match skip path {shape}")
        return out

    def flops(self, shape):
        mid = self.conv1.output_shape(shape)
        out = self.output_shape(shape)
        # relu after conv1, the addition, relu after the addition
        return (self.conv1.flops(shape) + math.prod(mid) + self.conv2.flops(mid)
                + 2 * math.prod(out))

    def slots(self):
        for name, owner, attr in self.conv1.slots():
            yield f"conv1.{name}", owner, attr
        for name, owner, attr in self.conv2.slots():
            yield f"conv2.{name}", owner, attr


@dataclass(eq=False)
class InceptionBlock:
    """Parallel branches whose outputs are concatenated along channels."""

    branches: list

    def forward(self, x):
        outs = []
        for chain in self.branches:
            h = x
            for node in chain:
                h = node.forward(h)
            outs.append(h)
        return T.concat(outs, axis=1)

    def branch_shapes(self, shape):
        res = []
        for chain in self.branches:
            s = shape
            for node in chain:
                s = node.output_shape(s)
            res.append(s)
        return res

    def output_shape(self, shape):
        shapes = self.branch_shapes(shape)
        if len({s[1:] for s in shapes}) != 1:
            raise ContractViolation(f"inception branches disagree on spatial extents: {shapes}")
        return (sum(s[0] for s in shapes),) + tuple(shapes[0][1:])

    def flops(self, shape):
        total = 0
        for chain in self.branches:
            s = shape
            for node in chain:
                total += node.flops(s)
                s = node.output_shape(s)
        return total

    def slots(self):
        for b, chain in enumerate(self.branches):
            for i, node in enumerate(chain):
                for name, owner, attr in node.slots():
                    yield f"b{b}.{i}.{name}", owner, attr


@dataclass(eq=False)
class ModelGraph:
    nodes: list
    input_shape: tuple
    num_classes: int
    family: str = "custom"

    def forward(self, x) -> Tensor:
        return forward(self, x)

    def slots(self) -> Iterator[tuple[str, object, str]]:
        for i, node in enumerate(self.nodes):
            for name, owner, attr in node.slots():
                yield f"{i}.{name}", owner, attr

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, getattr(owner, attr)) for name, owner, attr in self.slots()]

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def load_parameters(self, params: dict[str, Tensor]) -> None:
        """Rebind parameter tensors by name (shapes must match)."""
        for name, owner, attr in self.slots():
            if name not in params:
                continue
            new = params[name]
            old = getattr(owner, attr)
            if tuple(new.shape) != tuple(old.shape):
                raise ContractViolation(f"parameter {name}: shape {new.shape} != {old.shape}")
            if not isinstance(new, Tensor):
                new = Tensor(new, requires_grad=True)
            setattr(owner, attr, new)

    def conv_layers(self) -> list[tuple[str, ConvLayer]]:
        out = []
        for i, node in enumerate(self.nodes):
            if isinstance(node, ConvLayer):
                out.append((f"{i}", node))
            elif isinstance(node, ResidualBlock):
                out += [(f"{i}.conv1", node.conv1), (f"{i}.conv2", node.conv2)]
            elif isinstance(node, InceptionBlock):
                for b, chain in enumerate(node.branches):
                    out += [(f"{i}.b{b}.{j}", n) for j, n in enumerate(chain) if isinstance(n, ConvLayer)]
        return out

    def filter_counts(self) -> dict[str, int]:
        return {name: layer.filters for name, layer in self.conv_layers()}

    def infer_shapes(self, input_shape=None) -> list[tuple]:
        """Shapes entering each node followed by the final output shape."""
        s = tuple(input_shape or self.input_shape)
        shapes = [s]
        for node in self.nodes:
            s = tuple(node.output_shape(s))
            shapes.append(s)
        return shapes

    def clone(self) -> "ModelGraph":
        return copy.deepcopy(self)


def forward(model: ModelGraph, batch) -> Tensor:
    """Logits [B, num_classes] for a batch shaped [B, *input_shape]."""
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float64))
    if x.data.ndim != len(model.input_shape) + 1 or tuple(x.shape[1:]) != tuple(model.input_shape):
        raise ContractViolation(f"batch shape {x.shape} does not match model input {model.input_shape}")
    for node in model.nodes:
        x = node.forward(x)
    return x


def count_params(model: ModelGraph) -> int:
    return sum(t.size for _, t in model.named_parameters())


def count_flops(model: ModelGraph, input_shape=None) -> int:
    """Forward FLOPS for one sample; a multiply-accumulate counts as 2."""
    s = tuple(input_shape or model.input_shape)
    total = 0
    for node in model.nodes:
        total += node.flops(s)
        s = tuple(node.output_shape(s))
    return int(total)


def init_weights(model: ModelGraph, seed: int) -> ModelGraph:
    """Fan-in scaled uniform weights (bound sqrt(6/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    out = model.clone()
    fresh = {}
    for name, t in out.named_parameters():
        dtype = t.data.dtype
        if name.endswith("bias"):
            arr = np.zeros(t.shape, dtype=dtype)
        else:
            bound = math.sqrt(6.0 / fan_in(t.shape))
            arr = rng.uniform(-bound, bound, size=t.shape).astype(dtype)
        fresh[name] = Tensor(arr, requires_grad=True)
    out.load_parameters(fresh)
    return out


def fan_in(shape) -> int:
    # conv [N,C,K,K] -> C*K*K ; dense [F,O] -> F
    return int(math.prod(shape[1:])) if len(shape) == 4 else int(shape[0])


def init_std(shape) -> float:
    """Standard deviation of the uniform init for a weight of this shape."""
    return math.sqrt(2.0 / fan_in(shape))


def _as_block_widths(w) -> tuple[int, int, int]:
    if isinstance(w, (int, np.integer)):
        return (int(w),) * 3
    w = tuple(int(v) for v in w)
    if len(w) != 3:
        raise ConfigError(f"inception block widths need 3 entries (1x1, 5x5, pool-proj), got {w}")
    return w


def build_architecture(family: str, widths: Sequence | None = None, input_shape=(1, 28, 28),
                       num_classes: int = 62, kernel: int = 5, width: int = 4) -> ModelGraph:
    """Build an uninitialised (all-zero) model of one of the three families.

    ``widths``:
      conv       -- filters per conv layer, e.g. (32, 64); each conv is followed by relu + 2x2 pool
      resnet     -- (stem, inner width of block 1, block 2, block 3)
      inception  -- per block either one int or a (1x1, 5x5, pool-proj) triple
    """
    if family not in FAMILIES:
        raise ConfigError(f"unknown architecture family {family!r}; expected one of {FAMILIES}")
    widths = tuple(widths) if widths is not None else DEFAULT_WIDTHS[family]
    input_shape = tuple(int(v) for v in input_shape)
    if len(input_shape) != 3 or min(input_shape) < 1:
        raise ConfigError(f"input shape must be (C, H, W) with positive extents, got {input_shape}")
    if num_classes < 2:
        raise ConfigError("need at least 2 classes")
    C = input_shape[0]
    nodes: list = []

    if family == "conv":
        if len(widths) < 1:
            raise ConfigError("conv family needs at least one width")
        cin = C
        for w in widths:
            nodes += [ConvLayer.new(cin, int(w), kernel, width=width), Activation(), Pool(2)]
            cin = int(w)
    elif family == "resnet":
        if len(widths) != 4:
            raise ConfigError(f"resnet widths are (stem, block1, block2, block3), got {widths}")
        stem = int(widths[0])
        # the stem feeds the first skip connection, so its width is fixed
        nodes += [ConvLayer.new(C, stem, kernel, prunable=False, width=width), Activation(), Pool(2)]
        for i, inner in enumerate(widths[1:]):
            nodes.append(ResidualBlock(ConvLayer.new(stem, int(inner), kernel, width=width),
                                       ConvLayer.new(int(inner), stem, kernel, prunable=False, width=width)))
            if i < 2:
                nodes.append(Pool(2))
    else:
        if len(widths) < 1:
            raise ConfigError("inception family needs at least one block")
        cin = C
        for bw in widths:
            w1, w5, wp = _as_block_widths(bw)
            branches = [
                [ConvLayer.new(cin, w1, 1, width=width), Activation()],
                [ConvLayer.new(cin, w5, kernel, width=width), Activation()],
                [Pool(3, 1, 1), ConvLayer.new(cin, wp, 1, width=width), Activation()],
            ]
            nodes += [InceptionBlock(branches), Pool(2)]
            cin = w1 + w5 + wp

    model = ModelGraph(nodes, input_shape, int(num_classes), family)
    shapes = model.infer_shapes()
    feat = math.prod(shapes[-1])
    model.nodes += [Flatten(), DenseLayer.new(feat, int(num_classes), width=width)]
    model.infer_shapes()
    return model
