"""Dense tensors, a per-thread gradient tape and the handful of ops the models need.

Values are stored at a nominal element width (4 bytes by default) but every
operation accumulates in float64. Layout is row-major NCHW throughout and
convolution is cross-correlation (no kernel flip).
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation, NumericOverflowError, TapeStateError

WIDTH_DTYPES = {4: np.float32, 8: np.float64}
ACC = np.float64


class Tensor:
    """An n-dimensional array plus the flag saying whether gradients flow into it.

    Tensors are treated as immutable: ops and optimizer steps produce new
    tensors rather than writing into ``data``.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 width: int | None = None):
        arr = np.asarray(data)
        if width is not None:
            if width not in WIDTH_DTYPES:
                raise ContractViolation(f"unsupported element width {width}; use 4 or 8")
            arr = arr.astype(WIDTH_DTYPES[width], copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(ACC)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def width(self) -> int:
        """Bytes per stored element."""
        return self.data.dtype.itemsize

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, width={self.width}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, c: float):
        return scale(self, c)

    __rmul__ = __mul__

    def sum(self):
        return tsum(self)


# ---------------------------------------------------------------------------
# tape


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]
    op: str


@dataclass
class GradTape:
    """Ordered record of the differentiable ops executed while it is active."""

    records: list = field(default_factory=list)

    def record(self, out, inputs, backward, op):
        self.records.append(_Record(out, tuple(inputs), backward, op))

    def clear(self):
        self.records.clear()

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        self.clear()
        return False

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
        """Replay the tape in reverse from ``loss``.

        Returns a dict keyed by leaf tensor (identity) whose values are float64
        gradient tensors. Every tensor in ``params`` gets an entry, zeros if the
        loss does not depend on it. The tape is cleared afterwards.
        """
        try:
            start = _find(self.records, loss)
            if start is None:
                raise TapeStateError("backward called on a value with no recorded forward pass")
            if loss.size != 1:
                raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")

            produced = {id(r.out) for r in self.records[: start + 1]}
            grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=ACC)}
            leaves: dict[int, Tensor] = {}
            for rec in reversed(self.records[: start + 1]):
                g = grads.pop(id(rec.out), None)
                if g is None:
                    continue
                for t, gi in zip(rec.inputs, rec.backward(g)):
                    if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                        continue
                    key = id(t)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
                    if key not in produced:
                        leaves[key] = t

            result = {t: Tensor(grads[k]) for k, t in leaves.items()}
            for p in params or ():
                if p not in result:
                    result[p] = Tensor(np.zeros(p.shape, dtype=ACC))
            return result
        finally:
            self.clear()


def _find(records, t):
    for i in range(len(records) - 1, -1, -1):
        if records[i].out is t:
            return i
    return None


_local = threading.local()


def _stack() -> list:
    st = getattr(_local, "stack", None)
    if st is None:
        st = _local.stack = []
    return st


def current_tape() -> GradTape:
    # Recording only happens inside an explicit tape; an implicit root tape
    # would retain every forward run outside one.
    st = _stack()
    if not st:
        raise TapeStateError("no active GradTape on this thread")
    return st[-1]


@contextlib.contextmanager
def no_grad():
    """Suspend recording on this thread (inference paths)."""
    prev = getattr(_local, "disabled", False)
    _local.disabled = True
    try:
        yield
    finally:
        _local.disabled = prev


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
    return current_tape().backward(loss, params)


def _emit(out: np.ndarray, inputs: Sequence, bw, op: str) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError(f"{op} produced non-finite values")
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    track = needs and not getattr(_local, "disabled", False) and bool(_stack())
    res = Tensor(out, requires_grad=track)
    if track:
        current_tape().record(res, inputs, bw, op)
    return res


def _f64(t) -> np.ndarray:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    return arr.astype(ACC, copy=False)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# ops


def _pad_amounts(padding, k: int) -> tuple[int, int]:
    if padding == "same":
        lo = (k - 1) // 2
        return lo, k - 1 - lo
    if padding == "valid":
        return 0, 0
    if isinstance(padding, (int, np.integer)) and padding >= 0:
        return int(padding), int(padding)
    raise ContractViolation(f"padding must be 'same', 'valid' or a nonnegative int, got {padding!r}")


def conv_output_hw(h: int, w: int, k: int, padding="same", stride: int = 1) -> tuple[int, int]:
    lo, hi = _pad_amounts(padding, k)
    return (h + lo + hi - k) // stride + 1, (w + lo + hi - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding="same",
           stride: int = 1) -> Tensor:
    """2D cross-correlation of ``x`` [B,C,H,W] with ``weight`` [N,C,K,K]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ContractViolation(f"conv2d expects 4-d input and weights, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    N, Cw, K, K2 = weight.shape
    if C != Cw or K != K2:
        raise ContractViolation(f"conv2d shape mismatch: input {x.shape} vs weights {weight.shape}")
    if bias is not None and tuple(bias.shape) != (N,):
        raise ContractViolation(f"conv2d bias shape {bias.shape} does not match {N} filters")
    if stride < 1:
        raise ContractViolation(f"stride must be positive, got {stride}")
    lo, hi = _pad_amounts(padding, K)
    if K > H + lo + hi or K > W + lo + hi:
        raise ContractViolation(f"kernel {K} larger than padded input {x.shape} (padding {padding!r})")
    Ho, Wo = (H + lo + hi - K) // stride + 1, (W + lo + hi - K) // stride + 1

    xp = np.pad(_f64(x), ((0, 0), (0, 0), (lo, hi), (lo, hi)))
    win = sliding_window_view(xp, (K, K), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * K * K)
    wmat = _f64(weight).reshape(N, C * K * K)
    out = cols @ wmat.T
    if bias is not None:
        out += _f64(bias)
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, N).transpose(0, 3, 1, 2))

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, N)
        dw = (g2.T @ cols).reshape(weight.shape)
        db = g2.sum(axis=0) if bias is not None else None
        if not x.requires_grad:
            return None, dw, db
        dcols = np.ascontiguousarray((g2 @ wmat).reshape(B, Ho, Wo, C, K, K).transpose(4, 5, 0, 3, 1, 2))
        dxp = np.zeros(xp.shape, dtype=ACC)
        for i in range(K):
            for j in range(K):
                dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[i, j]
        return dxp[:, :, lo:lo + H, lo:lo + W], dw, db

    return _emit(out, (x, weight, bias), bw, "conv2d")


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with ``weight`` laid out [F, O]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ContractViolation(f"dense shape mismatch: input {x.shape} vs weights {weight.shape}")
    if bias is not None and tuple(bias.shape) != (weight.shape[1],):
        raise ContractViolation(f"dense bias shape {bias.shape} does not match weights {weight.shape}")
    xa, wa = _f64(x), _f64(weight)
    out = xa @ wa
    if bias is not None:
        out = out + _f64(bias)

    def bw(g):
        return g @ wa.T, xa.T @ g, (g.sum(axis=0) if bias is not None else None)

    return _emit(out, (x, weight, bias), bw, "dense")


def relu(x: Tensor) -> Tensor:
    xa = _f64(x)
    mask = xa > 0
    return _emit(np.where(mask, xa, 0.0), (x,), lambda g: (g * mask,), "relu")


def max_pool2d(x: Tensor, size: int = 2, stride: int | None = None, padding: int = 0) -> Tensor:
    """Max pooling over ``size``x``size`` windows; ties resolve to the first element."""
    stride = stride or size
    xa = _f64(x)
    if xa.ndim != 4:
        raise ContractViolation(f"max_pool2d expects a 4-d input, got {x.shape}")
    B, C, H, W = xa.shape
    if size > H + 2 * padding or size > W + 2 * padding:
        raise ContractViolation(f"pool window {size} larger than input {x.shape}")
    xp = np.pad(xa, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=-np.inf) if padding else xa
    win = sliding_window_view(xp, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    flat = win.reshape(B, C, Ho, Wo, size * size)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        dxp = np.zeros(xp.shape, dtype=ACC)
        for i in range(size):
            for j in range(size):
                hit = arg == i * size + j
                dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += np.where(hit, g, 0.0)
        return (dxp[:, :, padding:padding + H, padding:padding + W],)

    return _emit(out, (x,), bw, "max_pool2d")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ContractViolation(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _emit(_f64(a) + _f64(b), (a, b), lambda g: (g, g), "add")


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit(_f64(a) * c, (a,), lambda g: (g * c,), "scale")


def tsum(a: Tensor) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _emit(np.asarray(_f64(a).sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    arrs = [_f64(p) for p in parts]
    ref = list(arrs[0].shape)
    for a in arrs[1:]:
        other = list(a.shape)
        if len(other) != len(ref) or any(s != r for d, (s, r) in enumerate(zip(other, ref)) if d != axis):
            raise ContractViolation(f"concat shape mismatch: {arrs[0].shape} vs {a.shape} on axis {axis}")
    splits = np.cumsum([a.shape[axis] for a in arrs])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(np.concatenate(arrs, axis=axis), parts, bw, "concat")


def flatten(x: Tensor) -> Tensor:
    xa = _f64(x)
    shape = xa.shape
    return _emit(xa.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),), "flatten")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class, stabilised by max subtraction."""
    z = _f64(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ContractViolation(f"cross_entropy needs logits [B,L] and B labels, got {z.shape} and {labels.shape}")
    B, L = z.shape
    if labels.size and (labels.min() < 0 or labels.max() >= L):
        raise ContractViolation(f"labels must lie in [0, {L}), got range [{labels.min()}, {labels.max()}]")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()

    def bw(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / B),)

    return _emit(np.asarray(loss), (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_init(params: dict[str, Tensor]) -> AdamState:
    return AdamState({k: np.zeros(p.shape, ACC) for k, p in params.items()},
                     {k: np.zeros(p.shape, ACC) for k, p in params.items()}, 0)


def adam_step(params: dict[str, Tensor], grads: dict, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update.

    ``grads`` maps the same keys as ``params`` to arrays or tensors; a missing
    key counts as a zero gradient. Returns ``(new_params, new_state)``; inputs
    are left untouched.
    """
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    c1, c2 = 1.0 - beta1 ** t, 1.0 - beta2 ** t
    for key, p in params.items():
        m, v = state.m.get(key), state.v.get(key)
        if m is None or m.shape != p.shape or v.shape != p.shape:
            raise ContractViolation(f"Adam moment buffers for {key!r} do not match parameter shape {p.shape}")
        g = grads.get(key)
        g = np.zeros(p.shape, ACC) if g is None else _f64(g)
        if g.shape != p.shape:
            raise ContractViolation(f"gradient for {key!r} has shape {g.shape}, parameter has {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        upd = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new = (_f64(p) - upd).astype(p.data.dtype)
        if not np.all(np.isfinite(new)):
            raise NumericOverflowError(f"Adam update made {key!r} non-finite")
        new_params[key] = Tensor(new, requires_grad=p.requires_grad, name=p.name)
        m_new[key], v_new[key] = m, v
    return new_params, AdamState(m_new, v_new, t)
