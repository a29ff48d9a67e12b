"""Reference implementations the tests check the fast paths against.

Nothing here imports the code under test's numeric kernels.
"""
from fractions import Fraction

import numpy as np


def naive_conv2d(x, w, b, pad_lo, pad_hi, stride=1):
    """Six nested loops over batch, filter, channel, output row/col and kernel taps."""
    B, C, H, W = x.shape
    N, _, K, _ = w.shape
    Hp, Wp = H + pad_lo + pad_hi, W + pad_lo + pad_hi
    xp = np.zeros((B, C, Hp, Wp))
    xp[:, :, pad_lo:pad_lo + H, pad_lo:pad_lo + W] = x
    Ho, Wo = (Hp - K) // stride + 1, (Wp - K) // stride + 1
    out = np.zeros((B, N, Ho, Wo))
    for bi in range(B):
        for n in range(N):
            for i in range(Ho):
                for j in range(Wo):
                    acc = float(b[n])
                    for c in range(C):
                        for di in range(K):
                            for dj in range(K):
                                acc += xp[bi, c, i * stride + di, j * stride + dj] * w[n, c, di, dj]
                    out[bi, n, i, j] = acc
    return out


def naive_matmul(x, w, b):
    B, F = x.shape
    O = w.shape[1]
    out = np.zeros((B, O))
    for i in range(B):
        for o in range(O):
            out[i, o] = b[o] + sum(x[i, f] * w[f, o] for f in range(F))
    return out


def exact_scores(weight):
    """Per-filter sums of |w| as exact integers ``t`` with S_n = t[n] * 2**scale.

    Every double is an integer mantissa times a power of two, so sums are
    formed exactly by grouping on exponent and adding mantissa halves in int64.
    """
    w = np.asarray(weight, dtype=np.float64)
    a = np.abs(w.reshape(w.shape[0], -1))
    m, e = np.frexp(a)
    mant = (m * 2.0 ** 53).astype(np.int64)
    expo = e.astype(np.int64) - 53
    live = mant != 0
    scale = int(expo[live].min()) if live.any() else 0
    hi, lo = mant >> 26, mant & ((1 << 26) - 1)
    totals = [0] * a.shape[0]
    for ev in np.unique(expo[live]):
        mask = (expo == ev) & live
        shi, slo = (hi * mask).sum(axis=1), (lo * mask).sum(axis=1)
        shift = int(ev) - scale
        for n in range(a.shape[0]):
            totals[n] += ((int(shi[n]) << 26) + int(slo[n])) << shift
    return totals, scale


def exact_keep_set(weight, k, min_filters=1):
    """Keep set decided in exact integer arithmetic.

    With D_n = N*t_n - sum(t), filter n is inside the boundary iff
    N * D_n**2 <= k**2 * sum(D_j**2); nothing is rounded.
    Returns (keep, S, mu, var) with the last three as exact Fractions.
    """
    t, scale = exact_scores(weight)
    N = len(t)
    T = sum(t)
    D = [N * v - T for v in t]
    SD2 = sum(d * d for d in D)
    kq = Fraction(float(k))
    p, q = kq.numerator, kq.denominator
    keep = [n for n in range(N) if q * q * N * D[n] * D[n] <= p * p * SD2]
    if len(keep) < min_filters:
        order = sorted(range(N), key=lambda n: (abs(D[n]), n))
        keep = sorted(order[:min_filters])
    unit = Fraction(2) ** scale
    S = [v * unit for v in t]
    mu = Fraction(T, N) * unit
    var = Fraction(SD2, N ** 3) * unit * unit
    return keep, S, mu, var


def finite_difference(f, x, eps=1e-4):
    """Central differences of scalar f over every element of float64 array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g
