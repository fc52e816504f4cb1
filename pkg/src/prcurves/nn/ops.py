"""Fused forward/backward kernels for the transformer.

Activations are 2-D, ``(batch * T, width)``. Each op has a numba version
(``*_nb``) and a numpy version (``*_np``); the public name follows
:data:`prcurves._accel.USE_NUMBA`. The numpy versions double as the
readable reference for the loops.
"""
import math

import numpy as np

from .._accel import USE_NUMBA, njit

RMS_EPS = 1e-6


# --------------------------------------------------------------------------
# RMSNorm
# --------------------------------------------------------------------------

def rms_fwd_np(x, g):
    inv = 1.0 / np.sqrt((x * x).mean(axis=1, keepdims=True) + x.dtype.type(RMS_EPS))
    xhat = x * inv
    return xhat * g, xhat, inv[:, 0]


def rms_bwd_np(dy, g, xhat, inv):
    dg = (dy * xhat).sum(axis=0)
    dxhat = dy * g
    dx = inv[:, None] * (dxhat - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return dx, dg


@njit
def rms_fwd_nb(x, g):
    n, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    inv = np.empty(n, dtype=x.dtype)
    for i in range(n):
        ss = 0.0
        for j in range(d):
            ss += x[i, j] * x[i, j]
        r = 1.0 / math.sqrt(ss / d + RMS_EPS)
        inv[i] = r
        for j in range(d):
            xh = x[i, j] * r
            xhat[i, j] = xh
            y[i, j] = xh * g[j]
    return y, xhat, inv


@njit
def rms_bwd_nb(dy, g, xhat, inv):
    n, d = dy.shape
    dx = np.empty_like(dy)
    dg = np.zeros(d, dtype=dy.dtype)
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dg[j] += dy[i, j] * xhat[i, j]
            dot += dy[i, j] * g[j] * xhat[i, j]
        dot /= d
        for j in range(d):
            dx[i, j] = inv[i] * (dy[i, j] * g[j] - xhat[i, j] * dot)
    return dx, dg


# --------------------------------------------------------------------------
# SiLU-gated unit on z = [gate | up]: hid = silu(gate) * up
# --------------------------------------------------------------------------

def _sigmoid(z):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def swiglu_fwd_np(z):
    f = z.shape[1] // 2
    zg, zu = z[:, :f], z[:, f:]
    sig = _sigmoid(zg)
    return zg * sig * zu, sig


def swiglu_bwd_np(dhid, z, sig):
    f = z.shape[1] // 2
    zg, zu = z[:, :f], z[:, f:]
    dz = np.empty_like(z)
    dz[:, :f] = dhid * zu * (sig * (1 + zg * (1 - sig)))
    dz[:, f:] = dhid * zg * sig
    return dz


@njit
def _gate_product_nb(z, sig):
    n, f = sig.shape
    hid = np.empty_like(sig)
    for i in range(n):
        for j in range(f):
            hid[i, j] = z[i, j] * sig[i, j] * z[i, f + j]
    return hid


def swiglu_fwd_nb(z):
    # numpy's vectorized exp beats a scalar loop here, so only the product is compiled
    sig = _sigmoid(z[:, : z.shape[1] // 2])
    return _gate_product_nb(z, sig), sig


@njit
def swiglu_bwd_nb(dhid, z, sig):
    n, f = sig.shape
    dz = np.empty_like(z)
    for i in range(n):
        for j in range(f):
            zg = z[i, j]
            s = sig[i, j]
            g = dhid[i, j]
            dz[i, j] = g * z[i, f + j] * (s * (1.0 + zg * (1.0 - s)))
            dz[i, f + j] = g * zg * s
    return dz


# --------------------------------------------------------------------------
# causal multi-head attention core, rotary positions optional
# --------------------------------------------------------------------------

def _rotate_half(x):
    h = x.shape[-1] // 2
    return np.concatenate([-x[..., h:], x[..., :h]], axis=-1)


def attn_fwd_np(qkv, B, T, H, cos, sin, use_rope):
    """``qkv`` is ``(B*T, 3*d)``; returns ``(o, (q, k, v, a))`` with ``o`` ``(B*T, d)``."""
    d = qkv.shape[1] // 3
    hd = d // H
    parts = qkv.reshape(B, T, 3, H, hd).transpose(2, 0, 3, 1, 4)
    q, k, v = parts[0], parts[1], np.ascontiguousarray(parts[2])
    if use_rope:
        q = q * cos + _rotate_half(q) * sin
        k = k * cos + _rotate_half(k) * sin
    scale = qkv.dtype.type(1.0 / math.sqrt(hd))
    s = (q @ k.swapaxes(-1, -2)) * scale
    s = s + np.triu(np.full((T, T), -np.inf, dtype=qkv.dtype), k=1)
    s = s - s.max(axis=-1, keepdims=True)
    a = np.exp(s)
    a /= a.sum(axis=-1, keepdims=True)
    o = (a @ v).transpose(0, 2, 1, 3).reshape(B * T, d)
    return o, (q, k, v, a)


def attn_bwd_np(do, cache, B, T, H, cos, sin, use_rope):
    q, k, v, a = cache
    hd = q.shape[-1]
    d = H * hd
    do = do.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
    da = do @ v.swapaxes(-1, -2)
    dv = a.swapaxes(-1, -2) @ do
    ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
    ds *= do.dtype.type(1.0 / math.sqrt(hd))
    dq = ds @ k
    dk = ds.swapaxes(-1, -2) @ q
    if use_rope:
        # rotate_half is antisymmetric, so its transpose is its negation
        dq = dq * cos - _rotate_half(dq * sin)
        dk = dk * cos - _rotate_half(dk * sin)
    return np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B * T, 3 * d)


# The compiled path works batch-last, (.., T, B), so the innermost loop runs
# over the batch with unit stride and vectorizes.

def _to_batch_last(qkv, B, T, H):
    # a strided numpy copy beats any loop order we tried in numba
    hd = qkv.shape[1] // (3 * H)
    return np.ascontiguousarray(qkv.reshape(B, T, 3, H, hd).transpose(2, 3, 4, 1, 0))


@njit
def _rope_batch_last(x, cos, sin, sign):
    # rotates x[0] (queries) and x[1] (keys) in place; sign=-1 applies the transpose
    _, H, hd, T, B = x.shape
    half = hd // 2
    for w in range(2):
        for h in range(H):
            for t in range(T):
                for j in range(half):
                    c1 = cos[t, j]
                    s1 = sign * sin[t, j]
                    c2 = cos[t, j + half]
                    s2 = sign * sin[t, j + half]
                    for b in range(B):
                        lo = x[w, h, j, t, b]
                        hi = x[w, h, j + half, t, b]
                        x[w, h, j, t, b] = lo * c1 - hi * s1
                        x[w, h, j + half, t, b] = hi * c2 + lo * s2


@njit
def _scores_batch_last(x, scale):
    _, H, hd, T, B = x.shape
    s = np.full((H, T, T, B), -np.inf, dtype=x.dtype)
    for h in range(H):
        for t in range(T):
            for u in range(t + 1):
                row = s[h, t, u]
                row[:] = 0.0
                for j in range(hd):
                    for b in range(B):
                        row[b] += x[0, h, j, t, b] * x[1, h, j, u, b]
                for b in range(B):
                    row[b] *= scale
    return s


@njit
def _mix_batch_last(a, x, n, d):
    # o[b*T + t, h*hd + j] = sum_u a[h, t, u, b] * v[h, j, u, b]
    H, T, _, B = a.shape
    hd = x.shape[2]
    acc = np.zeros((H, hd, T, B), dtype=x.dtype)
    for h in range(H):
        for j in range(hd):
            for t in range(T):
                for u in range(t + 1):
                    for b in range(B):
                        acc[h, j, t, b] += a[h, t, u, b] * x[2, h, j, u, b]
    o = np.empty((n, d), dtype=x.dtype)
    for b in range(B):
        for t in range(T):
            for h in range(H):
                for j in range(hd):
                    o[b * T + t, h * hd + j] = acc[h, j, t, b]
    return o


def attn_fwd_nb(qkv, B, T, H, cos, sin, use_rope):
    n, d3 = qkv.shape
    d = d3 // 3
    hd = d // H
    x = _to_batch_last(qkv, B, T, H)
    if use_rope:
        _rope_batch_last(x, cos, sin, 1.0)
    s = _scores_batch_last(x, 1.0 / math.sqrt(hd))
    s -= s.max(axis=2, keepdims=True)
    a = np.exp(s)
    # sum over keys one slice at a time: with B == 1 numpy would switch to
    # pairwise summation and a row's result would depend on the batch size
    total = a[:, :, :1].copy()
    for u in range(1, T):
        total += a[:, :, u : u + 1]
    a /= total
    return _mix_batch_last(a, x, n, d), (x, a)


@njit
def _attn_bwd_batch_last(do, x, a, scale):
    _, H, hd, T, B = x.shape
    n = do.shape[0]
    d = H * hd
    g = np.empty((H, hd, T, B), dtype=do.dtype)
    for b in range(B):
        for t in range(T):
            for h in range(H):
                for j in range(hd):
                    g[h, j, t, b] = do[b * T + t, h * hd + j]
    dx = np.zeros((3, H, hd, T, B), dtype=do.dtype)
    ds = np.empty((T, B), dtype=do.dtype)
    dot = np.empty(B, dtype=do.dtype)
    for h in range(H):
        for t in range(T):
            # da[u] = sum_j do[j, t] v[j, u]; dv[j, u] += a[t, u] do[j, t]
            for u in range(t + 1):
                ds[u, :] = 0.0
                for j in range(hd):
                    for b in range(B):
                        ds[u, b] += g[h, j, t, b] * x[2, h, j, u, b]
                        dx[2, h, j, u, b] += a[h, t, u, b] * g[h, j, t, b]
            dot[:] = 0.0
            for u in range(t + 1):
                for b in range(B):
                    dot[b] += ds[u, b] * a[h, t, u, b]
            for u in range(t + 1):
                for b in range(B):
                    ds[u, b] = a[h, t, u, b] * (ds[u, b] - dot[b]) * scale
                for j in range(hd):
                    for b in range(B):
                        dx[0, h, j, t, b] += ds[u, b] * x[1, h, j, u, b]
                        dx[1, h, j, u, b] += ds[u, b] * x[0, h, j, t, b]
    return dx


def _from_batch_last(dx, n):
    d3 = dx.shape[0] * dx.shape[1] * dx.shape[2]
    return np.ascontiguousarray(dx.transpose(4, 3, 0, 1, 2)).reshape(n, d3)


def attn_bwd_nb(do, cache, B, T, H, cos, sin, use_rope):
    x, a = cache
    hd = x.shape[2]
    dx = _attn_bwd_batch_last(do, x, a, 1.0 / math.sqrt(hd))
    if use_rope:
        _rope_batch_last(dx, cos, sin, -1.0)
    return _from_batch_last(dx, do.shape[0])


if USE_NUMBA:
    rms_fwd, rms_bwd = rms_fwd_nb, rms_bwd_nb
    swiglu_fwd, swiglu_bwd = swiglu_fwd_nb, swiglu_bwd_nb
    attn_fwd, attn_bwd = attn_fwd_nb, attn_bwd_nb
else:
    rms_fwd, rms_bwd = rms_fwd_np, rms_bwd_np
    swiglu_fwd, swiglu_bwd = swiglu_fwd_np, swiglu_bwd_np
    attn_fwd, attn_bwd = attn_fwd_np, attn_bwd_np
