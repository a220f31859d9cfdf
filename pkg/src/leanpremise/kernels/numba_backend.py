"""Numba-jitted encoder kernels; see numpy_backend for the reference semantics.

All kernels are sequential (no ``parallel=True``) so that training stays
bit-reproducible for a fixed backend.
"""

import math

import numpy as np
from numba import njit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(cache=True)
def gelu(x):
    flat_x = np.ascontiguousarray(x).reshape(-1)
    flat_o = np.empty_like(flat_x)
    for i in range(flat_x.size):
        v = float(flat_x[i])
        flat_o[i] = 0.5 * v * (1.0 + math.erf(v * _INV_SQRT2))
    return flat_o.reshape(x.shape)


@njit(cache=True)
def gelu_backward(dy, x):
    flat_x = np.ascontiguousarray(x).reshape(-1)
    flat_d = np.ascontiguousarray(dy).reshape(-1)
    flat_o = np.empty_like(flat_x)
    for i in range(flat_x.size):
        v = float(flat_x[i])
        cdf = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        pdf = _INV_SQRT2PI * math.exp(-0.5 * v * v)
        flat_o[i] = flat_d[i] * (cdf + v * pdf)
    return flat_o.reshape(x.shape)


@njit(cache=True)
def layer_norm(x, gamma, beta, eps):
    n, h = x.shape
    out = np.empty_like(x)
    for i in range(n):
        mu = 0.0
        for j in range(h):
            mu += float(x[i, j])
        mu /= h
        var = 0.0
        for j in range(h):
            d = float(x[i, j]) - mu
            var += d * d
        var /= h
        inv = 1.0 / math.sqrt(var + eps)
        for j in range(h):
            out[i, j] = (float(x[i, j]) - mu) * inv * float(gamma[j]) + float(beta[j])
    return out


@njit(cache=True)
def layer_norm_backward(dy, x, gamma, eps):
    n, h = x.shape
    dx = np.empty_like(x)
    dgamma = np.zeros(h, dtype=x.dtype)
    dbeta = np.zeros(h, dtype=x.dtype)
    for i in range(n):
        mu = 0.0
        for j in range(h):
            mu += float(x[i, j])
        mu /= h
        var = 0.0
        for j in range(h):
            d = float(x[i, j]) - mu
            var += d * d
        var /= h
        inv = 1.0 / math.sqrt(var + eps)
        m1 = 0.0
        m2 = 0.0
        for j in range(h):
            xhat = (float(x[i, j]) - mu) * inv
            dxh = float(dy[i, j]) * float(gamma[j])
            dgamma[j] += dy[i, j] * xhat
            dbeta[j] += dy[i, j]
            m1 += dxh
            m2 += dxh * xhat
        m1 /= h
        m2 /= h
        for j in range(h):
            xhat = (float(x[i, j]) - mu) * inv
            dxh = float(dy[i, j]) * float(gamma[j])
            dx[i, j] = inv * (dxh - m1 - xhat * m2)
    return dx, dgamma, dbeta


@njit(cache=True)
def attn_softmax(scores, lens):
    B, H, S, _ = scores.shape
    out = np.zeros_like(scores)
    for b in range(B):
        L = lens[b]
        for h in range(H):
            for q in range(S):
                m = -1e300
                for k in range(L):
                    v = float(scores[b, h, q, k])
                    if v > m:
                        m = v
                denom = 0.0
                for k in range(L):
                    denom += math.exp(float(scores[b, h, q, k]) - m)
                for k in range(L):
                    out[b, h, q, k] = math.exp(float(scores[b, h, q, k]) - m) / denom
    return out


@njit(cache=True)
def attn_softmax_backward(dprobs, probs):
    B, H, S, _ = probs.shape
    out = np.empty_like(probs)
    for b in range(B):
        for h in range(H):
            for q in range(S):
                inner = 0.0
                for k in range(S):
                    inner += float(dprobs[b, h, q, k]) * float(probs[b, h, q, k])
                for k in range(S):
                    out[b, h, q, k] = float(probs[b, h, q, k]) * (
                        float(dprobs[b, h, q, k]) - inner
                    )
    return out


@njit(cache=True)
def add_at_rows(out, idx, vals):
    n, h = vals.shape
    for i in range(n):
        row = idx[i]
        for j in range(h):
            out[row, j] += vals[i, j]
