"""Pure-numpy reference implementations of the hot encoder kernels.

Every function here has a numba twin in ``numba_backend`` with the same
signature and semantics; the active backend is chosen in ``__init__``.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def gelu(x):
    """Exact (erf-based) GELU, elementwise."""
    return (0.5 * x * (1.0 + erf(x * _INV_SQRT2))).astype(x.dtype)


def gelu_backward(dy, x):
    """dy * d/dx GELU(x)."""
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return (dy * (cdf + x * pdf)).astype(x.dtype)


def layer_norm(x, gamma, beta, eps):
    """Row-wise layer norm over the last axis of a 2-D array."""
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return (xhat * gamma + beta).astype(x.dtype)


def layer_norm_backward(dy, x, gamma, eps):
    """Gradients of layer_norm: returns (dx, dgamma, dbeta)."""
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx.astype(x.dtype), dgamma.astype(x.dtype), dbeta.astype(x.dtype)


def attn_softmax(scores, lens):
    """Softmax over the key axis of attention scores.

    scores: (B, H, S, S); lens: (B,) valid key counts (tail padding).
    Columns at or beyond lens[b] get probability 0, including for padded
    query rows, which downstream code masks out of pooling anyway.
    """
    B, H, S, _ = scores.shape
    key_mask = np.arange(S)[None, :] < lens[:, None]  # (B, S)
    neg = np.where(key_mask[:, None, None, :], 0.0, -np.inf)
    shifted = scores + neg
    m = shifted.max(axis=3, keepdims=True)
    e = np.exp(shifted - m)
    e = np.where(key_mask[:, None, None, :], e, 0.0)
    denom = e.sum(axis=3, keepdims=True)
    return (e / denom).astype(scores.dtype)


def attn_softmax_backward(dprobs, probs):
    """dscores for y = softmax(scores): p * (dp - sum(dp * p))."""
    inner = (dprobs * probs).sum(axis=3, keepdims=True)
    return (probs * (dprobs - inner)).astype(probs.dtype)


def add_at_rows(out, idx, vals):
    """out[idx[i], :] += vals[i, :] with repeated indices accumulated."""
    np.add.at(out, idx, vals)
