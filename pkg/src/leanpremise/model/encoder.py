"""Post-layernorm transformer encoder with exact analytic gradients.

The forward pass keeps every intermediate needed by ``backward_batch``,
which returns per-tensor gradients matching central finite differences
(the module's master property). Sequences are padded at the tail; padded
positions never influence valid ones (keys are masked, pooling is
masked), so their gradients vanish identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import kernels
from .config import EncoderConfig


class EncoderInputError(ValueError):
    pass


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length id sequences into (ids, lens) with tail padding."""
    if not seqs:
        raise EncoderInputError("empty batch")
    lens = np.array([len(s) for s in seqs], dtype=np.int64)
    if (lens == 0).any():
        raise EncoderInputError("empty sequence in batch")
    S = int(lens.max())
    ids = np.full((len(seqs), S), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return ids, lens


@dataclass
class LayerCache:
    x_in: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    probs_dropped: np.ndarray | None
    attn_mask: np.ndarray | None
    ctx_flat: np.ndarray
    attn_proj: np.ndarray
    attn_out_mask: np.ndarray | None
    r1: np.ndarray
    h: np.ndarray
    f1: np.ndarray
    g: np.ndarray
    ffn_out_mask: np.ndarray | None
    r2: np.ndarray


@dataclass
class ForwardCache:
    ids: np.ndarray
    lens: np.ndarray
    emb_sum: np.ndarray
    x0: np.ndarray
    emb_mask: np.ndarray | None
    layers: list[LayerCache] = field(default_factory=list)
    last_hidden: np.ndarray | None = None
    pooled: np.ndarray | None = None
    cls_hidden: np.ndarray | None = None


def _dropout_mask(shape, rate, rng, dtype):
    keep = (rng.random(shape) >= rate).astype(dtype)
    return keep / dtype.type(1.0 - rate)


def forward_batch(
    params: dict[str, np.ndarray],
    config: EncoderConfig,
    ids: np.ndarray,
    lens: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardCache:
    B, S = ids.shape
    if S > config.max_positions:
        raise EncoderInputError(
            f"sequence length {S} exceeds max_positions {config.max_positions}"
        )
    dtype = np.dtype(config.dtype)
    nh, dh = config.n_heads, config.head_dim
    scale = dtype.type(1.0 / np.sqrt(dh))
    drop = config.dropout if train else 0.0
    if drop > 0.0 and rng is None:
        raise EncoderInputError("training forward with dropout needs an rng")

    emb_sum = params["tok_emb"][ids] + params["pos_emb"][None, :S, :]
    emb_sum = np.ascontiguousarray(emb_sum)
    x0 = kernels.layer_norm(
        emb_sum.reshape(B * S, -1), params["emb_ln_g"], params["emb_ln_b"], config.ln_eps
    ).reshape(B, S, -1)
    emb_mask = None
    if drop > 0.0:
        emb_mask = _dropout_mask(x0.shape, drop, rng, dtype)
        x0 = x0 * emb_mask

    cache = ForwardCache(ids=ids, lens=lens, emb_sum=emb_sum, x0=x0, emb_mask=emb_mask)
    x = x0
    for i in range(config.n_layers):
        pre = f"layer{i}."
        x2 = x.reshape(B * S, -1)
        q = (x2 @ params[pre + "wq"] + params[pre + "bq"]).reshape(B, S, nh, dh)
        k = (x2 @ params[pre + "wk"] + params[pre + "bk"]).reshape(B, S, nh, dh)
        v = (x2 @ params[pre + "wv"] + params[pre + "bv"]).reshape(B, S, nh, dh)
        q = np.ascontiguousarray(q.transpose(0, 2, 1, 3))  # (B, nh, S, dh)
        k = np.ascontiguousarray(k.transpose(0, 2, 1, 3))
        v = np.ascontiguousarray(v.transpose(0, 2, 1, 3))
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        probs = kernels.attn_softmax(scores, lens)
        attn_mask = None
        probs_used = probs
        if drop > 0.0:
            attn_mask = _dropout_mask(probs.shape, drop, rng, dtype)
            probs_used = probs * attn_mask
        ctx = probs_used @ v  # (B, nh, S, dh)
        ctx_flat = np.ascontiguousarray(ctx.transpose(0, 2, 1, 3)).reshape(B * S, -1)
        attn_proj = ctx_flat @ params[pre + "wo"] + params[pre + "bo"]
        attn_out_mask = None
        if drop > 0.0:
            attn_out_mask = _dropout_mask(attn_proj.shape, drop, rng, dtype)
            attn_proj = attn_proj * attn_out_mask
        r1 = x2 + attn_proj
        h = kernels.layer_norm(r1, params[pre + "ln1_g"], params[pre + "ln1_b"], config.ln_eps)
        f1 = h @ params[pre + "w1"] + params[pre + "b1"]
        g = kernels.gelu(f1)
        ffn_proj = g @ params[pre + "w2"] + params[pre + "b2"]
        ffn_out_mask = None
        if drop > 0.0:
            ffn_out_mask = _dropout_mask(ffn_proj.shape, drop, rng, dtype)
            ffn_proj = ffn_proj * ffn_out_mask
        r2 = h + ffn_proj
        y = kernels.layer_norm(r2, params[pre + "ln2_g"], params[pre + "ln2_b"], config.ln_eps)
        cache.layers.append(
            LayerCache(
                x_in=x2,
                q=q,
                k=k,
                v=v,
                probs=probs,
                probs_dropped=probs_used if drop > 0.0 else None,
                attn_mask=attn_mask,
                ctx_flat=ctx_flat,
                attn_proj=attn_proj,
                attn_out_mask=attn_out_mask,
                r1=r1,
                h=h,
                f1=f1,
                g=g,
                ffn_out_mask=ffn_out_mask,
                r2=r2,
            )
        )
        x = y.reshape(B, S, -1)

    last = x
    valid = (np.arange(S)[None, :] < lens[:, None]).astype(dtype)  # (B, S)
    pooled = (last * valid[:, :, None]).sum(axis=1) / lens[:, None].astype(dtype)
    cache.last_hidden = last
    cache.pooled = pooled
    cache.cls_hidden = last[:, 0, :].copy()
    return cache


def backward_batch(
    params: dict[str, np.ndarray],
    config: EncoderConfig,
    cache: ForwardCache,
    d_last: np.ndarray | None = None,
    d_pooled: np.ndarray | None = None,
    d_cls: np.ndarray | None = None,
    grads: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Accumulate parameter gradients for the given output cotangents.

    Callers may pass any combination of d_last (per-position), d_pooled
    (mean-pooled embedding), and d_cls (position-0 hidden).
    """
    B, S = cache.ids.shape
    dtype = np.dtype(config.dtype)
    nh, dh = config.n_heads, config.head_dim
    scale = dtype.type(1.0 / np.sqrt(dh))
    if grads is None:
        grads = {}

    def acc(name, value):
        if name in grads:
            grads[name] += value
        else:
            grads[name] = np.array(value, dtype=dtype)

    dy = np.zeros((B, S, config.hidden), dtype=dtype)
    if d_last is not None:
        dy += d_last
    if d_pooled is not None:
        valid = (np.arange(S)[None, :] < cache.lens[:, None]).astype(dtype)
        dy += (d_pooled[:, None, :] / cache.lens[:, None, None].astype(dtype)) * valid[:, :, None]
    if d_cls is not None:
        dy[:, 0, :] += d_cls
    dy = dy.reshape(B * S, -1)

    for i in reversed(range(config.n_layers)):
        pre = f"layer{i}."
        lc = cache.layers[i]
        dr2, dg2, db2 = kernels.layer_norm_backward(dy, lc.r2, params[pre + "ln2_g"], config.ln_eps)
        acc(pre + "ln2_g", dg2)
        acc(pre + "ln2_b", db2)
        dh_total = dr2.copy()
        dffn = dr2
        if lc.ffn_out_mask is not None:
            dffn = dffn * lc.ffn_out_mask
        acc(pre + "w2", lc.g.T @ dffn)
        acc(pre + "b2", dffn.sum(axis=0))
        dg = dffn @ params[pre + "w2"].T
        df1 = kernels.gelu_backward(np.ascontiguousarray(dg), lc.f1)
        acc(pre + "w1", lc.h.T @ df1)
        acc(pre + "b1", df1.sum(axis=0))
        dh_total += df1 @ params[pre + "w1"].T

        dr1, dg1, db1 = kernels.layer_norm_backward(
            dh_total, lc.r1, params[pre + "ln1_g"], config.ln_eps
        )
        acc(pre + "ln1_g", dg1)
        acc(pre + "ln1_b", db1)
        dx = dr1.copy()
        dattn = dr1
        if lc.attn_out_mask is not None:
            dattn = dattn * lc.attn_out_mask
        acc(pre + "wo", lc.ctx_flat.T @ dattn)
        acc(pre + "bo", dattn.sum(axis=0))
        dctx_flat = dattn @ params[pre + "wo"].T
        dctx = np.ascontiguousarray(
            dctx_flat.reshape(B, S, nh, dh).transpose(0, 2, 1, 3)
        )
        probs_used = lc.probs_dropped if lc.probs_dropped is not None else lc.probs
        dprobs_used = dctx @ lc.v.transpose(0, 1, 3, 2)
        dv = probs_used.transpose(0, 1, 3, 2) @ dctx
        dprobs = dprobs_used
        if lc.attn_mask is not None:
            dprobs = dprobs_used * lc.attn_mask
        dscores = kernels.attn_softmax_backward(np.ascontiguousarray(dprobs), lc.probs)
        dq = (dscores @ lc.k) * scale
        dk = (dscores.transpose(0, 1, 3, 2) @ lc.q) * scale
        dq_flat = np.ascontiguousarray(dq.transpose(0, 2, 1, 3)).reshape(B * S, -1)
        dk_flat = np.ascontiguousarray(dk.transpose(0, 2, 1, 3)).reshape(B * S, -1)
        dv_flat = np.ascontiguousarray(dv.transpose(0, 2, 1, 3)).reshape(B * S, -1)
        acc(pre + "wq", lc.x_in.T @ dq_flat)
        acc(pre + "bq", dq_flat.sum(axis=0))
        acc(pre + "wk", lc.x_in.T @ dk_flat)
        acc(pre + "bk", dk_flat.sum(axis=0))
        acc(pre + "wv", lc.x_in.T @ dv_flat)
        acc(pre + "bv", dv_flat.sum(axis=0))
        dx += dq_flat @ params[pre + "wq"].T
        dx += dk_flat @ params[pre + "wk"].T
        dx += dv_flat @ params[pre + "wv"].T
        dy = dx

    dx0 = dy.reshape(B, S, -1)
    if cache.emb_mask is not None:
        dx0 = dx0 * cache.emb_mask
    demb, dg0, db0 = kernels.layer_norm_backward(
        np.ascontiguousarray(dx0.reshape(B * S, -1)),
        cache.emb_sum.reshape(B * S, -1),
        params["emb_ln_g"],
        config.ln_eps,
    )
    acc("emb_ln_g", dg0)
    acc("emb_ln_b", db0)
    if "tok_emb" not in grads:
        grads["tok_emb"] = np.zeros_like(params["tok_emb"])
    kernels.add_at_rows(
        grads["tok_emb"], cache.ids.reshape(-1), np.ascontiguousarray(demb)
    )
    dpos = demb.reshape(B, S, -1).sum(axis=0)
    if "pos_emb" not in grads:
        grads["pos_emb"] = np.zeros_like(params["pos_emb"])
    grads["pos_emb"][:S] += dpos
    return grads
