"""Masked-language-model objective over the encoder.

Masking follows the BERT scheme: 15% of non-pad positions, of which 80%
become [MASK], 10% a random non-special token, 10% stay unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from .config import EncoderConfig
from .encoder import backward_batch, forward_batch

MASK_RATE = 0.15


@dataclass
class MaskPlan:
    input_ids: np.ndarray  # ids with masking applied, (B, S)
    positions: np.ndarray  # bool (B, S), True where loss is taken
    labels: np.ndarray  # original ids, only meaningful where positions

    @property
    def n_masked(self) -> int:
        return int(self.positions.sum())


def make_mask_plan(
    ids: np.ndarray,
    lens: np.ndarray,
    rng: np.random.Generator,
    mask_id: int,
    vocab_size: int,
    special_ids: frozenset[int] | set[int] = frozenset(),
    mask_rate: float = MASK_RATE,
    never_mask: frozenset[int] | set[int] = frozenset(),
) -> MaskPlan:
    B, S = ids.shape
    eligible = np.arange(S)[None, :] < lens[:, None]
    if never_mask:
        eligible &= ~np.isin(ids, list(never_mask))
    flat_eligible = np.flatnonzero(eligible.reshape(-1))
    if flat_eligible.size == 0:
        raise ValueError("no maskable positions in batch")
    n_mask = max(1, int(round(mask_rate * flat_eligible.size)))
    chosen = rng.choice(flat_eligible, size=n_mask, replace=False)

    positions = np.zeros(B * S, dtype=bool)
    positions[chosen] = True
    labels = ids.reshape(-1).copy()
    input_ids = ids.reshape(-1).copy()

    ordinary = np.array(
        [t for t in range(vocab_size) if t not in special_ids], dtype=np.int64
    )
    u = rng.random(n_mask)
    for pos, draw in zip(chosen, u):
        if draw < 0.8:
            input_ids[pos] = mask_id
        elif draw < 0.9:
            input_ids[pos] = int(ordinary[rng.integers(0, len(ordinary))])
        # else: keep the original token
    return MaskPlan(
        input_ids=input_ids.reshape(B, S),
        positions=positions.reshape(B, S),
        labels=labels.reshape(B, S),
    )


def _head_forward(params, config, h_m):
    t1 = h_m @ params["mlm.dense_w"] + params["mlm.dense_b"]
    tg = kernels.gelu(t1)
    tn = kernels.layer_norm(tg, params["mlm.ln_g"], params["mlm.ln_b"], config.ln_eps)
    logits = tn @ params["mlm.out_w"] + params["mlm.out_b"]
    return t1, tg, tn, logits


def mlm_loss_and_grads(
    params: dict[str, np.ndarray],
    config: EncoderConfig,
    plan: MaskPlan,
    lens: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
    compute_grads: bool = True,
) -> tuple[float, dict[str, np.ndarray] | None]:
    """Mean cross-entropy at masked positions, with exact gradients."""
    if plan.n_masked < 1:
        raise ValueError("mask plan selects no positions")
    B, S = plan.input_ids.shape
    dtype = np.dtype(config.dtype)
    cache = forward_batch(params, config, plan.input_ids, lens, train=train, rng=rng)
    flat_pos = np.flatnonzero(plan.positions.reshape(-1))
    h_m = np.ascontiguousarray(cache.last_hidden.reshape(B * S, -1)[flat_pos])
    labels = plan.labels.reshape(-1)[flat_pos]
    t1, tg, tn, logits = _head_forward(params, config, h_m)

    M = len(flat_pos)
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    logp = logits - lse
    loss = float(-logp[np.arange(M), labels].mean())
    if not compute_grads:
        return loss, None

    probs = np.exp(logp)
    dlogits = probs
    dlogits[np.arange(M), labels] -= 1.0
    dlogits = (dlogits / M).astype(dtype)

    grads: dict[str, np.ndarray] = {}
    grads["mlm.out_w"] = tn.T @ dlogits
    grads["mlm.out_b"] = dlogits.sum(axis=0)
    dtn = dlogits @ params["mlm.out_w"].T
    dtg, dlng, dlnb = kernels.layer_norm_backward(
        np.ascontiguousarray(dtn), tg, params["mlm.ln_g"], config.ln_eps
    )
    grads["mlm.ln_g"] = dlng
    grads["mlm.ln_b"] = dlnb
    dt1 = kernels.gelu_backward(dtg, t1)
    grads["mlm.dense_w"] = h_m.T @ dt1
    grads["mlm.dense_b"] = dt1.sum(axis=0)
    dh_m = dt1 @ params["mlm.dense_w"].T

    d_last = np.zeros((B * S, config.hidden), dtype=dtype)
    d_last[flat_pos] = dh_m
    backward_batch(
        params, config, cache, d_last=d_last.reshape(B, S, -1), grads=grads
    )
    return loss, grads


def mlm_loss(params, config, plan, lens) -> float:
    loss, _ = mlm_loss_and_grads(params, config, plan, lens, compute_grads=False)
    return loss
