"""Decoupled-weight-decay adaptive-moment optimizer with a linear
warmup+decay schedule and gradient accumulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_steps: int = 0
    total_steps: int = 0  # 0: constant lr after warmup


def linear_lr(cfg: OptimizerConfig, step: int) -> float:
    """lr at 1-based optimizer step: linear warmup, then linear decay to 0."""
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    if cfg.total_steps and cfg.total_steps > cfg.warmup_steps:
        frac = (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)
        return cfg.lr * max(0.0, frac)
    return cfg.lr


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_update(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamWState,
    cfg: OptimizerConfig,
) -> float:
    """One in-place update; returns the lr used. Iteration order is fixed."""
    state.step += 1
    lr = linear_lr(cfg, state.step)
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name in sorted(params):
        g = grads.get(name)
        if g is None:
            continue
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        if cfg.weight_decay:
            p -= p.dtype.type(lr * cfg.weight_decay) * p
        p -= (lr * mhat / (np.sqrt(vhat) + cfg.eps)).astype(p.dtype)
    return lr


def train_step(
    micro_batches: Sequence,
    loss_and_grads: Callable[[object], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    state: AdamWState,
    cfg: OptimizerConfig,
) -> float:
    """Accumulate mean gradients over micro-batches, then update once.

    Equivalent (for equal-size micro-batches and mean-reduction losses)
    to a single step on their concatenation.
    """
    if not micro_batches:
        raise TrainingError("no micro-batches supplied")
    total: dict[str, np.ndarray] = {}
    losses = []
    for mb in micro_batches:
        loss, grads = loss_and_grads(mb)
        if not np.isfinite(loss):
            raise TrainingError(
                f"non-finite loss {loss!r} at optimizer step {state.step + 1}"
            )
        losses.append(loss)
        for k, g in grads.items():
            if k in total:
                total[k] += g
            else:
                total[k] = g.copy()
    inv = 1.0 / len(micro_batches)
    for k in total:
        total[k] *= inv
    adamw_update(params, total, state, cfg)
    return float(np.mean(losses))
