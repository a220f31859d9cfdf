"""MLM pretraining over the formal corpus.

The pretraining texts concatenate rendered dataset states with every
premise's argument-list and goal texts.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .corpus import Corpus, Proof, build_dataset, render_premise
from .model import (
    AdamWState,
    EncoderConfig,
    OptimizerConfig,
    adamw_update,
    init_params,
    make_mask_plan,
    mlm_loss_and_grads,
    pad_batch,
)
from .tokenizer import Vocabulary, encode


def build_pretrain_texts(corpus: Corpus, proofs: Sequence[Proof]) -> list[str]:
    texts = [pair.rendered for pair in build_dataset(proofs, corpus).pairs]
    for p in corpus.premises:
        args_text, goal_text, _ = render_premise(p)
        if args_text:
            texts.append(args_text)
        texts.append(goal_text)
    return texts


def pretrain(
    texts: Sequence[str],
    vocab: Vocabulary,
    config: EncoderConfig,
    steps: int,
    batch_size: int = 16,
    lr: float = 5e-5,
    seed: int = 0,
    params: dict[str, np.ndarray] | None = None,
    wrap_specials: bool = False,
) -> tuple[dict[str, np.ndarray], list[float]]:
    """Train from scratch (or continue from params) for a fixed step count.

    wrap_specials surrounds each sequence with [CLS] ... [SEP]; used for
    the re-ranker encoder so the CLS slot carries a trained representation.
    """
    if not texts:
        raise ValueError("no pretraining texts")
    budget = config.max_positions - 2 if wrap_specials else config.max_positions
    seqs = [
        [vocab.cls_id] + ids + [vocab.sep_id] if wrap_specials else ids
        for t in texts
        if (ids := encode(t, vocab, max_len=budget))
    ]
    if not seqs:
        raise ValueError("pretraining texts tokenize to nothing")
    rng = np.random.default_rng(seed)
    if params is None:
        params = init_params(config.with_(seed=seed))
    opt_cfg = OptimizerConfig(
        lr=lr, warmup_steps=max(1, steps // 10), total_steps=steps
    )
    state = AdamWState()
    losses: list[float] = []
    order: list[int] = []
    for _ in range(steps):
        if len(order) < batch_size:
            order = list(rng.permutation(len(seqs))) + order
        take, order = order[:batch_size], order[batch_size:]
        batch = [seqs[i] for i in take]
        ids, lens = pad_batch(batch, pad_id=vocab.pad_id)
        plan = make_mask_plan(
            ids,
            lens,
            rng,
            mask_id=vocab.mask_id,
            vocab_size=len(vocab),
            special_ids=vocab.special_ids,
            never_mask={vocab.cls_id, vocab.sep_id} if wrap_specials else frozenset(),
        )
        loss, grads = mlm_loss_and_grads(
            params, config, plan, lens, train=True, rng=rng
        )
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite MLM loss at step {len(losses) + 1}")
        adamw_update(params, grads, state, opt_cfg)
        losses.append(loss)
    return params, losses
