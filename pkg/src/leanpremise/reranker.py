"""Context-aware re-ranking: cross-encoder relevance scoring of
(state, premise) pairs, hard-negative mining from the retriever's top-k1,
group-wise cross-entropy training, and the two-stage rerank step.

The training normalizer follows the literal probability-ratio form
-log(Pr+ / sum Pr); a softmax-over-logits variant is available behind
``normalizer="softmax"`` but is not the default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Dataset, DatasetPair, Premise, ProofState, render_premise, render_state
from .encoding import EncoderBundle, encode_text, forward_ids
from .model import AdamWState, OptimizerConfig, backward_batch, train_step
from .retriever import PremiseIndex, embed_state, search

STATE_BASE_BUDGET = 512
PAPER_CONTENT_BUDGET = 1021  # 1024 positions minus CLS and two SEPs


class RerankError(ValueError):
    pass


@dataclass(frozen=True)
class RerankTrainConfig:
    batch_size: int = 2
    grad_accum: int = 8
    group_size: int = 8  # 1 positive + 7 hard negatives
    k1: int = 100
    rerank_depth: int = 20
    epochs: int = 1
    seed: int = 0
    lr: float = 2e-5
    weight_decay: float = 0.01
    warmup_frac: float = 0.1
    normalizer: str = "probability"  # or "softmax"

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.rerank_depth > self.k1:
            raise ValueError("rerank depth cannot exceed the hard-negative pool k1")
        if self.normalizer not in ("probability", "softmax"):
            raise ValueError(f"unknown normalizer {self.normalizer!r}")


def split_budget(state_len: int, premise_len: int, max_positions: int) -> tuple[int, int]:
    """Token allowances for (state, premise) under the shared budget.

    The state may claim up to 512 tokens at the paper's 1024-position
    budget (proportionally less for smaller models); whichever side is
    short donates its slack to the other. CLS and both SEPs are always
    preserved, so take_s + take_p + 3 <= max_positions.
    """
    budget = max_positions - 3
    if budget < 2:
        raise RerankError(f"max_positions {max_positions} leaves no room for content")
    if budget >= PAPER_CONTENT_BUDGET:
        s_base = STATE_BASE_BUDGET
    else:
        s_base = max(1, (budget * STATE_BASE_BUDGET) // PAPER_CONTENT_BUDGET)
    s_take = min(state_len, max(s_base, budget - premise_len))
    p_take = min(premise_len, budget - s_take)
    return s_take, p_take


def build_rerank_input(
    state_ids: list[int], premise_ids: list[int], bundle: EncoderBundle
) -> list[int]:
    """[CLS] state [SEP] premise [SEP], truncated head-first per side."""
    v = bundle.vocab
    s_take, p_take = split_budget(
        len(state_ids), len(premise_ids), bundle.config.max_positions
    )
    return (
        [v.cls_id]
        + state_ids[:s_take]
        + [v.sep_id]
        + premise_ids[:p_take]
        + [v.sep_id]
    )


def encode_pair(state: ProofState | str, premise: Premise, bundle: EncoderBundle) -> list[int]:
    state_text = state if isinstance(state, str) else render_state(state)
    _, _, full_text = render_premise(premise)
    state_ids = encode_text(bundle, state_text)
    premise_ids = encode_text(bundle, full_text)
    return build_rerank_input(state_ids, premise_ids, bundle)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relevance_batch(
    inputs: list[list[int]],
    bundle: EncoderBundle,
    head: dict[str, np.ndarray],
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    cache, _ = forward_ids(bundle, inputs, train=train, rng=rng)
    z = cache.cls_hidden @ head["head.w"] + head["head.b"][0]
    return _sigmoid(z), z, cache


def relevance(
    state: ProofState | str,
    premise: Premise,
    bundle: EncoderBundle,
    head: dict[str, np.ndarray],
) -> float:
    """Pr(state, premise) via the sigmoid of the affine CLS projection."""
    probs, _, _ = relevance_batch([encode_pair(state, premise, bundle)], bundle, head)
    return float(probs[0])


def mine_hard_negatives(
    pair: DatasetPair,
    index: PremiseIndex,
    retriever: EncoderBundle,
    corpus: Corpus,
    k1: int,
    n_negatives: int,
    rng: np.random.Generator,
) -> list[int]:
    """Sample negatives from the retriever's top-k1, topping up from the
    corpus when too few non-positive candidates exist."""
    svec = embed_state(pair.rendered, retriever)
    top = search(index, svec, k1)
    candidates = [pid for pid, _ in top if pid not in pair.positives]
    picked: list[int] = []
    if candidates:
        take = min(n_negatives, len(candidates))
        idx = rng.choice(len(candidates), size=take, replace=False)
        picked = [candidates[int(i)] for i in idx]
    if len(picked) < n_negatives:
        exclude = set(pair.positives) | set(picked)
        pool = [p.id for p in corpus.premises if p.id not in exclude]
        need = n_negatives - len(picked)
        if len(pool) < need:
            raise RerankError("corpus too small to complete the negative sample")
        idx = rng.choice(len(pool), size=need, replace=False)
        picked.extend(pool[int(i)] for i in idx)
    return picked


@dataclass
class RerankGroup:
    """One training group: input id sequences, positive in slot 0."""

    inputs: list[list[int]]


def rerank_loss_from_probs(probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Literal ratio form for one group: -log(Pr+ / sum Pr), positive at
    slot 0; returns (loss, dloss/dprobs). Pure function of the probabilities."""
    total = float(probs.sum())
    if total <= 0.0:
        raise RerankError("all candidate probabilities are zero")
    loss = float(-np.log(probs[0] / total))
    dp = np.full(len(probs), 1.0 / total)
    dp[0] -= 1.0 / probs[0]
    return loss, dp


def rerank_loss_and_grads(
    groups: list[RerankGroup],
    bundle: EncoderBundle,
    head: dict[str, np.ndarray],
    normalizer: str = "probability",
    compute_grads: bool = True,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray] | None]:
    """Mean group-wise cross-entropy; the positive occupies slot 0."""
    if not groups:
        raise RerankError("no groups")
    sizes = [len(g.inputs) for g in groups]
    flat_inputs = [seq for g in groups for seq in g.inputs]
    probs, z, cache = relevance_batch(flat_inputs, bundle, head, train=train, rng=rng)

    dtype = np.dtype(bundle.config.dtype)
    n = len(groups)
    loss = 0.0
    dz = np.zeros_like(z)
    start = 0
    for size in sizes:
        seg_p = probs[start : start + size]
        seg_z = z[start : start + size]
        if normalizer == "probability":
            seg_loss, dp = rerank_loss_from_probs(seg_p)
            loss += seg_loss
            if compute_grads:
                dz[start : start + size] = dp * seg_p * (1.0 - seg_p)
        else:
            m = seg_z.max()
            lse = m + np.log(np.exp(seg_z - m).sum())
            loss += -(seg_z[0] - lse)
            if compute_grads:
                soft = np.exp(seg_z - lse)
                soft[0] -= 1.0
                dz[start : start + size] = soft
        start += size
    loss = float(loss / n)
    if not compute_grads:
        return loss, None

    dz = (dz / n).astype(dtype)
    grads: dict[str, np.ndarray] = {
        "head.w": cache.cls_hidden.T @ dz,
        "head.b": np.array([dz.sum()], dtype=dtype),
    }
    d_cls = dz[:, None] * head["head.w"][None, :]
    backward_batch(bundle.params, bundle.config, cache, d_cls=d_cls, grads=grads)
    return loss, grads


def rerank(
    state: ProofState | str,
    cfr_results: list[tuple[int, float]],
    corpus: Corpus,
    bundle: EncoderBundle,
    head: dict[str, np.ndarray],
    k: int,
) -> list[tuple[int, float]]:
    """Reorder retriever candidates by relevance; ties keep CFR order.

    Returns (premise_id, probability) pairs; the id set is always a
    subset of the CFR candidate ids.
    """
    if k > len(cfr_results):
        raise RerankError(f"k={k} exceeds the {len(cfr_results)} CFR candidates")
    if not cfr_results:
        return []
    state_text = state if isinstance(state, str) else render_state(state)
    state_ids = encode_text(bundle, state_text)
    inputs = []
    for pid, _ in cfr_results:
        _, _, full_text = render_premise(corpus[pid])
        inputs.append(build_rerank_input(state_ids, encode_text(bundle, full_text), bundle))
    probs, _, _ = relevance_batch(inputs, bundle, head)
    order = sorted(range(len(cfr_results)), key=lambda i: (-probs[i], i))
    return [(cfr_results[i][0], float(probs[i])) for i in order[:k]]


def train_reranker(
    dataset: Dataset,
    corpus: Corpus,
    retriever: EncoderBundle,
    index: PremiseIndex,
    bundle: EncoderBundle,
    head: dict[str, np.ndarray],
    cfg: RerankTrainConfig,
) -> list[float]:
    """Fine-tune the cross-encoder on retriever-mined hard negatives.

    Mutates bundle.params and head in place; returns the loss curve.
    """
    if not dataset.pairs:
        raise RerankError("empty dataset")
    rng = np.random.default_rng(cfg.seed)

    state_ids_cache = [encode_text(bundle, pair.rendered) for pair in dataset.pairs]
    premise_ids_cache: dict[int, list[int]] = {}

    def premise_ids(pid: int) -> list[int]:
        if pid not in premise_ids_cache:
            _, _, full_text = render_premise(corpus[pid])
            premise_ids_cache[pid] = encode_text(bundle, full_text)
        return premise_ids_cache[pid]

    # the retriever is frozen during reranker training: mine the top-k1 once
    top_cache: list[list[int]] = []
    for pair in dataset.pairs:
        svec = embed_state(pair.rendered, retriever)
        top_cache.append([pid for pid, _ in search(index, svec, cfg.k1)])

    instances = [
        (pi, pos)
        for pi, pair in enumerate(dataset.pairs)
        for pos in sorted(pair.positives)
    ]

    def make_group(pi: int, pos: int) -> RerankGroup:
        pair = dataset.pairs[pi]
        candidates = [pid for pid in top_cache[pi] if pid not in pair.positives]
        n_neg = cfg.group_size - 1
        picked: list[int] = []
        if candidates:
            take = min(n_neg, len(candidates))
            idx = rng.choice(len(candidates), size=take, replace=False)
            picked = [candidates[int(i)] for i in idx]
        if len(picked) < n_neg:
            exclude = set(pair.positives) | set(picked)
            pool = [p.id for p in corpus.premises if p.id not in exclude]
            need = n_neg - len(picked)
            if len(pool) < need:
                raise RerankError("corpus too small to complete the negative sample")
            idx = rng.choice(len(pool), size=need, replace=False)
            picked.extend(pool[int(i)] for i in idx)
        sids = state_ids_cache[pi]
        inputs = [build_rerank_input(sids, premise_ids(pid), bundle) for pid in [pos] + picked]
        return RerankGroup(inputs=inputs)

    n_micros = -(-len(instances) // cfg.batch_size)
    steps_per_epoch = max(1, -(-n_micros // cfg.grad_accum))
    opt_cfg = OptimizerConfig(
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        warmup_steps=max(1, int(cfg.warmup_frac * steps_per_epoch * cfg.epochs)),
        total_steps=steps_per_epoch * cfg.epochs,
    )
    opt_state = AdamWState()
    merged = dict(bundle.params)
    merged.update(head)
    curve: list[float] = []

    def batch_loss(groups: list[RerankGroup]):
        return rerank_loss_and_grads(
            groups, bundle, head, normalizer=cfg.normalizer, train=True, rng=rng
        )

    for _ in range(cfg.epochs):
        order = rng.permutation(len(instances))
        micros: list[list[RerankGroup]] = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = [instances[int(i)] for i in order[start : start + cfg.batch_size]]
            micros.append([make_group(pi, pos) for pi, pos in chunk])
            if len(micros) == cfg.grad_accum:
                curve.append(train_step(micros, batch_loss, merged, opt_state, opt_cfg))
                micros = []
        if micros:
            curve.append(train_step(micros, batch_loss, merged, opt_state, opt_cfg))
    return curve
