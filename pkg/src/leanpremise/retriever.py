"""Context-free retrieval: dual encoding, the two similarity modes, the
exact top-k premise index, and contrastive (InfoNCE) training with
homogeneous in-batch negatives.

Similarity modes: CONVENTIONAL scores the cosine of full-text embeddings;
FINE_GRAINED scores the state unit vector against the average of the unit
argument-list and unit goal embeddings (so premise vectors have norm <= 1
and are stored exactly as composed, without re-normalization).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, Dataset, Premise, ProofState, render_premise, render_state
from .encoding import (
    EmbeddingError,
    EncoderBundle,
    encode_text,
    forward_ids,
    unit_rows,
    unit_rows_backward,
)
from .model import AdamWState, OptimizerConfig, backward_batch, train_step

INDEX_MAGIC = b"LEANPREMISE-INDEX-1\n"
PREMISE_MAX_LEN = 256


class SimilarityMode(str, Enum):
    CONVENTIONAL = "conv"
    FINE_GRAINED = "fine"


class IndexError_(ValueError):
    pass


# ---------------------------------------------------------------------------
# Embedding


def embed_state(state: ProofState | str, bundle: EncoderBundle) -> np.ndarray:
    """Unit-norm embedding of a proof state (or pre-rendered state text)."""
    text = state if isinstance(state, str) else render_state(state)
    cache, _ = forward_ids(bundle, [encode_text(bundle, text)])
    units, _ = unit_rows(cache.pooled)
    return units[0]


def embed_premise(
    p: Premise, bundle: EncoderBundle, mode: SimilarityMode
) -> np.ndarray:
    """Premise vector per the active similarity mode."""
    args_text, goal_text, full_text = render_premise(p)
    if mode is SimilarityMode.CONVENTIONAL:
        cache, _ = forward_ids(bundle, [encode_text(bundle, full_text, PREMISE_MAX_LEN)])
        units, _ = unit_rows(cache.pooled)
        return units[0]
    texts = [goal_text] if not args_text else [args_text, goal_text]
    cache, _ = forward_ids(
        bundle, [encode_text(bundle, t, PREMISE_MAX_LEN) for t in texts]
    )
    units, _ = unit_rows(cache.pooled)
    if not args_text:
        return units[0]
    return 0.5 * (units[0] + units[1])


def score(state_vec: np.ndarray, premise_vec: np.ndarray) -> float:
    return float(state_vec @ premise_vec)


# ---------------------------------------------------------------------------
# Index


@dataclass
class PremiseIndex:
    matrix: np.ndarray  # (N, hidden) float32
    ids: list[int]
    names: list[str]
    mode: SimilarityMode
    fingerprint: str = ""
    _name_set: set[str] = field(default_factory=set, repr=False)

    def __post_init__(self):
        if not self._name_set:
            self._name_set = set(self.names)

    def __len__(self) -> int:
        return len(self.ids)


def build_index(
    corpus: Corpus,
    bundle: EncoderBundle,
    mode: SimilarityMode,
    batch_size: int = 64,
) -> PremiseIndex:
    """Embed every premise; row order follows premise ids."""
    rows = []
    for start in range(0, len(corpus.premises), batch_size):
        chunk = corpus.premises[start : start + batch_size]
        rows.extend(_embed_premise_chunk(chunk, bundle, mode))
    matrix = (
        np.stack(rows).astype(np.float32)
        if rows
        else np.zeros((0, bundle.config.hidden), dtype=np.float32)
    )
    return PremiseIndex(
        matrix=matrix,
        ids=[p.id for p in corpus.premises],
        names=[p.name for p in corpus.premises],
        mode=mode,
        fingerprint=bundle.fingerprint,
    )


def _embed_premise_chunk(
    chunk: Sequence[Premise], bundle: EncoderBundle, mode: SimilarityMode
) -> list[np.ndarray]:
    """One batched forward for a chunk of premises (both component texts)."""
    seqs = []
    spans = []  # (has_args, first_component_row)
    for p in chunk:
        args_text, goal_text, full_text = render_premise(p)
        if mode is SimilarityMode.CONVENTIONAL:
            spans.append((False, len(seqs)))
            seqs.append(encode_text(bundle, full_text, PREMISE_MAX_LEN))
        elif args_text:
            spans.append((True, len(seqs)))
            seqs.append(encode_text(bundle, args_text, PREMISE_MAX_LEN))
            seqs.append(encode_text(bundle, goal_text, PREMISE_MAX_LEN))
        else:
            spans.append((False, len(seqs)))
            seqs.append(encode_text(bundle, goal_text, PREMISE_MAX_LEN))
    if not seqs:
        return []
    cache, _ = forward_ids(bundle, seqs)
    units, _ = unit_rows(cache.pooled)
    out = []
    for has_args, row in spans:
        if has_args:
            out.append(0.5 * (units[row] + units[row + 1]))
        else:
            out.append(units[row])
    return out


def search(
    index: PremiseIndex, state_vec: np.ndarray, k: int
) -> list[tuple[int, float]]:
    """Exact top-k by dot product, descending; ties by ascending premise id."""
    if k < 1:
        raise IndexError_("k must be >= 1")
    n = len(index)
    if n == 0:
        return []
    scores = index.matrix @ state_vec.astype(index.matrix.dtype)
    id_arr = np.asarray(index.ids)
    order = np.lexsort((id_arr, -scores))
    top = order[: min(k, n)]
    return [(int(id_arr[i]), float(scores[i])) for i in top]


def insert_premise(
    index: PremiseIndex, p: Premise, bundle: EncoderBundle
) -> PremiseIndex:
    """Return a new index with the premise appended (copy-on-write snapshot)."""
    if p.name in index._name_set:
        raise IndexError_(f"premise {p.name!r} already indexed")
    vec = embed_premise(p, bundle, index.mode).astype(np.float32)
    matrix = np.vstack([index.matrix, vec[None, :]]) if len(index) else vec[None, :].copy()
    return PremiseIndex(
        matrix=matrix,
        ids=index.ids + [p.id],
        names=index.names + [p.name],
        mode=index.mode,
        fingerprint=index.fingerprint,
    )


def save_index(index: PremiseIndex, path) -> None:
    """Header JSON + little-endian float32 rows; id map in a JSON sidecar."""
    path = Path(path)
    header = {
        "format_version": 1,
        "dim": int(index.matrix.shape[1]) if index.matrix.size else 0,
        "count": len(index),
        "mode": index.mode.value,
        "encoder_fingerprint": index.fingerprint,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(np.ascontiguousarray(index.matrix, dtype="<f4").tobytes())
    with open(path.with_suffix(path.suffix + ".ids.json"), "w", encoding="utf-8") as fh:
        json.dump({"ids": index.ids, "names": index.names}, fh)
        fh.write("\n")


def load_index(path) -> PremiseIndex:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(INDEX_MAGIC))
        if magic != INDEX_MAGIC:
            raise IndexError_(f"{path}: not an index file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    count, dim = header["count"], header["dim"]
    matrix = np.frombuffer(payload, dtype="<f4", count=count * dim).reshape(count, dim).copy()
    with open(path.with_suffix(path.suffix + ".ids.json"), encoding="utf-8") as fh:
        sidecar = json.load(fh)
    return PremiseIndex(
        matrix=matrix,
        ids=list(sidecar["ids"]),
        names=list(sidecar["names"]),
        mode=SimilarityMode(header["mode"]),
        fingerprint=header["encoder_fingerprint"],
    )


# ---------------------------------------------------------------------------
# InfoNCE training


@dataclass(frozen=True)
class RetrieverTrainConfig:
    batch_size: int = 32
    group_size: int = 2  # candidates per query: 1 positive + (group_size - 1) sampled
    tau: float = 0.05
    epochs: int = 1
    seed: int = 0
    lr: float = 2e-5
    weight_decay: float = 0.01
    warmup_frac: float = 0.1
    grad_accum: int = 1
    mode: SimilarityMode = SimilarityMode.FINE_GRAINED

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class CandidateIds:
    premise_id: int
    goal: list[int]  # full text in CONVENTIONAL mode
    args: list[int] | None = None  # FINE_GRAINED only, None when no arguments


@dataclass
class InfoNCEBatch:
    state_ids: list[list[int]]
    candidates: list[CandidateIds]  # grouped: batch i owns [i*G, (i+1)*G), slot 0 positive
    group_size: int
    positives: list[frozenset[int]]  # all known positives per query, for masking


def encode_candidate(
    p: Premise, bundle: EncoderBundle, mode: SimilarityMode
) -> CandidateIds:
    args_text, goal_text, full_text = render_premise(p)
    if mode is SimilarityMode.CONVENTIONAL:
        return CandidateIds(premise_id=p.id, goal=encode_text(bundle, full_text, PREMISE_MAX_LEN))
    return CandidateIds(
        premise_id=p.id,
        goal=encode_text(bundle, goal_text, PREMISE_MAX_LEN),
        args=encode_text(bundle, args_text, PREMISE_MAX_LEN) if args_text else None,
    )


def _candidate_vectors(bundle, candidates, train, rng):
    """Embed all candidate component texts in one forward pass."""
    seqs = []
    spans = []
    for c in candidates:
        if c.args is not None:
            spans.append((True, len(seqs)))
            seqs.append(c.args)
            seqs.append(c.goal)
        else:
            spans.append((False, len(seqs)))
            seqs.append(c.goal)
    cache, _ = forward_ids(bundle, seqs, train=train, rng=rng)
    units, norms = unit_rows(cache.pooled)
    vecs = np.empty((len(candidates), units.shape[1]), dtype=units.dtype)
    for j, (has_args, row) in enumerate(spans):
        vecs[j] = 0.5 * (units[row] + units[row + 1]) if has_args else units[row]
    return vecs, units, norms, spans, cache


def pool_mask(batch: InfoNCEBatch) -> np.ndarray:
    """True where a candidate is masked out of a query's denominator pool:
    any slot (other than the query's own positive slot) holding one of the
    query's known positive premises."""
    B, G = len(batch.state_ids), batch.group_size
    mask = np.zeros((B, len(batch.candidates)), dtype=bool)
    for i in range(B):
        own = i * G
        for j, cand in enumerate(batch.candidates):
            if j != own and cand.premise_id in batch.positives[i]:
                mask[i, j] = True
    return mask


def infonce_from_sims(
    sims: np.ndarray, own_idx: np.ndarray, mask: np.ndarray, tau: float
) -> tuple[float, np.ndarray]:
    """Loss and d(loss)/d(sims) for the temperature-scaled contrastive
    objective, given the similarity matrix. Pure function of its inputs."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    B = sims.shape[0]
    logits = sims / tau
    neg_inf = np.finfo(sims.dtype).min
    masked_logits = np.where(mask, neg_inf, logits)
    m = masked_logits.max(axis=1, keepdims=True)
    e = np.exp(masked_logits - m)
    e[mask] = 0.0
    denom = e.sum(axis=1, keepdims=True)
    logp = masked_logits - (m + np.log(denom))
    rows = np.arange(B)
    loss = float(-logp[rows, own_idx].mean())
    dlogits = e / denom
    dlogits[rows, own_idx] -= 1.0
    dsims = (dlogits / (B * tau)).astype(sims.dtype)
    return loss, dsims


def infonce_loss_and_grads(
    bundle: EncoderBundle,
    batch: InfoNCEBatch,
    tau: float,
    compute_grads: bool = True,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray] | None]:
    """Eq-style temperature-scaled contrastive loss over the in-batch pool.

    The pool for query i is every candidate in the batch except those whose
    premise id is another known positive of i (the query's own positive
    slot always stays in).
    """
    B = len(batch.state_ids)
    G = batch.group_size

    state_cache, _ = forward_ids(bundle, batch.state_ids, train=train, rng=rng)
    s_units, s_norms = unit_rows(state_cache.pooled)
    c_vecs, c_units, c_norms, spans, cand_cache = _candidate_vectors(
        bundle, batch.candidates, train, rng
    )

    sims = s_units @ c_vecs.T  # (B, B*G)
    own_idx = np.arange(B) * G
    loss, dsims = infonce_from_sims(sims, own_idx, pool_mask(batch), tau)
    if not compute_grads:
        return loss, None

    d_s_units = dsims @ c_vecs
    d_c_vecs = dsims.T @ s_units

    d_s_pooled = unit_rows_backward(d_s_units, s_units, s_norms)
    d_c_units = np.zeros_like(c_units)
    for j, (has_args, row) in enumerate(spans):
        if has_args:
            d_c_units[row] += 0.5 * d_c_vecs[j]
            d_c_units[row + 1] += 0.5 * d_c_vecs[j]
        else:
            d_c_units[row] += d_c_vecs[j]
    d_c_pooled = unit_rows_backward(d_c_units, c_units, c_norms)

    grads: dict[str, np.ndarray] = {}
    backward_batch(bundle.params, bundle.config, state_cache, d_pooled=d_s_pooled, grads=grads)
    backward_batch(bundle.params, bundle.config, cand_cache, d_pooled=d_c_pooled, grads=grads)
    return loss, grads


def infonce_loss(bundle, batch, tau) -> float:
    loss, _ = infonce_loss_and_grads(bundle, batch, tau, compute_grads=False)
    return loss


def _sample_negatives(
    corpus: Corpus, exclude: frozenset[int], n: int, rng: np.random.Generator
) -> list[int]:
    """Uniform corpus negatives excluding the query's positives."""
    pool = [p.id for p in corpus.premises if p.id not in exclude]
    if len(pool) < n:
        raise ValueError(f"corpus too small to sample {n} negatives")
    picked = rng.choice(len(pool), size=n, replace=False)
    return [pool[int(i)] for i in picked]


def train_retriever(
    dataset: Dataset,
    corpus: Corpus,
    bundle: EncoderBundle,
    cfg: RetrieverTrainConfig,
) -> list[float]:
    """Contrastive fine-tuning over all (state, positive) instances.

    Mutates bundle.params in place; returns the per-step loss curve.
    """
    if not dataset.pairs:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    instances = [
        (pi, pos)
        for pi, pair in enumerate(dataset.pairs)
        for pos in sorted(pair.positives)
    ]
    state_ids_cache = [
        encode_text(bundle, pair.rendered) for pair in dataset.pairs
    ]
    cand_cache: dict[int, CandidateIds] = {}

    def candidate(pid: int) -> CandidateIds:
        if pid not in cand_cache:
            cand_cache[pid] = encode_candidate(corpus[pid], bundle, cfg.mode)
        return cand_cache[pid]

    n_micros = -(-len(instances) // cfg.batch_size)
    steps_per_epoch = max(1, -(-n_micros // cfg.grad_accum))
    opt_cfg = OptimizerConfig(
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        warmup_steps=max(1, int(cfg.warmup_frac * steps_per_epoch * cfg.epochs)),
        total_steps=steps_per_epoch * cfg.epochs,
    )
    state = AdamWState()
    curve: list[float] = []

    def batch_loss(b: InfoNCEBatch):
        return infonce_loss_and_grads(bundle, b, cfg.tau, train=True, rng=rng)

    for _ in range(cfg.epochs):
        order = rng.permutation(len(instances))
        micro_size = cfg.batch_size
        micros: list[InfoNCEBatch] = []
        for start in range(0, len(order), micro_size):
            chunk = [instances[int(i)] for i in order[start : start + micro_size]]
            states, cands, positives = [], [], []
            for pi, pos in chunk:
                pair = dataset.pairs[pi]
                states.append(state_ids_cache[pi])
                positives.append(pair.positives)
                cands.append(candidate(pos))
                for neg in _sample_negatives(
                    corpus, pair.positives, cfg.group_size - 1, rng
                ):
                    cands.append(candidate(neg))
            micros.append(
                InfoNCEBatch(
                    state_ids=states,
                    candidates=cands,
                    group_size=cfg.group_size,
                    positives=positives,
                )
            )
            if len(micros) == cfg.grad_accum:
                curve.append(train_step(micros, batch_loss, bundle.params, state, opt_cfg))
                micros = []
        if micros:
            curve.append(train_step(micros, batch_loss, bundle.params, state, opt_cfg))
    return curve
