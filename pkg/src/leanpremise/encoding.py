"""Glue between tokenizer and encoder: a loaded model bundle plus batched
text-to-embedding helpers shared by the retriever, re-ranker, and service."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import EncoderConfig, forward_batch, load_checkpoint, pad_batch
from .model.encoder import ForwardCache
from .model.params import checkpoint_fingerprint
from .tokenizer import Vocabulary, encode, load_vocabulary


class EmbeddingError(ValueError):
    pass


@dataclass
class EncoderBundle:
    """Parameters + config + vocabulary, ready for encoding."""

    params: dict[str, np.ndarray]
    config: EncoderConfig
    vocab: Vocabulary
    fingerprint: str = ""
    head: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def load(cls, ckpt_path, vocab_path) -> "EncoderBundle":
        params, config, header = load_checkpoint(ckpt_path)
        vocab = load_vocabulary(vocab_path)
        head = {k: params.pop(k) for k in list(params) if k.startswith("head.")}
        return cls(
            params=params,
            config=config,
            vocab=vocab,
            fingerprint=checkpoint_fingerprint(ckpt_path),
            head=head,
        )


def encode_text(bundle: EncoderBundle, text: str, max_len: int | None = None) -> list[int]:
    limit = bundle.config.max_positions if max_len is None else min(max_len, bundle.config.max_positions)
    ids = encode(text, bundle.vocab, max_len=limit)
    if not ids:
        raise EmbeddingError(f"text tokenizes to nothing: {text!r}")
    return ids


def forward_ids(
    bundle: EncoderBundle,
    id_seqs: list[list[int]],
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[ForwardCache, np.ndarray]:
    ids, lens = pad_batch(id_seqs, pad_id=bundle.vocab.pad_id)
    cache = forward_batch(bundle.params, bundle.config, ids, lens, train=train, rng=rng)
    return cache, lens


def unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L2-normalize rows; returns (units, norms). Zero rows raise."""
    norms = np.linalg.norm(x, axis=-1)
    if (norms < 1e-12).any():
        raise EmbeddingError("zero-norm embedding")
    return x / norms[..., None], norms


def unit_rows_backward(d_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Cotangent of row normalization: (du - u (u . du)) / ||x||."""
    inner = (unit * d_unit).sum(axis=-1, keepdims=True)
    return (d_unit - unit * inner) / norms[..., None]


