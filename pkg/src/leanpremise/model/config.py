"""Encoder hyperparameters.

Desk-scale defaults keep training feasible on a laptop; the paper-scale
configuration (6 layers, 12 heads, hidden 768, intermediate 3072) is
available through the constructors below.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    n_layers: int = 2
    n_heads: int = 4
    hidden: int = 128
    intermediate: int = 512
    max_positions: int = 128
    dropout: float = 0.1
    seed: int = 0
    dtype: str = "float32"
    ln_eps: float = 1e-12

    def __post_init__(self):
        if self.hidden % self.n_heads != 0:
            raise ValueError(
                f"hidden ({self.hidden}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.max_positions < 1:
            raise ValueError("max_positions must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)

    def with_(self, **kw) -> "EncoderConfig":
        return replace(self, **kw)


def paper_retriever_config(vocab_size: int = 30522, **kw) -> EncoderConfig:
    base = dict(
        vocab_size=vocab_size,
        n_layers=6,
        n_heads=12,
        hidden=768,
        intermediate=3072,
        max_positions=512,
    )
    base.update(kw)
    return EncoderConfig(**base)


def paper_reranker_config(vocab_size: int = 30522, **kw) -> EncoderConfig:
    base = dict(
        vocab_size=vocab_size,
        n_layers=6,
        n_heads=12,
        hidden=768,
        intermediate=3072,
        max_positions=1024,
    )
    base.update(kw)
    return EncoderConfig(**base)
