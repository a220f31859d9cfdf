"""Train/val/test split strategies over proofs.

RD samples uniformly; PL/PF sample val/test by sequential weighted draws
without replacement (weight = proof length / premise frequency,
renormalized after each draw; zero-weight proofs never enter val/test);
RI samples uniformly and then drops from train every proof whose
positives intersect the val/test positives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Proof, proof_length, premise_freq

STRATEGIES = ("RD", "RI", "PL", "PF")


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    strategy: str
    seed: int
    n_val: int
    n_test: int

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise SplitError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.n_val < 0 or self.n_test < 0:
            raise SplitError("n_val and n_test must be >= 0")


def _positive_names(p: Proof) -> set[str]:
    names: set[str] = set()
    for step in p.steps:
        names.update(step.premises_used)
    return names


def _weighted_sample_without_replacement(
    weights: np.ndarray, n: int, rng: np.random.Generator
) -> list[int]:
    """Sequential draws, probability proportional to remaining weight."""
    weights = weights.astype(np.float64).copy()
    positive = int((weights > 0).sum())
    if n > positive:
        raise SplitError(
            f"need {n} draws but only {positive} proofs have positive weight"
        )
    chosen: list[int] = []
    for _ in range(n):
        total = weights.sum()
        cum = np.cumsum(weights)
        r = rng.random() * total
        idx = int(np.searchsorted(cum, r, side="right"))
        idx = min(idx, len(weights) - 1)
        # guard against landing on an exhausted slot through fp round-off
        while weights[idx] <= 0 and idx + 1 < len(weights):
            idx += 1
        if weights[idx] <= 0:
            idx = int(np.flatnonzero(weights > 0)[-1])
        chosen.append(idx)
        weights[idx] = 0.0
    return chosen


def split(
    proofs: Sequence[Proof], spec: SplitSpec
) -> tuple[list[Proof], list[Proof], list[Proof]]:
    """Partition proofs into (train, val, test) per the strategy.

    Deterministic given (proofs, spec). Partitions preserve the input
    order within each side.
    """
    n = len(proofs)
    k = spec.n_val + spec.n_test
    if k > n:
        raise SplitError(f"n_val + n_test = {k} exceeds {n} proofs")
    rng = np.random.default_rng(spec.seed)

    if spec.strategy in ("RD", "RI"):
        picked = rng.permutation(n)[:k]
    else:
        stat = proof_length if spec.strategy == "PL" else _safe_premise_freq
        weights = np.array([stat(p) for p in proofs], dtype=np.float64)
        picked = _weighted_sample_without_replacement(weights, k, rng)

    val_idx = set(int(i) for i in picked[: spec.n_val])
    test_idx = set(int(i) for i in picked[spec.n_val : k])
    heldout = val_idx | test_idx

    val = [p for i, p in enumerate(proofs) if i in val_idx]
    test = [p for i, p in enumerate(proofs) if i in test_idx]
    train = [p for i, p in enumerate(proofs) if i not in heldout]

    if spec.strategy == "RI":
        banned: set[str] = set()
        for p in val + test:
            banned |= _positive_names(p)
        train = [p for p in train if not (_positive_names(p) & banned)]
    return train, val, test


def _safe_premise_freq(p: Proof) -> float:
    # empty proofs carry zero weight rather than raising
    return premise_freq(p) if p.steps else 0.0


def split_manifest(spec: SplitSpec, train, val, test) -> dict:
    return {
        "strategy": spec.strategy,
        "seed": spec.seed,
        "counts": {"train": len(train), "val": len(val), "test": len(test)},
    }


def write_split(out_dir, spec: SplitSpec, train, val, test) -> None:
    """Write three theorem-name JSONL files plus the manifest."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("val", val), ("test", test)):
        with open(out / f"{name}.jsonl", "w", encoding="utf-8") as fh:
            for p in part:
                fh.write(json.dumps({"theorem": p.theorem_name}) + "\n")
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(split_manifest(spec, train, val, test), fh, indent=2)
        fh.write("\n")


def read_split(split_dir) -> dict[str, list[str]]:
    from pathlib import Path

    out = {}
    for name in ("train", "val", "test"):
        path = Path(split_dir) / f"{name}.jsonl"
        names = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    names.append(json.loads(line)["theorem"])
        out[name] = names
    return out
