"""Graded-relevance evaluation: Recall/Precision/F1/nDCG at k, the
perturbation harness, and the data-fraction experiment driver.

Relevance grading: 1.0 for a premise actually used by the tactic, 0.3 for
a premise sharing a module with any used premise, 0.0 otherwise. nDCG
uses rel / log2(i+1) gains with the ideal ordering drawn from grading the
whole corpus, so an ideal ranker scores exactly 1.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import Corpus, Dataset, DatasetPair, ProofState, StateCase, render_state

MATCH = 1.0
RELEVANT = 0.3
IRRELEVANT = 0.0

DEFAULT_KS = (1, 5, 10)


def grade(retrieved_id: int, positives: frozenset[int] | set[int], corpus: Corpus) -> float:
    """Table-of-criteria relevance grade for one retrieved premise."""
    if retrieved_id in positives:
        return MATCH
    module = corpus.module_of(retrieved_id)
    for pid in positives:
        if corpus.module_of(pid) == module:
            return RELEVANT
    return IRRELEVANT


def recall_precision_f1(
    ranked_ids: Sequence[int], positives: frozenset[int] | set[int], k: int
) -> tuple[float, float, float]:
    """Set-based @k metrics; f1 = 0 when precision + recall = 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not positives:
        raise ValueError("positives must be nonempty; filter such queries upstream")
    hits = len(set(ranked_ids[:k]) & set(positives))
    r = hits / len(positives)
    p = hits / k
    f = 0.0 if (p + r) == 0 else 2 * p * r / (p + r)
    return r, p, f


def _module_counts(corpus: Corpus) -> Counter:
    return Counter(p.module for p in corpus.premises)


def ideal_grades(
    positives: frozenset[int] | set[int],
    corpus: Corpus,
    k: int,
    module_counts: Counter | None = None,
) -> list[float]:
    """Best-possible grade sequence over the whole graded corpus, cut at k."""
    counts = module_counts if module_counts is not None else _module_counts(corpus)
    n_match = len(positives)
    modules = {corpus.module_of(pid) for pid in positives}
    in_modules = sum(counts[m] for m in modules)
    n_relevant = in_modules - n_match
    out: list[float] = []
    for i in range(k):
        if i < n_match:
            out.append(MATCH)
        elif i < n_match + n_relevant:
            out.append(RELEVANT)
        else:
            out.append(IRRELEVANT)
    return out


def dcg(grades: Iterable[float]) -> float:
    return sum(g / math.log2(i + 2) for i, g in enumerate(grades))


def ndcg(
    ranked_ids: Sequence[int],
    positives: frozenset[int] | set[int],
    corpus: Corpus,
    k: int,
    module_counts: Counter | None = None,
) -> float:
    """Normalized discounted cumulative gain at k; 0 when IDCG is 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    got = [grade(pid, positives, corpus) for pid in ranked_ids[:k]]
    idcg = dcg(ideal_grades(positives, corpus, k, module_counts))
    if idcg == 0.0:
        return 0.0
    return dcg(got) / idcg


@dataclass
class EvalReport:
    ks: tuple[int, ...]
    metrics: dict[int, dict[str, float]]
    n_queries: int
    n_skipped: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "counts": {"queries": self.n_queries, "skipped_empty_positives": self.n_skipped},
            "metrics": {str(k): self.metrics[k] for k in self.ks},
        }

    def to_csv(self) -> str:
        lines = ["k,recall,precision,f1,ndcg"]
        for k in self.ks:
            m = self.metrics[k]
            lines.append(
                f"{k},{m['recall']:.6f},{m['precision']:.6f},{m['f1']:.6f},{m['ndcg']:.6f}"
            )
        return "\n".join(lines) + "\n"


def evaluate(
    ranker: Callable[[ProofState], Sequence[int]],
    pairs: Sequence[DatasetPair],
    corpus: Corpus,
    ks: Sequence[int] = DEFAULT_KS,
    config: dict | None = None,
) -> EvalReport:
    """Macro-average the metrics over queries at each cutoff.

    Queries with empty positive sets are excluded from the averages and
    counted separately in the report.
    """
    ks = tuple(ks)
    counts = _module_counts(corpus)
    sums = {k: {"recall": 0.0, "precision": 0.0, "f1": 0.0, "ndcg": 0.0} for k in ks}
    n = 0
    skipped = 0
    for pair in pairs:
        if not pair.positives:
            skipped += 1
            continue
        ranked = list(ranker(pair.state))
        n += 1
        for k in ks:
            r, p, f = recall_precision_f1(ranked, pair.positives, k)
            nd = ndcg(ranked, pair.positives, corpus, k, counts)
            sums[k]["recall"] += r
            sums[k]["precision"] += p
            sums[k]["f1"] += f
            sums[k]["ndcg"] += nd
    metrics = {
        k: {name: (v / n if n else 0.0) for name, v in sums[k].items()} for k in ks
    }
    return EvalReport(
        ks=ks, metrics=metrics, n_queries=n, n_skipped=skipped, config=config or {}
    )


# ---------------------------------------------------------------------------
# Perturbations


SHUFFLE_CONTEXT = "shuffle"
REMOVE_CONTEXT = "remove"


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    ratio: float
    removal_fraction: float = 0.2
    min_context: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (SHUFFLE_CONTEXT, REMOVE_CONTEXT):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("ratio must be in [0, 1]")


def _perturb_case(case: StateCase, spec: PerturbationSpec, rng: np.random.Generator) -> StateCase:
    hyps = case.hypotheses
    if spec.kind == SHUFFLE_CONTEXT:
        if len(hyps) < 2:
            return case
        order = rng.permutation(len(hyps))
        return StateCase(hypotheses=tuple(hyps[int(i)] for i in order), goal=case.goal)
    if len(hyps) < spec.min_context:
        return case
    n_remove = max(1, int(round(spec.removal_fraction * len(hyps))))
    drop = set(int(i) for i in rng.choice(len(hyps), size=n_remove, replace=False))
    kept = tuple(h for i, h in enumerate(hyps) if i not in drop)
    return StateCase(hypotheses=kept, goal=case.goal)


def perturb(pairs: Sequence[DatasetPair], spec: PerturbationSpec) -> list[DatasetPair]:
    """Perturb a seed-chosen fraction of the queries; ratio 0 is identity."""
    rng = np.random.default_rng(spec.seed)
    n_perturb = int(round(spec.ratio * len(pairs)))
    if n_perturb == 0:
        return list(pairs)
    chosen = set(int(i) for i in rng.choice(len(pairs), size=n_perturb, replace=False))
    out: list[DatasetPair] = []
    for i, pair in enumerate(pairs):
        if i not in chosen:
            out.append(pair)
            continue
        cases = tuple(_perturb_case(c, spec, rng) for c in pair.state.cases)
        state = ProofState(cases=cases)
        out.append(
            DatasetPair(state=state, rendered=render_state(state), positives=pair.positives)
        )
    return out


# ---------------------------------------------------------------------------
# Data-fraction experiments


def nested_subsets(
    dataset: Dataset, fractions: Sequence[float], seed: int
) -> list[tuple[float, Dataset]]:
    """Shuffle once, then take prefixes: smaller subsets nest in larger ones."""
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fraction {f} outside (0, 1]")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset.pairs))
    out = []
    for f in sorted(fractions):
        take = max(1, math.ceil(f * len(dataset.pairs)))
        subset = [dataset.pairs[int(i)] for i in order[:take]]
        out.append((f, Dataset(pairs=subset)))
    return out


def data_fraction_runs(
    dataset: Dataset,
    fractions: Sequence[float],
    pipeline: Callable[[Dataset], EvalReport],
    seed: int = 0,
) -> list[dict]:
    """Train/evaluate on nested subsets; normalize metrics by the smallest
    fraction's values (v* = v / v0)."""
    runs = []
    for f, subset in nested_subsets(dataset, fractions, seed):
        report = pipeline(subset)
        runs.append({"fraction": f, "report": report.to_dict()})
    base = runs[0]["report"]["metrics"]
    for run in runs:
        normalized: dict[str, dict[str, float | None]] = {}
        for k, metrics in run["report"]["metrics"].items():
            normalized[k] = {}
            for name, v in metrics.items():
                v0 = base[k][name]
                normalized[k][name] = (v / v0) if v0 else None
        run["normalized"] = normalized
    return runs
