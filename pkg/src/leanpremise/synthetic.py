"""Planted synthetic corpus and the desk-scale end-to-end benchmark.

Each premise carries a unique marker token; states that use a premise
mention its marker (in a hypothesis before the tactic, in the goal
after), so a retriever that picks up the lexical structure can solve the
task. States additionally name one explicitly ruled-out premise, which
bag-of-embeddings retrieval cannot discount; the re-ranking stage earns
its keep by learning that veto.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import (
    Corpus,
    Premise,
    Proof,
    ProofState,
    StateCase,
    TacticStep,
    TERMINAL_STATE,
)

FILLERS = [
    "Nat", "Int", "Real", "Group", "Ring", "Field", "List", "Set", "Finset",
    "add", "mul", "sub", "div", "neg", "inv", "comm", "assoc", "distrib",
    "le", "lt", "ge", "succ", "zero", "one", "two", "mem", "subset", "union",
    "inter", "map", "fold", "len", "rev", "sort", "min", "max", "abs", "mod",
]

SYMBOLS = ["=", "+", "*", ":", "(", ")"]


def _marker(i: int) -> str:
    return f"uq{i:03d}"


def _filler_phrase(rng: np.random.Generator, n: int) -> str:
    words = []
    for _ in range(n):
        words.append(FILLERS[int(rng.integers(0, len(FILLERS)))])
        if rng.random() < 0.3:
            words.append(SYMBOLS[int(rng.integers(0, len(SYMBOLS)))])
    return " ".join(words)


def generate_synthetic(
    n_premises: int = 100,
    n_steps: int = 200,
    seed: int = 0,
    modules: int = 10,
    max_premises_per_step: int = 2,
) -> tuple[Corpus, list[Proof]]:
    """Build a corpus and proofs with 2 * n_steps state-premise pairs."""
    rng = np.random.default_rng(seed)
    premises = []
    for i in range(n_premises):
        args: tuple[str, ...]
        if rng.random() < 0.2:
            args = ()
        else:
            args = (f"h : P {_marker(i)}",)
        premises.append(
            Premise(
                id=i,
                name=f"Synth.T{i:03d}",
                module=f"Synth.Mod{i % modules}",
                args=args,
                goal=f"Q {_marker(i)} {FILLERS[i % len(FILLERS)]}",
            )
        )
    corpus = Corpus(premises=premises)

    # states are kept distinct by a combinatorial (ctxA, ctxB) decoration whose
    # words recur across many states, so they cannot identify a state.
    # every state also names one explicitly ruled-out premise ("NOT <marker>"):
    # bag-of-embeddings retrieval cannot represent the negation and pulls that
    # premise up its ranking, which is precisely the failure joint re-reading
    # is meant to repair (and those premises become its mined hard negatives)
    pool = max(2, int(np.ceil(np.sqrt(n_steps))))
    proofs = []
    for s in range(n_steps):
        n_used = int(rng.integers(1, max_premises_per_step + 1))
        used = rng.choice(n_premises, size=n_used, replace=False)
        marks = " ".join(_marker(int(u)) for u in used)
        anti = int(rng.choice([i for i in range(n_premises) if i not in set(int(u) for u in used)]))
        anti_mark = _marker(anti)
        ctx = f"ctxA{s // pool} ctxB{s % pool}"
        before = ProofState(
            cases=(
                StateCase(
                    hypotheses=(f"x : R {marks}", f"bad : NOT {anti_mark}"),
                    goal=f"T {marks} NOT {anti_mark} {ctx}",
                ),
            )
        )
        after = ProofState(
            cases=(
                StateCase(
                    hypotheses=(f"bad : NOT {anti_mark}",),
                    goal=f"U {marks} NOT {anti_mark} {_filler_phrase(rng, 1)} {ctx}",
                ),
            )
        )
        step = TacticStep(
            state_before=before,
            tactic_text=f"apply {' '.join(premises[int(u)].name for u in used)}",
            premises_used=tuple(premises[int(u)].name for u in used),
            state_after=after,
        )
        closing = TacticStep(
            state_before=after,
            tactic_text="trivial",
            premises_used=(),
            state_after=TERMINAL_STATE,
        )
        proofs.append(Proof(theorem_name=f"Synth.thm{s:04d}", steps=(step, closing)))
    return corpus, proofs


@dataclass
class BenchmarkResult:
    recall10_cfr: float
    recall1_cfr: float
    recall1_car: float | None
    seconds: float


def run_planted_benchmark(
    seed: int,
    include_reranker: bool = False,
    n_premises: int = 100,
    n_steps: int = 200,
    rerank_depth: int = 3,
) -> BenchmarkResult:
    """Full pipeline (tokenizer -> MLM -> CFR, optionally + CAR) on the
    planted corpus; returns held-out recall figures for one seed."""
    import time

    from .corpus import build_dataset
    from .encoding import EncoderBundle
    from .model import EncoderConfig, init_rerank_head
    from .pretrain import build_pretrain_texts, pretrain
    from .reranker import RerankTrainConfig, rerank, train_reranker
    from .retriever import (
        RetrieverTrainConfig,
        SimilarityMode,
        build_index,
        embed_state,
        search,
        train_retriever,
    )
    from .splits import SplitSpec, split
    from .tokenizer import TokenizerConfig, train_tokenizer

    t0 = time.time()
    corpus, proofs = generate_synthetic(n_premises=n_premises, n_steps=n_steps, seed=seed)
    train_proofs, _, test_proofs = split(proofs, SplitSpec("RD", seed=seed, n_val=20, n_test=30))
    train_ds = build_dataset(train_proofs, corpus)
    test_ds = build_dataset(test_proofs, corpus)

    texts = build_pretrain_texts(corpus, train_proofs)
    vocab = train_tokenizer(texts, TokenizerConfig(vocab_size=1024, min_frequency=2))

    cfr_config = EncoderConfig(
        vocab_size=len(vocab), n_layers=2, n_heads=4, hidden=128,
        intermediate=256, max_positions=96, dropout=0.1, seed=seed,
    )
    params, _ = pretrain(texts, vocab, cfr_config, steps=120, batch_size=16, lr=3e-4, seed=seed)
    retriever = EncoderBundle(params=params, config=cfr_config, vocab=vocab)
    train_retriever(
        train_ds, corpus, retriever,
        RetrieverTrainConfig(batch_size=8, group_size=2, tau=0.05, epochs=4, seed=seed, lr=3e-4),
    )
    index = build_index(corpus, retriever, SimilarityMode.FINE_GRAINED)

    tops = []
    r10 = r1 = 0.0
    for pair in test_ds.pairs:
        svec = embed_state(pair.rendered, retriever)
        top = search(index, svec, 10)
        tops.append(top)
        ids = [pid for pid, _ in top]
        r10 += len(set(ids) & pair.positives) / len(pair.positives)
        r1 += len(set(ids[:1]) & pair.positives) / len(pair.positives)
    n = len(test_ds.pairs)
    recall10_cfr, recall1_cfr = r10 / n, r1 / n

    recall1_car = None
    if include_reranker:
        car_config = EncoderConfig(
            vocab_size=len(vocab), n_layers=2, n_heads=8, hidden=256,
            intermediate=512, max_positions=192, dropout=0.15, seed=seed + 100,
        )
        car_params, _ = pretrain(
            texts, vocab, car_config, steps=300, batch_size=16, lr=3e-4,
            seed=seed + 100, wrap_specials=True,
        )
        car = EncoderBundle(params=car_params, config=car_config, vocab=vocab)
        head = init_rerank_head(car_config)
        train_reranker(
            train_ds, corpus, retriever, index, car, head,
            RerankTrainConfig(batch_size=4, grad_accum=1, group_size=4, k1=20,
                              rerank_depth=rerank_depth, epochs=10, seed=seed, lr=3e-4),
        )
        hits = 0.0
        for pair, top in zip(test_ds.pairs, tops):
            reranked = rerank(pair.state, top[:rerank_depth], corpus, car, head, rerank_depth)
            hits += len({reranked[0][0]} & pair.positives) / len(pair.positives)
        recall1_car = hits / n

    return BenchmarkResult(
        recall10_cfr=recall10_cfr,
        recall1_cfr=recall1_cfr,
        recall1_car=recall1_car,
        seconds=time.time() - t0,
    )
