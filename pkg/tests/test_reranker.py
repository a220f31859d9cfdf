import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leanpremise.corpus import Corpus, Dataset, DatasetPair, Premise, ProofState, StateCase, render_state
from leanpremise.encoding import EncoderBundle, encode_text
from leanpremise.model import init_params, init_rerank_head
from leanpremise.retriever import SimilarityMode, build_index, embed_state, search
from leanpremise.reranker import (
    RerankError,
    RerankGroup,
    RerankTrainConfig,
    build_rerank_input,
    encode_pair,
    mine_hard_negatives,
    relevance,
    rerank,
    rerank_loss_and_grads,
    rerank_loss_from_probs,
    split_budget,
    train_reranker,
)

from tests.oracles import central_difference, relative_error


def state_of(goal, hyps=()):
    return ProofState(cases=(StateCase(hypotheses=tuple(hyps), goal=goal),))


@pytest.fixture()
def zero_head(tiny_config):
    return {
        "head.w": np.zeros(tiny_config.hidden, dtype=tiny_config.dtype),
        "head.b": np.zeros(1, dtype=tiny_config.dtype),
    }


class TestRelevance:
    def test_zero_head_gives_half(self, tiny_bundle, zero_head, toy_corpus):
        p = relevance(state_of("True"), toy_corpus.premises[0], tiny_bundle, zero_head)
        assert p == pytest.approx(0.5, abs=1e-12)

    def test_monotone_in_bias(self, tiny_bundle, zero_head, toy_corpus):
        probs = []
        for b in (-5.0, 0.0, 5.0, 30.0):
            head = dict(zero_head)
            head["head.b"] = np.array([b])
            probs.append(relevance(state_of("True"), toy_corpus.premises[0], tiny_bundle, head))
        assert probs == sorted(probs)
        assert probs[-1] > 0.999999
        assert all(0.0 < p < 1.0 for p in probs)

    def test_stable_across_runs(self, tiny_bundle, toy_corpus, tiny_config):
        head = init_rerank_head(tiny_config)
        a = relevance(state_of("foo"), toy_corpus.premises[1], tiny_bundle, head)
        b = relevance(state_of("foo"), toy_corpus.premises[1], tiny_bundle, head)
        assert a == b


class TestBudget:
    def test_paper_scale_allocation(self):
        s, p = split_budget(2000, 2000, 1024)
        assert (s, p) == (512, 509)

    def test_slack_flows_to_long_side(self):
        s, p = split_budget(100, 2000, 1024)
        assert (s, p) == (100, 921)
        s, p = split_budget(2000, 40, 1024)
        assert (s, p) == (981, 40)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 3000), st.integers(0, 3000), st.integers(8, 1024))
    def test_total_never_exceeds_positions(self, sl, pl, mp):
        s, p = split_budget(sl, pl, mp)
        assert s + p + 3 <= mp
        assert s <= sl and p <= pl

    def test_input_structure(self, tiny_bundle):
        v = tiny_bundle.vocab
        ids = build_rerank_input([7, 8, 9], [10, 11], tiny_bundle)
        assert ids[0] == v.cls_id
        assert ids.count(v.sep_id) == 2
        assert ids[-1] == v.sep_id
        assert len(ids) <= tiny_bundle.config.max_positions

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 300), st.integers(1, 300))
    def test_truncation_safety_property(self, ns, np_):
        # max_positions 48 in the tiny config; any state/premise length fits
        from leanpremise.model import EncoderConfig
        from leanpremise.tokenizer import TokenizerConfig, train_tokenizer

        vocab = train_tokenizer(["a b c"], TokenizerConfig(vocab_size=32, min_frequency=1))
        cfg = EncoderConfig(vocab_size=32, n_layers=1, n_heads=1, hidden=8,
                            intermediate=16, max_positions=48, dropout=0.0)
        bundle = EncoderBundle(params={}, config=cfg, vocab=vocab)
        ids = build_rerank_input(list(range(ns)), list(range(np_)), bundle)
        assert len(ids) <= 48


class TestRerankLoss:
    def test_uniform_eight_candidates_ln8(self, tiny_bundle, zero_head):
        sid = encode_text(tiny_bundle, "<GOAL> True")
        inputs = [build_rerank_input(sid, encode_text(tiny_bundle, "foo bar"), tiny_bundle)] * 8
        loss, _ = rerank_loss_and_grads(
            [RerankGroup(inputs=inputs)], tiny_bundle, zero_head, compute_grads=False
        )
        assert loss == pytest.approx(np.log(8), abs=1e-9)

    def test_hand_probability_example(self):
        probs = np.array([0.9] + [0.1] * 7)
        loss, _ = rerank_loss_from_probs(probs)
        assert loss == pytest.approx(-np.log(0.9 / 1.6), abs=1e-12)

    def test_all_zero_probabilities_rejected(self):
        with pytest.raises(RerankError):
            rerank_loss_from_probs(np.zeros(4))

    @pytest.mark.parametrize("normalizer", ["probability", "softmax"])
    def test_gradients_match_finite_differences(self, tiny_bundle, tiny_config, normalizer):
        head = init_rerank_head(tiny_config)
        sid = encode_text(tiny_bundle, "<GOAL> True")
        groups = [
            RerankGroup(
                inputs=[
                    build_rerank_input(sid, encode_text(tiny_bundle, t), tiny_bundle)
                    for t in ("foo bar", "baz qux", "n + m")
                ]
            )
        ]
        loss, grads = rerank_loss_and_grads(groups, tiny_bundle, head, normalizer=normalizer)
        merged = dict(tiny_bundle.params)
        merged.update(head)

        def loss_fn():
            l, _ = rerank_loss_and_grads(
                groups, tiny_bundle, head, normalizer=normalizer, compute_grads=False
            )
            return l

        rng = np.random.default_rng(6)
        for name in ("head.w", "head.b", "layer0.w1", "tok_emb"):
            flat_g = grads[name].reshape(-1)
            for idx in rng.choice(flat_g.size, size=min(3, flat_g.size), replace=False):
                fd = central_difference(loss_fn, merged[name], int(idx), 1e-4)
                assert relative_error(fd, flat_g[int(idx)]) < 1e-4, (normalizer, name)


class TestMining:
    def test_never_samples_positives(self, tiny_bundle, toy_corpus, rng):
        index = build_index(toy_corpus, tiny_bundle, SimilarityMode.FINE_GRAINED)
        s = state_of("G0 holds")
        pair = DatasetPair(state=s, rendered=render_state(s), positives=frozenset({0, 1, 2}))
        for _ in range(5):
            negs = mine_hard_negatives(pair, index, tiny_bundle, toy_corpus, k1=6, n_negatives=3, rng=rng)
            assert len(negs) == 3
            assert not (set(negs) & pair.positives)

    def test_fallback_when_topk_all_positive(self, tiny_bundle, toy_corpus, rng):
        index = build_index(toy_corpus, tiny_bundle, SimilarityMode.FINE_GRAINED)
        s = state_of("G0 holds")
        top3 = [pid for pid, _ in search(index, embed_state(s, tiny_bundle), 3)]
        pair = DatasetPair(state=s, rendered=render_state(s), positives=frozenset(top3))
        negs = mine_hard_negatives(pair, index, tiny_bundle, toy_corpus, k1=3, n_negatives=4, rng=rng)
        assert len(negs) == 4
        assert not (set(negs) & pair.positives)

    def test_corpus_too_small(self, tiny_bundle, rng):
        corpus = Corpus(premises=[Premise(id=0, name="A.a", module="A", args=(), goal="g")])
        index = build_index(corpus, tiny_bundle, SimilarityMode.FINE_GRAINED)
        s = state_of("g")
        pair = DatasetPair(state=s, rendered=render_state(s), positives=frozenset({0}))
        with pytest.raises(RerankError):
            mine_hard_negatives(pair, index, tiny_bundle, corpus, k1=1, n_negatives=2, rng=rng)


class TestRerank:
    def _cfr(self, n=5):
        return [(i, 1.0 - 0.1 * i) for i in range(n)]

    def test_full_depth_is_permutation(self, tiny_bundle, toy_corpus, tiny_config):
        head = init_rerank_head(tiny_config)
        cfr = self._cfr()
        out = rerank(state_of("True"), cfr, toy_corpus, tiny_bundle, head, k=len(cfr))
        assert sorted(pid for pid, _ in out) == sorted(pid for pid, _ in cfr)

    def test_zero_head_preserves_cfr_order(self, tiny_bundle, toy_corpus, zero_head):
        cfr = self._cfr()
        out = rerank(state_of("True"), cfr, toy_corpus, tiny_bundle, zero_head, k=len(cfr))
        assert [pid for pid, _ in out] == [pid for pid, _ in cfr]
        assert all(p == pytest.approx(0.5) for _, p in out)

    def test_subset_of_candidates(self, tiny_bundle, toy_corpus, tiny_config):
        head = init_rerank_head(tiny_config)
        cfr = self._cfr(6)
        out = rerank(state_of("foo"), cfr, toy_corpus, tiny_bundle, head, k=3)
        assert len(out) == 3
        assert {pid for pid, _ in out} <= {pid for pid, _ in cfr}

    def test_k_exceeding_candidates_rejected(self, tiny_bundle, toy_corpus, zero_head):
        with pytest.raises(RerankError):
            rerank(state_of("x"), self._cfr(2), toy_corpus, tiny_bundle, zero_head, k=3)

    def test_probabilities_strictly_inside_unit_interval(self, tiny_bundle, toy_corpus, tiny_config):
        head = init_rerank_head(tiny_config)
        out = rerank(state_of("bar"), self._cfr(), toy_corpus, tiny_bundle, head, k=5)
        assert all(0.0 < p < 1.0 for _, p in out)


class TestTrainReranker:
    def test_smoke_loss_decreases(self, toy_vocab, tiny_config, toy_corpus):
        retr = EncoderBundle(params=init_params(tiny_config), config=tiny_config, vocab=toy_vocab)
        rr = EncoderBundle(
            params=init_params(tiny_config.with_(seed=99), with_mlm_head=False),
            config=tiny_config.with_(seed=99),
            vocab=toy_vocab,
        )
        head = init_rerank_head(tiny_config)
        index = build_index(toy_corpus, retr, SimilarityMode.FINE_GRAINED)
        pairs = []
        for i in range(6):
            s = state_of(f"G{i} holds")
            pairs.append(DatasetPair(state=s, rendered=render_state(s), positives=frozenset({i})))
        dataset = Dataset(pairs=pairs)
        cfg = RerankTrainConfig(batch_size=2, grad_accum=1, group_size=3, k1=6,
                                rerank_depth=5, epochs=20, seed=0, lr=5e-3)
        curve = train_reranker(dataset, toy_corpus, retr, index, rr, head, cfg)
        assert np.mean(curve[-5:]) < np.mean(curve[:5])

    def test_depth_cannot_exceed_k1(self):
        with pytest.raises(ValueError):
            RerankTrainConfig(k1=10, rerank_depth=20)
