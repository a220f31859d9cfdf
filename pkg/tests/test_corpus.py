import json

import pytest
from hypothesis import given, strategies as st

from leanpremise.corpus import (
    Corpus,
    CorpusError,
    Premise,
    Proof,
    ProofState,
    StateCase,
    TacticStep,
    TERMINAL_STATE,
    build_dataset,
    ingest_corpus,
    normalize_ws,
    parse_corpus_lines,
    parse_rendered_state,
    premise_freq,
    proof_length,
    render_premise,
    render_state,
)


def premise(args, goal, name="X.y", module="X", pid=0):
    return Premise(id=pid, name=name, module=module, args=tuple(args), goal=goal)


def single_case(hyps, goal):
    return ProofState(cases=(StateCase(hypotheses=tuple(hyps), goal=goal),))


class TestRendering:
    def test_paper_example(self):
        _, _, full = render_premise(premise(["n m : Nat"], "n + m = m + n"))
        assert full == "<VAR> n m : Nat <GOAL> n + m = m + n"

    def test_empty_args(self):
        args_text, goal_text, full = render_premise(premise([], "True"))
        assert (args_text, goal_text, full) == ("", "<GOAL> True", "<GOAL> True")

    def test_two_args(self):
        _, _, full = render_premise(premise(["a : α", "b : α"], "a = b"))
        assert full == "<VAR> a : α <VAR> b : α <GOAL> a = b"

    def test_state_single_case(self):
        s = single_case(["n m : Nat"], "n + m = m + n")
        assert render_state(s) == "<VAR> n m : Nat <GOAL> n + m = m + n"

    def test_state_two_cases_joined_in_order(self):
        s = ProofState(
            cases=(
                StateCase(hypotheses=(), goal="P"),
                StateCase(hypotheses=(), goal="Q"),
            )
        )
        assert render_state(s) == "<GOAL> P <GOAL> Q"

    def test_terminal_state(self):
        assert render_state(TERMINAL_STATE) == "<GOAL> No Goals"
        assert TERMINAL_STATE.is_terminal

    def test_parse_inverts_render(self):
        s = ProofState(
            cases=(
                StateCase(hypotheses=("a : α", "b : β"), goal="a = b"),
                StateCase(hypotheses=(), goal="Q"),
            )
        )
        assert parse_rendered_state(render_state(s)) == s

    def test_parse_bare_goal(self):
        assert parse_rendered_state("n + m = m + n") == single_case([], "n + m = m + n")

    def test_parse_rejects_empty(self):
        with pytest.raises(CorpusError):
            parse_rendered_state("   ")


# words that cannot collide with the rendering markers
_word = st.text(alphabet="abcxyz:=+", min_size=1, max_size=6)
_chunk = st.lists(_word, min_size=1, max_size=4).map(" ".join)


@given(
    st.lists(
        st.tuples(st.lists(_chunk, max_size=3), _chunk), min_size=1, max_size=3
    )
)
def test_render_state_parse_roundtrip(case_specs):
    s = ProofState(
        cases=tuple(
            StateCase(hypotheses=tuple(hyps), goal=goal) for hyps, goal in case_specs
        )
    )
    assert parse_rendered_state(render_state(s)) == s


@given(st.lists(_chunk, max_size=3), _chunk, st.lists(_chunk, max_size=3), _chunk)
def test_render_premise_injective(args1, goal1, args2, goal2):
    p1 = premise(args1, goal1)
    p2 = premise(args2, goal2, name="X.z")
    if (tuple(args1), goal1) != (tuple(args2), goal2):
        assert render_premise(p1)[2] != render_premise(p2)[2]


class TestNormalizeWs:
    def test_collapses_runs(self):
        assert normalize_ws("a \t b\n  c") == "a b c"

    def test_strips(self):
        assert normalize_ws("  x  ") == "x"


def _premise_line(name, goal="G", module="M", args=()):
    return json.dumps(
        {"kind": "premise", "name": name, "module": module, "args": list(args), "goal": goal}
    )


def _proof_line(theorem, steps):
    return json.dumps({"kind": "proof", "theorem": theorem, "steps": steps})


def _step(before_goal="A", after_goal="B", premises=None):
    used = premises if premises is not None else []
    return {
        "state_before": {"cases": [{"hypotheses": [], "goal": before_goal}]},
        "tactic": "apply",
        "premises": used,
        "state_after": {"cases": [{"hypotheses": [], "goal": after_goal}]},
    }


class TestIngest:
    def test_minimal_file(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text(_premise_line("A.b") + "\n")
        corpus, proofs, report = ingest_corpus(path)
        assert len(corpus) == 1 and proofs == [] and not report.unresolved
        assert corpus.premises[0].id == 0

    def test_dense_ids(self):
        lines = [_premise_line(f"P.n{i}") for i in range(5)]
        corpus, _, _ = parse_corpus_lines(lines)
        assert [p.id for p in corpus.premises] == [0, 1, 2, 3, 4]

    def test_unknown_premise_reported(self):
        lines = [
            _premise_line("A.b"),
            _proof_line("T", [_step(premises=["Foo.bar"])]),
        ]
        corpus, proofs, report = parse_corpus_lines(lines)
        assert len(proofs) == 1
        assert report.unresolved == [("T", 0, "Foo.bar")]

    def test_duplicate_name_rejected(self):
        with pytest.raises(CorpusError, match="duplicate"):
            parse_corpus_lines([_premise_line("A.b"), _premise_line("A.b")])

    def test_malformed_line_number(self):
        with pytest.raises(CorpusError, match="line 2"):
            parse_corpus_lines([_premise_line("A.b"), "{not json"])

    def test_whitespace_normalized_at_ingest(self):
        lines = [_premise_line("A.b", goal="x   =\t y")]
        corpus, _, _ = parse_corpus_lines(lines)
        assert corpus.premises[0].goal == "x = y"

    def test_broken_chain_logged_not_fatal(self, caplog):
        lines = [
            _premise_line("A.b"),
            _proof_line(
                "T",
                [
                    _step(before_goal="S0", after_goal="S1"),
                    _step(before_goal="SOMETHING_ELSE", after_goal="S2"),
                ],
            ),
        ]
        with caplog.at_level("WARNING", logger="leanpremise.corpus"):
            _, proofs, _ = parse_corpus_lines(lines)
        assert len(proofs) == 1 and len(proofs[0].steps) == 2
        assert any("state_after differs" in r.message for r in caplog.records)


def make_proof(theorem, specs):
    """specs: list of (before_goal, premises, after_goal)."""
    steps = []
    for before_goal, used, after_goal in specs:
        steps.append(
            TacticStep(
                state_before=ProofState(
                    cases=(StateCase(hypotheses=(), goal=before_goal),)
                ),
                tactic_text="t",
                premises_used=tuple(used),
                state_after=ProofState(
                    cases=(StateCase(hypotheses=(), goal=after_goal),)
                ),
            )
        )
    return Proof(theorem_name=theorem, steps=tuple(steps))


@pytest.fixture()
def two_premise_corpus():
    return Corpus(
        premises=[
            Premise(id=0, name="A.a", module="A", args=(), goal="Ga"),
            Premise(id=1, name="B.b", module="B", args=(), goal="Gb"),
        ]
    )


class TestBuildDataset:
    def test_one_step_two_premises(self, two_premise_corpus):
        proof = make_proof("T", [("S0", ["A.a", "B.b"], "S1")])
        ds = build_dataset([proof], two_premise_corpus)
        assert len(ds) == 2  # before and after states
        for pair in ds.pairs:
            assert pair.positives == frozenset({0, 1})

    def test_no_premises_no_pairs(self, two_premise_corpus):
        proof = make_proof("T", [("S0", [], "S1")])
        assert len(build_dataset([proof], two_premise_corpus)) == 0

    def test_shared_rendered_state_merges(self, two_premise_corpus):
        p1 = make_proof("T1", [("S0", ["A.a"], "S1")])
        p2 = make_proof("T2", [("S0", ["B.b"], "S2")])
        ds = build_dataset([p1, p2], two_premise_corpus)
        merged = {pair.rendered: pair.positives for pair in ds.pairs}
        assert merged["<GOAL> S0"] == frozenset({0, 1})

    def test_no_duplicate_rendered_states(self, two_premise_corpus):
        proofs = [
            make_proof("T1", [("S0", ["A.a"], "S1"), ("S1", ["B.b"], "S0")]),
        ]
        ds = build_dataset(proofs, two_premise_corpus)
        rendered = [p.rendered for p in ds.pairs]
        assert len(rendered) == len(set(rendered))
        assert all(pair.positives for pair in ds.pairs)


class TestProofStats:
    def test_proof_length(self):
        p = make_proof("T", [("a", ["A.a", "B.b"], "b"), ("b", [], "c"), ("c", ["A.a"], "d")])
        assert proof_length(p) == 3

    def test_empty_proof_length(self):
        assert proof_length(Proof(theorem_name="T", steps=())) == 0

    def test_premise_freq_mean(self):
        p = make_proof("T", [("a", ["A.a", "B.b"], "b"), ("b", [], "c"), ("c", ["A.a"], "d")])
        assert premise_freq(p) == pytest.approx(1.0)

    def test_premise_freq_zero(self):
        p = make_proof("T", [("a", [], "b"), ("b", [], "c")])
        assert premise_freq(p) == 0.0

    def test_premise_freq_single(self):
        p = make_proof("T", [("a", ["A.a", "A.a", "A.a"], "b")])
        assert premise_freq(p) == 3.0

    def test_premise_freq_empty_errors(self):
        with pytest.raises(CorpusError):
            premise_freq(Proof(theorem_name="T", steps=()))
