"""Corpus data model: premises, proof states, tactic chains, and the
state-premise training dataset.

The canonical text rendering prepends <VAR> to every hypothesis and
<GOAL> to every goal; everything downstream (tokenizer, encoders,
dedup) works on that rendered form.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

VAR_TOKEN = "<VAR>"
GOAL_TOKEN = "<GOAL>"
NO_GOALS = "No Goals"

_WS_RUN = re.compile(r"\s+")


class CorpusError(ValueError):
    """Raised for malformed corpus files or inconsistent records."""


def normalize_ws(text: str) -> str:
    """Collapse whitespace runs to single spaces and strip the ends.

    Applied to every hypothesis/goal string at ingest so that dedup and
    tokenization see a stable form.
    """
    return _WS_RUN.sub(" ", text).strip()


@dataclass(frozen=True)
class Premise:
    """A library theorem: argument list plus goal, with a stable id."""

    id: int
    name: str
    module: str
    args: tuple[str, ...]
    goal: str

    def __post_init__(self):
        if not self.name:
            raise CorpusError("premise name must be nonempty")
        if not self.goal:
            raise CorpusError(f"premise {self.name!r}: goal must be nonempty")


@dataclass(frozen=True)
class StateCase:
    """One case of a proof state: hypothesis list and a goal."""

    hypotheses: tuple[str, ...]
    goal: str

    def __post_init__(self):
        if not self.goal:
            raise CorpusError("state case goal must be nonempty")


@dataclass(frozen=True)
class ProofState:
    cases: tuple[StateCase, ...]

    def __post_init__(self):
        if not self.cases:
            raise CorpusError("proof state must have at least one case")

    @property
    def is_terminal(self) -> bool:
        return len(self.cases) == 1 and self.cases[0].goal == NO_GOALS


TERMINAL_STATE = ProofState(cases=(StateCase(hypotheses=(), goal=NO_GOALS),))


@dataclass(frozen=True)
class TacticStep:
    state_before: ProofState
    tactic_text: str
    premises_used: tuple[str, ...]
    state_after: ProofState


@dataclass(frozen=True)
class Proof:
    theorem_name: str
    steps: tuple[TacticStep, ...]


@dataclass(frozen=True)
class DatasetPair:
    """A deduplicated (state, positive premise ids) training pair."""

    state: ProofState
    rendered: str
    positives: frozenset[int]


@dataclass
class Dataset:
    pairs: list[DatasetPair]

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class Corpus:
    """Premise collection with name/id lookups."""

    premises: list[Premise]
    by_name: dict[str, Premise] = field(default_factory=dict)

    def __post_init__(self):
        if not self.by_name:
            self.by_name = {p.name: p for p in self.premises}

    def __len__(self) -> int:
        return len(self.premises)

    def __getitem__(self, premise_id: int) -> Premise:
        return self.premises[premise_id]

    def module_of(self, premise_id: int) -> str:
        return self.premises[premise_id].module


@dataclass
class IngestReport:
    """Unresolved premise references found while parsing proofs."""

    unresolved: list[tuple[str, int, str]] = field(default_factory=list)

    def add(self, theorem: str, step_index: int, name: str) -> None:
        self.unresolved.append((theorem, step_index, name))


# ---------------------------------------------------------------------------
# Rendering


def render_premise(p: Premise) -> tuple[str, str, str]:
    """Render a premise to (args_text, goal_text, full_text)."""
    args_text = " ".join(f"{VAR_TOKEN} {a}" for a in p.args)
    goal_text = f"{GOAL_TOKEN} {p.goal}"
    full_text = f"{args_text} {goal_text}" if args_text else goal_text
    return args_text, goal_text, full_text


def render_case(c: StateCase) -> str:
    parts = [f"{VAR_TOKEN} {h}" for h in c.hypotheses]
    parts.append(f"{GOAL_TOKEN} {c.goal}")
    return " ".join(parts)


def render_state(s: ProofState) -> str:
    """Render all cases in order, space-joined."""
    return " ".join(render_case(c) for c in s.cases)


def parse_rendered_state(text: str) -> ProofState:
    """Invert render_state on well-formed <VAR>/<GOAL> markup.

    Text with no <GOAL> marker is treated as a bare single-case goal.
    """
    text = normalize_ws(text)
    if not text:
        raise CorpusError("empty state text")
    if GOAL_TOKEN not in text:
        return ProofState(cases=(StateCase(hypotheses=(), goal=text),))
    tokens = text.split(" ")
    cases: list[StateCase] = []
    hyps: list[str] = []
    current: list[str] = []
    mode = None  # None | "var" | "goal"

    def flush():
        nonlocal current, mode
        if mode == "var":
            chunk = " ".join(current).strip()
            if not chunk:
                raise CorpusError("empty <VAR> hypothesis in state text")
            hyps.append(chunk)
        elif mode == "goal":
            chunk = " ".join(current).strip()
            if not chunk:
                raise CorpusError("empty <GOAL> in state text")
            cases.append(StateCase(hypotheses=tuple(hyps), goal=chunk))
            hyps.clear()
        current = []

    for tok in tokens:
        if tok == VAR_TOKEN:
            flush()
            mode = "var"
        elif tok == GOAL_TOKEN:
            flush()
            mode = "goal"
        else:
            if mode is None:
                raise CorpusError(f"state text must start with {VAR_TOKEN} or {GOAL_TOKEN}")
            current.append(tok)
    flush()
    if hyps:
        raise CorpusError("trailing <VAR> hypotheses with no <GOAL>")
    if not cases:
        raise CorpusError("state text contains no goal")
    return ProofState(cases=tuple(cases))


# ---------------------------------------------------------------------------
# Ingest


def _parse_state(obj: dict) -> ProofState:
    cases = []
    for c in obj["cases"]:
        cases.append(
            StateCase(
                hypotheses=tuple(normalize_ws(h) for h in c.get("hypotheses", [])),
                goal=normalize_ws(c["goal"]),
            )
        )
    return ProofState(cases=tuple(cases))


def parse_corpus_lines(
    lines: Iterable[str],
) -> tuple[Corpus, list[Proof], IngestReport]:
    """Parse JSON-Lines premise/proof records.

    Premise ids are assigned densely from 0 in file order. Premise
    references inside proofs that do not resolve against the corpus are
    collected into the report rather than failing the ingest.
    """
    premises: list[Premise] = []
    names: dict[str, int] = {}
    raw_proofs: list[tuple[str, list[dict]]] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusError(f"line {lineno}: malformed JSON: {e}") from e
        kind = rec.get("kind")
        if kind == "premise":
            try:
                name = rec["name"]
                if name in names:
                    raise CorpusError(f"line {lineno}: duplicate premise name {name!r}")
                p = Premise(
                    id=len(premises),
                    name=name,
                    module=rec.get("module", ""),
                    args=tuple(normalize_ws(a) for a in rec.get("args", [])),
                    goal=normalize_ws(rec["goal"]),
                )
            except KeyError as e:
                raise CorpusError(f"line {lineno}: premise record missing {e}") from e
            names[name] = p.id
            premises.append(p)
        elif kind == "proof":
            try:
                raw_proofs.append((rec["theorem"], rec["steps"]))
            except KeyError as e:
                raise CorpusError(f"line {lineno}: proof record missing {e}") from e
        else:
            raise CorpusError(f"line {lineno}: unknown record kind {kind!r}")

    corpus = Corpus(premises=premises)
    report = IngestReport()
    proofs: list[Proof] = []
    for theorem, raw_steps in raw_proofs:
        steps = []
        for si, rs in enumerate(raw_steps):
            used = tuple(rs.get("premises", []))
            for name in used:
                if name not in corpus.by_name:
                    report.add(theorem, si, name)
            steps.append(
                TacticStep(
                    state_before=_parse_state(rs["state_before"]),
                    tactic_text=normalize_ws(rs.get("tactic", "")),
                    premises_used=used,
                    state_after=_parse_state(rs["state_after"]),
                )
            )
        for i in range(len(steps) - 1):
            if steps[i].state_after != steps[i + 1].state_before:
                log.warning(
                    "proof %s: step %d state_after differs from step %d state_before",
                    theorem, i, i + 1,
                )
        proofs.append(Proof(theorem_name=theorem, steps=tuple(steps)))
    return corpus, proofs, report


def ingest_corpus(path) -> tuple[Corpus, list[Proof], IngestReport]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus_lines(fh)


def write_corpus_lines(corpus: Corpus, proofs: Sequence[Proof]) -> Iterable[str]:
    """Serialize back to the JSON-Lines exchange format."""
    for p in corpus.premises:
        yield json.dumps(
            {
                "kind": "premise",
                "name": p.name,
                "module": p.module,
                "args": list(p.args),
                "goal": p.goal,
            },
            ensure_ascii=False,
        )
    for proof in proofs:
        yield json.dumps(
            {
                "kind": "proof",
                "theorem": proof.theorem_name,
                "steps": [
                    {
                        "state_before": _state_to_obj(s.state_before),
                        "tactic": s.tactic_text,
                        "premises": list(s.premises_used),
                        "state_after": _state_to_obj(s.state_after),
                    }
                    for s in proof.steps
                ],
            },
            ensure_ascii=False,
        )


def _state_to_obj(s: ProofState) -> dict:
    return {
        "cases": [
            {"hypotheses": list(c.hypotheses), "goal": c.goal} for c in s.cases
        ]
    }


# ---------------------------------------------------------------------------
# Dataset construction and proof statistics


def build_dataset(proofs: Sequence[Proof], corpus: Corpus) -> Dataset:
    """Collect (state, positives) pairs from tactic steps.

    Both the before- and after-state of a step that uses premises are
    relevant to those premises. Pairs with identical rendered text are
    merged and their positives unioned; unresolved premise names are
    dropped (already reported at ingest).
    """
    by_rendered: dict[str, tuple[ProofState, set[int]]] = {}
    for proof in proofs:
        for step in proof.steps:
            ids = {
                corpus.by_name[n].id
                for n in step.premises_used
                if n in corpus.by_name
            }
            if not ids:
                continue
            for state in (step.state_before, step.state_after):
                text = render_state(state)
                if text in by_rendered:
                    by_rendered[text][1].update(ids)
                else:
                    by_rendered[text] = (state, set(ids))
    pairs = [
        DatasetPair(state=state, rendered=text, positives=frozenset(ids))
        for text, (state, ids) in by_rendered.items()
    ]
    return Dataset(pairs=pairs)


def write_dataset_jsonl(pairs: Sequence[DatasetPair], corpus: Corpus, path) -> None:
    """Persist (state, positives) pairs, positives by premise name."""
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(
                json.dumps(
                    {
                        "state": _state_to_obj(pair.state),
                        "positives": sorted(corpus[pid].name for pid in pair.positives),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_dataset_jsonl(path, corpus: Corpus) -> Dataset:
    pairs: list[DatasetPair] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            state = _parse_state(rec["state"])
            positives = frozenset(
                corpus.by_name[n].id for n in rec["positives"] if n in corpus.by_name
            )
            pairs.append(
                DatasetPair(state=state, rendered=render_state(state), positives=positives)
            )
    return Dataset(pairs=pairs)


def proof_length(p: Proof) -> int:
    return len(p.steps)


def premise_freq(p: Proof) -> float:
    """Mean number of premises used per tactic step."""
    if not p.steps:
        raise CorpusError(f"premise_freq undefined for empty proof {p.theorem_name!r}")
    return sum(len(s.premises_used) for s in p.steps) / len(p.steps)
