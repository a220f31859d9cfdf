"""HTTP search service over the two-stage pipeline.

Readers work on an immutable index snapshot swapped atomically after each
write; premise additions go through one writer lock and an append log
that is replayed at startup, so a restart reconstructs the same rows.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .corpus import (
    Corpus,
    CorpusError,
    Premise,
    ProofState,
    StateCase,
    normalize_ws,
    parse_rendered_state,
    render_premise,
)
from .encoding import EncoderBundle
from .retriever import PremiseIndex, embed_state, insert_premise, load_index, search
from .reranker import rerank


@dataclass
class ServiceConfig:
    corpus_path: str
    index_path: str
    vocab_path: str
    retriever_ckpt: str
    reranker_ckpt: str | None = None
    append_log: str | None = None  # default: <index_path>.additions.jsonl
    host: str = "127.0.0.1"
    port: int = 8425
    default_k: int = 10
    default_k1: int = 20
    max_body_bytes: int = 1 << 20
    cors_origins: tuple[str, ...] = ("*",)

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if "cors_origins" in raw:
            raw["cors_origins"] = tuple(raw["cors_origins"])
        cfg = cls(**raw)
        return cfg.with_env_overrides()

    def with_env_overrides(self) -> "ServiceConfig":
        env = os.environ.get
        return ServiceConfig(
            corpus_path=env("LEANPREMISE_CORPUS", self.corpus_path),
            index_path=env("LEANPREMISE_INDEX", self.index_path),
            vocab_path=env("LEANPREMISE_VOCAB", self.vocab_path),
            retriever_ckpt=env("LEANPREMISE_RETRIEVER", self.retriever_ckpt),
            reranker_ckpt=env("LEANPREMISE_RERANKER", self.reranker_ckpt),
            append_log=self.append_log,
            host=env("LEANPREMISE_HOST", self.host),
            port=int(env("LEANPREMISE_PORT", self.port)),
            default_k=self.default_k,
            default_k1=self.default_k1,
            max_body_bytes=self.max_body_bytes,
            cors_origins=self.cors_origins,
        )


@dataclass
class SearchEngine:
    """Owns the corpus, the index snapshot, and both encoder bundles."""

    retriever: EncoderBundle
    index: PremiseIndex
    corpus: Corpus
    log_path: Path
    reranker: EncoderBundle | None = None
    _write_lock: threading.Lock = field(default_factory=threading.Lock)

    @classmethod
    def load(cls, config: ServiceConfig, corpus: Corpus | None = None) -> "SearchEngine":
        if corpus is None:
            from .corpus import ingest_corpus

            corpus, _, _ = ingest_corpus(config.corpus_path)
        retriever = EncoderBundle.load(config.retriever_ckpt, config.vocab_path)
        index = load_index(config.index_path)
        if index.fingerprint and retriever.fingerprint and index.fingerprint != retriever.fingerprint:
            raise ValueError(
                "index was built with a different encoder checkpoint "
                f"(index {index.fingerprint[:12]}.., checkpoint {retriever.fingerprint[:12]}..)"
            )
        reranker = None
        if config.reranker_ckpt:
            reranker = EncoderBundle.load(config.reranker_ckpt, config.vocab_path)
        log_path = Path(config.append_log or (config.index_path + ".additions.jsonl"))
        engine = cls(
            retriever=retriever,
            index=index,
            corpus=corpus,
            log_path=log_path,
            reranker=reranker,
        )
        engine.replay_log()
        return engine

    def replay_log(self) -> int:
        if not self.log_path.exists():
            return 0
        n = 0
        with open(self.log_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self._insert(
                    name=rec["name"],
                    module=rec["module"],
                    args=rec["args"],
                    goal=rec["goal"],
                    log=False,
                )
                n += 1
        return n

    def _insert(self, name, module, args, goal, log=True) -> Premise:
        premise = Premise(
            id=len(self.corpus.premises),
            name=name,
            module=normalize_ws(module),
            args=tuple(normalize_ws(a) for a in args),
            goal=normalize_ws(goal),
        )
        new_index = insert_premise(self.index, premise, self.retriever)
        self.corpus.premises.append(premise)
        self.corpus.by_name[premise.name] = premise
        self.index = new_index  # atomic reference swap; readers keep their snapshot
        if log:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {"name": name, "module": module, "args": list(args), "goal": goal},
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        return premise

    def add_premise(self, name, module, args, goal) -> Premise:
        with self._write_lock:
            if name in self.corpus.by_name:
                raise KeyError(name)
            return self._insert(name, module, args, goal)

    def search(
        self, state: ProofState, k: int, use_rerank: bool, k1: int
    ) -> list[dict]:
        index = self.index  # snapshot for this request
        svec = embed_state(state, self.retriever)
        if use_rerank and self.reranker is not None:
            cfr = search(index, svec, k1)
            ranked = rerank(state, cfr, self.corpus, self.reranker, self.reranker.head, min(k, len(cfr)))
            cfr_scores = dict(cfr)
            results = [
                (pid, cfr_scores[pid], prob) for pid, prob in ranked
            ]
        else:
            results = [(pid, s, None) for pid, s in search(index, svec, k)]
        out = []
        for rank, (pid, cfr_score, prob) in enumerate(results, start=1):
            p = self.corpus[pid]
            _, _, full_text = render_premise(p)
            item = {
                "premise_id": pid,
                "name": p.name,
                "module": p.module,
                "statement": full_text,
                "cfr_score": cfr_score,
                "final_rank": rank,
            }
            if prob is not None:
                item["rerank_probability"] = prob
            out.append(item)
        return out


# ---------------------------------------------------------------------------
# HTTP layer


class StateCaseIn(BaseModel):
    hypotheses: list[str] = Field(default_factory=list)
    goal: str


class StateIn(BaseModel):
    cases: list[StateCaseIn]


class SearchRequest(BaseModel):
    state: str | StateIn
    k: int = Field(default=0, ge=0)  # 0: use the service default
    rerank: bool = False
    k1: int = Field(default=0, ge=0)


class PremiseRequest(BaseModel):
    name: str
    module: str = ""
    args: list[str] = Field(default_factory=list)
    goal: str


def _parse_state(raw: str | StateIn) -> ProofState:
    if isinstance(raw, str):
        if not raw.strip():
            raise CorpusError("empty state")
        return parse_rendered_state(raw)
    cases = tuple(
        StateCase(
            hypotheses=tuple(normalize_ws(h) for h in c.hypotheses),
            goal=normalize_ws(c.goal),
        )
        for c in raw.cases
    )
    return ProofState(cases=cases)


def create_app(engine: SearchEngine | None, config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="leanpremise search service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(config.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.engine = engine
    app.state.config = config

    @app.middleware("http")
    async def limit_body(request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > config.max_body_bytes:
            from fastapi.responses import JSONResponse

            return JSONResponse(status_code=413, content={"detail": "request body too large"})
        return await call_next(request)

    def need_engine() -> SearchEngine:
        if app.state.engine is None:
            raise HTTPException(status_code=503, detail="index not loaded")
        return app.state.engine

    @app.post("/api/search")
    def api_search(req: SearchRequest):
        eng = need_engine()
        k = req.k or config.default_k
        k1 = req.k1 or config.default_k1
        if k < 1:
            raise HTTPException(status_code=400, detail="k must be >= 1")
        if req.rerank:
            if eng.reranker is None:
                raise HTTPException(status_code=400, detail="service has no reranker loaded")
            if k > k1:
                raise HTTPException(status_code=422, detail=f"k={k} must not exceed k1={k1} when reranking")
        try:
            state = _parse_state(req.state)
        except CorpusError as e:
            raise HTTPException(status_code=400, detail=f"malformed state: {e}") from e
        return {"results": eng.search(state, k, req.rerank, k1)}

    @app.post("/api/premises", status_code=201)
    def api_add_premise(req: PremiseRequest):
        eng = need_engine()
        if not req.name.strip() or not req.goal.strip():
            raise HTTPException(status_code=400, detail="name and goal must be nonempty")
        try:
            premise = eng.add_premise(req.name, req.module, req.args, req.goal)
        except KeyError:
            raise HTTPException(status_code=409, detail=f"premise {req.name!r} already exists")
        return {"id": premise.id}

    @app.get("/api/premises/{premise_id}")
    def api_get_premise(premise_id: int):
        eng = need_engine()
        if premise_id < 0 or premise_id >= len(eng.corpus.premises):
            raise HTTPException(status_code=404, detail="unknown premise id")
        p = eng.corpus[premise_id]
        return {
            "id": p.id,
            "name": p.name,
            "module": p.module,
            "args": list(p.args),
            "goal": p.goal,
        }

    @app.get("/api/health")
    def api_health():
        need_engine()
        return {"status": "ok"}

    @app.get("/api/stats")
    def api_stats():
        eng = need_engine()
        return {
            "corpus_size": len(eng.corpus),
            "index_rows": len(eng.index),
            "index_fingerprint": eng.index.fingerprint,
            "rerank_enabled": eng.reranker is not None,
        }

    return app
