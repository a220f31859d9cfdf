"""Single command-line entry point wiring every pipeline stage.

Configuration is layered: values from --config (JSON or YAML) are
overridden by LEANPREMISE_* environment variables, which are overridden
by explicit flags. The resolved configuration is echoed into every
artifact this tool writes.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import FORMAT_VERSION
from .corpus import (
    build_dataset,
    ingest_corpus,
    read_dataset_jsonl,
    write_corpus_lines,
    write_dataset_jsonl,
)
from .encoding import EncoderBundle
from .evaluation import (
    DEFAULT_KS,
    PerturbationSpec,
    data_fraction_runs,
    evaluate,
    perturb,
)
from .model import (
    EncoderConfig,
    init_rerank_head,
    load_checkpoint,
    save_checkpoint,
)
from .pretrain import build_pretrain_texts, pretrain
from .reranker import RerankTrainConfig, rerank, train_reranker
from .retriever import (
    RetrieverTrainConfig,
    SimilarityMode,
    build_index,
    embed_state,
    load_index,
    save_index,
    search,
    train_retriever,
)
from .splits import SplitSpec, read_split, split, write_split
from .synthetic import generate_synthetic
from .tokenizer import TokenizerConfig, load_vocabulary, save_vocabulary, train_tokenizer

log = logging.getLogger("leanpremise")


class CliError(RuntimeError):
    pass


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        return yaml.safe_load(text) or {}
    return json.loads(text)


def _layered(args, file_cfg: dict, name: str, default, cast=None):
    """flag > LEANPREMISE_<NAME> env > config file > default."""
    flag = getattr(args, name.replace("-", "_"), None)
    if flag is not None:
        return flag
    env = os.environ.get("LEANPREMISE_" + name.upper().replace("-", "_"))
    if env is not None:
        return cast(env) if cast else env
    if name in file_cfg:
        value = file_cfg[name]
        return cast(value) if cast and isinstance(value, str) else value
    return default


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _mode(name: str) -> SimilarityMode:
    return SimilarityMode.CONVENTIONAL if name == "conv" else SimilarityMode.FINE_GRAINED


def _encoder_config(file_cfg: dict, vocab_size: int, overrides: dict | None = None) -> EncoderConfig:
    cfg = dict(file_cfg.get("encoder", {}))
    cfg["vocab_size"] = vocab_size
    if overrides:
        cfg.update(overrides)
    return EncoderConfig(**cfg)


def _split_proofs(data_path, split_dir, part: str):
    corpus, proofs, _ = ingest_corpus(data_path)
    names = set(read_split(split_dir)[part])
    return corpus, [p for p in proofs if p.theorem_name in names]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args) -> int:
    corpus, proofs, report = ingest_corpus(args.inp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for line in write_corpus_lines(corpus, proofs):
            fh.write(line + "\n")
    _write_json(
        out / "ingest_manifest.json",
        {
            "format_version": FORMAT_VERSION,
            "run_config": {"in": str(args.inp), "out": str(args.out)},
            "counts": {"premises": len(corpus), "proofs": len(proofs)},
            "unresolved": [
                {"theorem": t, "step": s, "name": n} for t, s, n in report.unresolved
            ],
        },
    )
    log.info(
        "ingested %d premises, %d proofs (%d unresolved references)",
        len(corpus),
        len(proofs),
        len(report.unresolved),
    )
    return 0


def cmd_make_synthetic(args) -> int:
    corpus, proofs = generate_synthetic(
        n_premises=args.premises, n_steps=args.steps, seed=args.seed
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        for line in write_corpus_lines(corpus, proofs):
            fh.write(line + "\n")
    log.info("wrote %d premises, %d proofs to %s", len(corpus), len(proofs), args.out)
    return 0


def cmd_split(args) -> int:
    file_cfg = _load_config_file(args.config)
    spec = SplitSpec(
        strategy=_layered(args, file_cfg, "strategy", "RD"),
        seed=_layered(args, file_cfg, "seed", 0, int),
        n_val=_layered(args, file_cfg, "n-val", 0, int),
        n_test=_layered(args, file_cfg, "n-test", 0, int),
    )
    corpus, proofs, _ = ingest_corpus(args.data)
    train, val, test = split(proofs, spec)
    write_split(args.out, spec, train, val, test)
    manifest_path = Path(args.out) / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["format_version"] = FORMAT_VERSION
    manifest["run_config"] = {"data": str(args.data), "strategy": spec.strategy, "seed": spec.seed}
    _write_json(manifest_path, manifest)
    log.info("split %s: train %d / val %d / test %d", spec.strategy, len(train), len(val), len(test))
    return 0


def cmd_train_tokenizer(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = TokenizerConfig(
        vocab_size=_layered(args, file_cfg, "vocab-size", 4096, int),
        min_frequency=_layered(args, file_cfg, "min-freq", 2, int),
    )
    corpus, proofs, _ = ingest_corpus(args.corpus)
    texts = build_pretrain_texts(corpus, proofs)
    vocab = train_tokenizer(texts, cfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_vocabulary(vocab, args.out)
    log.info("trained vocabulary of %d tokens -> %s", len(vocab), args.out)
    return 0


def cmd_pretrain(args) -> int:
    file_cfg = _load_config_file(args.config)
    vocab = load_vocabulary(args.vocab)
    corpus, proofs, _ = ingest_corpus(args.corpus)
    if args.split is not None:
        names = set(read_split(args.split)["train"])
        proofs = [p for p in proofs if p.theorem_name in names]
    texts = build_pretrain_texts(corpus, proofs)
    seed = _layered(args, file_cfg, "seed", 0, int)
    config = _encoder_config(file_cfg, len(vocab), {"seed": seed})
    params, losses = pretrain(
        texts,
        vocab,
        config,
        steps=_layered(args, file_cfg, "steps", 200, int),
        batch_size=_layered(args, file_cfg, "batch-size", 16, int),
        lr=_layered(args, file_cfg, "lr", 5e-5, float),
        seed=seed,
        wrap_specials=bool(args.wrap_specials),
    )
    run_config = {"corpus": str(args.corpus), "steps": len(losses), "seed": seed}
    save_checkpoint(args.out, params, config, kind="encoder", run_config=run_config)
    _write_json(str(args.out) + ".losses.json", {"mlm_loss": losses})
    if losses:
        log.info("pretrained %d steps, final loss %.4f -> %s", len(losses), losses[-1], args.out)
    else:
        log.info("wrote untrained initialization (steps=0) -> %s", args.out)
    return 0


def cmd_train_retriever(args) -> int:
    file_cfg = _load_config_file(args.config)
    corpus, proofs = _split_proofs(args.corpus, args.split, "train")
    dataset = build_dataset(proofs, corpus)
    bundle = EncoderBundle.load(args.init, args.vocab)
    cfg = RetrieverTrainConfig(
        batch_size=_layered(args, file_cfg, "batch-size", 32, int),
        group_size=_layered(args, file_cfg, "group-size", 2, int),
        tau=_layered(args, file_cfg, "tau", 0.05, float),
        epochs=_layered(args, file_cfg, "epochs", 1, int),
        seed=_layered(args, file_cfg, "seed", 0, int),
        lr=_layered(args, file_cfg, "lr", 2e-5, float),
        mode=_mode(args.mode),
    )
    curve = train_retriever(dataset, corpus, bundle, cfg)
    run_config = {
        "split": str(args.split),
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "tau": cfg.tau,
        "mode": cfg.mode.value,
    }
    save_checkpoint(args.out, bundle.params, bundle.config, kind="encoder", run_config=run_config)
    _write_json(str(args.out) + ".losses.json", {"infonce_loss": curve})
    log.info("retriever trained (%d steps) -> %s", len(curve), args.out)
    return 0


def cmd_train_reranker(args) -> int:
    file_cfg = _load_config_file(args.config)
    corpus, proofs = _split_proofs(args.corpus, args.split, "train")
    dataset = build_dataset(proofs, corpus)
    retriever = EncoderBundle.load(args.retriever_ckpt, args.vocab)
    index = load_index(args.retriever_index)
    bundle = EncoderBundle.load(args.init, args.vocab)
    head = bundle.head or init_rerank_head(bundle.config)
    cfg = RerankTrainConfig(
        batch_size=_layered(args, file_cfg, "batch-size", 2, int),
        grad_accum=_layered(args, file_cfg, "grad-accum", 8, int),
        group_size=_layered(args, file_cfg, "group-size", 8, int),
        k1=args.k1,
        rerank_depth=_layered(args, file_cfg, "rerank-depth", 20, int),
        epochs=_layered(args, file_cfg, "epochs", 1, int),
        seed=_layered(args, file_cfg, "seed", 0, int),
        lr=_layered(args, file_cfg, "lr", 2e-5, float),
        normalizer=_layered(args, file_cfg, "normalizer", "probability"),
    )
    curve = train_reranker(dataset, corpus, retriever, index, bundle, head, cfg)
    params = dict(bundle.params)
    params.update(head)
    run_config = {"split": str(args.split), "seed": cfg.seed, "epochs": cfg.epochs, "k1": cfg.k1}
    save_checkpoint(args.out, params, bundle.config, kind="reranker", run_config=run_config)
    _write_json(str(args.out) + ".losses.json", {"rerank_loss": curve})
    log.info("reranker trained (%d steps) -> %s", len(curve), args.out)
    return 0


def cmd_embed_corpus(args) -> int:
    corpus, _, _ = ingest_corpus(args.corpus)
    bundle = EncoderBundle.load(args.ckpt, args.vocab)
    index = build_index(corpus, bundle, _mode(args.mode))
    save_index(index, args.out)
    log.info("indexed %d premises (%s mode) -> %s", len(index), args.mode, args.out)
    return 0


def cmd_search(args) -> int:
    corpus, _, _ = ingest_corpus(args.corpus)
    bundle = EncoderBundle.load(args.ckpt, args.vocab)
    index = load_index(args.index)
    if index.fingerprint and bundle.fingerprint and index.fingerprint != bundle.fingerprint:
        raise CliError(
            "index was built with a different encoder checkpoint "
            f"({index.fingerprint[:12]}.. vs {bundle.fingerprint[:12]}..)"
        )
    if args.mode and _mode(args.mode) is not index.mode:
        raise CliError(
            f"index was built in {index.mode.value!r} mode, but --mode {args.mode} given"
        )
    state_text = Path(args.state_file).read_text(encoding="utf-8").strip()
    svec = embed_state(state_text, bundle)
    if args.rerank:
        if not args.reranker_ckpt:
            raise CliError("--rerank requires --reranker-ckpt")
        if args.k > args.k1:
            raise CliError(f"k={args.k} must not exceed k1={args.k1} when reranking")
        rr = EncoderBundle.load(args.reranker_ckpt, args.vocab)
        cfr = search(index, svec, args.k1)
        results = rerank(state_text, cfr, corpus, rr, rr.head, args.k)
        rows = [
            {"premise_id": pid, "name": corpus[pid].name, "rerank_probability": prob}
            for pid, prob in results
        ]
    else:
        rows = [
            {"premise_id": pid, "name": corpus[pid].name, "cfr_score": s}
            for pid, s in search(index, svec, args.k)
        ]
    json.dump({"results": rows}, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_evaluate(args) -> int:
    corpus, proofs = _split_proofs(args.corpus, args.split_dir, args.split)
    if args.pairs:
        dataset = read_dataset_jsonl(args.pairs, corpus)
    else:
        dataset = build_dataset(proofs, corpus)
    bundle = EncoderBundle.load(args.ckpt, args.vocab)
    index = load_index(args.index)
    ks = tuple(int(k) for k in args.ks.split(","))
    if args.rerank:
        rr = EncoderBundle.load(args.reranker_ckpt, args.vocab)

        def ranker(state):
            svec = embed_state(state, bundle)
            cfr = search(index, svec, args.k1)
            return [pid for pid, _ in rerank(state, cfr, corpus, rr, rr.head, len(cfr))]

    else:

        def ranker(state):
            svec = embed_state(state, bundle)
            return [pid for pid, _ in search(index, svec, max(ks))]

    report = evaluate(
        ranker,
        dataset.pairs,
        corpus,
        ks,
        config={
            "split": args.split,
            "rerank": bool(args.rerank),
            "k1": args.k1,
            "format_version": FORMAT_VERSION,
        },
    )
    _write_json(args.out, report.to_dict())
    Path(str(args.out) + ".csv").write_text(report.to_csv(), encoding="utf-8")
    for k in ks:
        m = report.metrics[k]
        log.info(
            "k=%d recall %.4f precision %.4f f1 %.4f ndcg %.4f",
            k, m["recall"], m["precision"], m["f1"], m["ndcg"],
        )
    return 0


def cmd_perturb(args) -> int:
    corpus, proofs = _split_proofs(args.corpus, args.split_dir, args.split)
    dataset = build_dataset(proofs, corpus)
    spec = PerturbationSpec(kind=args.kind, ratio=args.ratio, seed=args.seed)
    perturbed = perturb(dataset.pairs, spec)
    write_dataset_jsonl(perturbed, corpus, args.out)
    log.info("perturbed %d pairs (%s, ratio %.2f) -> %s", len(perturbed), args.kind, args.ratio, args.out)
    return 0


def cmd_data_fraction(args) -> int:
    file_cfg = _load_config_file(args.config)
    corpus, train_proofs = _split_proofs(args.corpus, args.split_dir, "train")
    _, test_proofs = _split_proofs(args.corpus, args.split_dir, "test")
    train_ds = build_dataset(train_proofs, corpus)
    test_ds = build_dataset(test_proofs, corpus)
    vocab = load_vocabulary(args.vocab)
    seed = _layered(args, file_cfg, "seed", 0, int)
    mode = _mode(args.mode)
    fractions = [float(f) for f in args.fractions.split(",")]

    def pipeline(subset):
        init_ckpt, config, _ = load_checkpoint(args.init)
        bundle = EncoderBundle(params=init_ckpt, config=config, vocab=vocab)
        cfg = RetrieverTrainConfig(
            batch_size=_layered(args, file_cfg, "batch-size", 8, int),
            epochs=_layered(args, file_cfg, "epochs", 1, int),
            seed=seed,
            lr=_layered(args, file_cfg, "lr", 2e-5, float),
            tau=_layered(args, file_cfg, "tau", 0.05, float),
            mode=mode,
        )
        train_retriever(subset, corpus, bundle, cfg)
        index = build_index(corpus, bundle, mode)

        def ranker(state):
            return [pid for pid, _ in search(index, embed_state(state, bundle), 10)]

        return evaluate(ranker, test_ds.pairs, corpus, DEFAULT_KS)

    runs = data_fraction_runs(train_ds, fractions, pipeline, seed=seed)
    _write_json(args.out, {"format_version": FORMAT_VERSION, "runs": runs})
    for run in runs:
        log.info("fraction %.2f: %s", run["fraction"], run["report"]["metrics"])
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import SearchEngine, ServiceConfig, create_app

    config = ServiceConfig.from_file(args.config)
    engine = SearchEngine.load(config)
    app = create_app(engine, config)
    log.info("serving on %s:%d (index rows: %d)", config.host, config.port, len(engine.index))
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="leanpremise",
        description="Premise retrieval pipelines: ingest, train, index, search, evaluate, serve.",
    )
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="parse a JSONL corpus into normalized artifacts")
    sp.add_argument("--in", dest="inp", required=True, help="input corpus JSONL")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("make-synthetic", help="generate the planted synthetic corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--premises", type=int, default=100)
    sp.add_argument("--steps", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_make_synthetic)

    sp = sub.add_parser("split", help="split proofs into train/val/test")
    sp.add_argument("--data", required=True, help="corpus JSONL")
    sp.add_argument("--out", required=True)
    sp.add_argument("--strategy", choices=["RD", "RI", "PL", "PF"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-val", type=int)
    sp.add_argument("--n-test", type=int)
    sp.add_argument("--config")
    sp.set_defaults(fn=cmd_split)

    sp = sub.add_parser("train-tokenizer", help="train the WordPiece vocabulary")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--vocab-size", type=int)
    sp.add_argument("--min-freq", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.set_defaults(fn=cmd_train_tokenizer)

    sp = sub.add_parser("pretrain", help="MLM pretraining of an encoder")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--split", help="restrict states to this split dir's train side")
    sp.add_argument("--config")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--wrap-specials", action="store_true",
                    help="wrap sequences in [CLS]/[SEP] (re-ranker pretraining)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("train-retriever", help="contrastive training of the CFR encoder")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--split", required=True, help="split directory")
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--init", required=True, help="initial checkpoint (pretrained)")
    sp.add_argument("--config")
    sp.add_argument("--mode", choices=["conv", "fine"], default="fine")
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--group-size", type=int)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train_retriever)

    sp = sub.add_parser("train-reranker", help="train the CAR cross-encoder on hard negatives")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--split", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--init", required=True, help="initial reranker checkpoint (pretrained)")
    sp.add_argument("--retriever-ckpt", required=True)
    sp.add_argument("--retriever-index", required=True)
    sp.add_argument("--k1", type=int, default=100)
    sp.add_argument("--config")
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--grad-accum", type=int)
    sp.add_argument("--group-size", type=int)
    sp.add_argument("--rerank-depth", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train_reranker)

    sp = sub.add_parser("embed-corpus", help="build the premise index")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--mode", choices=["conv", "fine"], default="fine")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_embed_corpus)

    sp = sub.add_parser("search", help="query the index for a proof state")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--index", required=True)
    sp.add_argument("--state-file", required=True)
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--mode", choices=["conv", "fine"], help="assert the index's similarity mode")
    sp.add_argument("--rerank", action="store_true")
    sp.add_argument("--k1", type=int, default=20)
    sp.add_argument("--reranker-ckpt")
    sp.set_defaults(fn=cmd_search)

    sp = sub.add_parser("evaluate", help="metrics over a split")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--split-dir", required=True)
    sp.add_argument("--split", default="test", choices=["train", "val", "test"])
    sp.add_argument("--pairs", help="evaluate these (possibly perturbed) pairs instead")
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--index", required=True)
    sp.add_argument("--ks", default="1,5,10")
    sp.add_argument("--rerank", action="store_true")
    sp.add_argument("--k1", type=int, default=20)
    sp.add_argument("--reranker-ckpt")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("perturb", help="perturb test-split states")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--split-dir", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--kind", required=True, choices=["shuffle", "remove"])
    sp.add_argument("--ratio", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_perturb)

    sp = sub.add_parser("data-fraction", help="nested-subset training runs")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--split-dir", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--init", required=True)
    sp.add_argument("--fractions", default="0.25,0.5,1.0")
    sp.add_argument("--mode", choices=["conv", "fine"], default="fine")
    sp.add_argument("--config")
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_data_fraction)

    sp = sub.add_parser("serve", help="run the HTTP search service")
    sp.add_argument("--config", required=True)
    sp.set_defaults(fn=cmd_serve)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except (CliError, OSError, ValueError, RuntimeError, KeyError) as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
