"""Command-line entry point: ``hignn <subcommand> ...``.

Exit codes: 0 success, 1 validation error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import TrainConfig
from .corpus_io import (CheckpointError, CorpusParseError, CorpusValidationError, EmbeddingTableError,
                        load_corpus, load_documents, load_embedding_table, save_documents, save_embedding_table,
                        windows_from_documents)
from .graph import FWD, RelationVocab, build_syntax_graph
from .substrate import DimensionError
from .synth import GenSpec, generate_corpus
from .trainer import (NumericError, evaluate, load_melenc, load_model, melenc_diagnostics, pretrain_melenc,
                      run_ablation_suite, save_melenc, save_model, split_windows, train, unique_sentences)

log = logging.getLogger("hignn")

VALIDATION_ERRORS = (CorpusParseError, CorpusValidationError, EmbeddingTableError, CheckpointError, DimensionError,
                     ValueError, KeyError, FileNotFoundError, IndexError)


def default_emb_path(corpus: str | Path) -> Path:
    """``data/c.jsonl`` -> ``data/c.emb.txt``."""
    p = Path(corpus)
    return p.with_name(p.name.split(".")[0] + ".emb.txt")


def _load_config(path: str | None) -> TrainConfig:
    return TrainConfig.load(path) if path else TrainConfig()


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_gen_corpus(args) -> None:
    spec = GenSpec()
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            spec = GenSpec.from_dict(json.load(fh))
    spec.validate()
    docs, table = generate_corpus(spec)
    save_documents(docs, args.out)
    emb_out = args.emb_out or default_emb_path(args.out)
    save_embedding_table(table, emb_out)
    log.info("wrote %d documents to %s and embeddings to %s", len(docs), args.out, emb_out)


def cmd_build_graph(args) -> None:
    docs = load_documents(args.corpus)
    sents = [s for d in docs for s in d.sentences]
    vocab = RelationVocab.from_sentences(sents)
    labels = vocab.labels
    with open(args.out, "w", encoding="utf-8") as fh:
        for d in docs:
            for k, s in enumerate(d.sentences):
                g = build_syntax_graph(s, vocab, include_global=not args.no_global)
                nodes = [w.form for w in s.words] + (["<GLOBAL>"] if g.global_index is not None else [])
                edges = [[e.src, e.dst, labels[e.relation], "fwd" if e.direction == FWD else "rev"] for e in g.edges]
                fh.write(json.dumps({"doc_id": d.doc_id, "position": k, "nodes": nodes, "edges": edges},
                                    separators=(",", ":")) + "\n")


def cmd_pretrain_melenc(args) -> None:
    cfg = _load_config(args.config)
    if args.steps is not None:
        cfg = cfg.replace(melenc_steps=args.steps)
    train_w, test_w = split_windows(load_corpus(args.corpus))
    res, mcfg = pretrain_melenc(cfg, train_w)
    save_melenc(res.model, mcfg, args.out)
    if test_w:
        diag = melenc_diagnostics(res.model, mcfg, unique_sentences(train_w), unique_sentences(test_w), cfg.seed)
        log.info("speaker probe %.3f (chance %.3f), regression R2 %.3f",
                 diag["probe_accuracy"], diag["chance"], diag["r2"])


def cmd_train(args) -> None:
    cfg = _load_config(args.config)
    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    windows = load_corpus(args.corpus)
    table = load_embedding_table(args.emb or cfg.emb or default_emb_path(args.corpus))
    train_w, _ = split_windows(windows, args.holdout)
    encoder = None
    if args.melenc:
        mel_model, mcfg = load_melenc(args.melenc)
        if mcfg.d_p != cfg.d_p:
            raise DimensionError(f"mel encoder d_p={mcfg.d_p} but config d_p={cfg.d_p}")
        encoder = mel_model.encoder
    res = train(cfg, train_w, table, encoder, log_every=args.log_every)
    save_model(res.model, res.config, args.out)


def cmd_eval(args) -> None:
    model = load_model(args.ckpt)
    windows = load_corpus(args.corpus)
    table = load_embedding_table(args.emb or model.config.emb or default_emb_path(args.corpus))
    if args.split == "test":
        _, windows = split_windows(windows, args.holdout)
    report = evaluate(model, windows, table)
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(report.dumps() + "\n")
    log.info("f0_rmse %.4f  duration_mse %.4f  mcd_proxy %.4f", report.f0_rmse, report.duration_mse,
             report.mcd_proxy)


def cmd_ablate(args) -> None:
    cfg = _load_config(args.config)
    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    if args.corpus:
        windows = load_corpus(args.corpus)
        table = load_embedding_table(args.emb or default_emb_path(args.corpus))
    else:
        docs, table = generate_corpus(GenSpec())
        windows = windows_from_documents(docs)
    train_w, test_w = split_windows(windows, args.holdout)
    table_out = run_ablation_suite(cfg, train_w, test_w, table, list(range(args.seeds)))
    _write_json(table_out, args.out)
    for name, s in table_out["summary"].items():
        log.info("%-32s f0_rmse %.3f (%+.1f%%)", name, s["f0_rmse"], 100 * s["f0_rmse_rel_change"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hignn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic corpus")
    p.add_argument("--spec", help="GenSpec JSON (defaults otherwise)")
    p.add_argument("--out", required=True)
    p.add_argument("--emb-out", help="embedding table path (default: <corpus>.emb.txt)")
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("build-graph", help="dump syntax graphs as JSON lines")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-global", action="store_true")
    p.set_defaults(fn=cmd_build_graph)

    p = sub.add_parser("pretrain-melenc", help="pretrain the adversarial mel encoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--steps", type=int)
    p.set_defaults(fn=cmd_pretrain_melenc)

    p = sub.add_parser("train", help="train the TTS model")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--emb")
    p.add_argument("--melenc", help="frozen mel-encoder checkpoint (omit to train without supervision)")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--holdout", type=float, default=0.1)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--emb")
    p.add_argument("--report", required=True)
    p.add_argument("--split", choices=("test", "all"), default="test")
    p.add_argument("--holdout", type=float, default=0.1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation suite")
    p.add_argument("--config")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds (0..n-1)")
    p.add_argument("--corpus", help="corpus JSONL (default synthetic corpus otherwise)")
    p.add_argument("--emb")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--holdout", type=float, default=0.1)
    p.set_defaults(fn=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return 2
    except VALIDATION_ERRORS as exc:
        log.error("validation error: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
