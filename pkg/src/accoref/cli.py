"""Command-line entry points: prepare, train, eval, predict, gen-synth, ablate.

Exit codes: 0 success, 1 internal error, 2 user/input error. Every command
validates its whole configuration before writing any file. Run settings
live in a JSON config; only the seed and the detection-loss toggle may be
overridden by flags so experiment provenance stays in one artifact.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .corpus import CorpusError, Document, SynthConfig, generate_synthetic, parse_conll, read_jsonl, write_jsonl
from .decoding import decode_corpus
from .embeddings import (
    EmbeddingError,
    EmbeddingTable,
    MissingEmbeddingError,
    hash_embeddings,
    load_embeddings,
)
from .metrics import MetricReport, corpus_report, write_conll_response
from .model import CorefModel
from .training import TrainConfig, ablation_run, save_run, train

THREADS_ENV = "ACCOREF_THREADS"


class UserError(Exception):
    """Bad input or configuration; maps to exit code 2."""


_PATH_KEYS = {"corpus", "embeddings", "out_dir"}
_RUN_KEYS = _PATH_KEYS | {"embedding_dim", "embedding_seed"} | {
    f.name for f in dataclasses.fields(TrainConfig)
}


def load_run_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise UserError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UserError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise UserError(f"{p}: config must be a JSON object")
    unknown = raw.keys() - _RUN_KEYS
    if unknown:
        raise UserError(f"{p}: unknown config keys {sorted(unknown)}")
    if "corpus" not in raw or "out_dir" not in raw:
        raise UserError(f"{p}: config requires 'corpus' and 'out_dir'")
    return raw


def _train_config(raw: dict) -> TrainConfig:
    kwargs = {
        f.name: raw[f.name] for f in dataclasses.fields(TrainConfig) if f.name in raw
    }
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UserError(f"invalid training configuration: {exc}") from exc


def _load_corpus(path: str) -> list[Document]:
    p = Path(path)
    if not p.exists():
        raise UserError(f"corpus file not found: {p}")
    docs = read_jsonl(p)
    if not docs:
        raise UserError(f"corpus {p} contains no documents")
    return docs


def _embedding_table(raw: dict, docs: list[Document]) -> tuple[EmbeddingTable, dict]:
    """Embeddings from a file when configured, hashed stand-ins otherwise."""
    if raw.get("embeddings"):
        path = Path(raw["embeddings"])
        if not path.exists():
            raise UserError(f"embeddings file not found: {path}")
        table = load_embeddings(path)
        return table, {"kind": "file", "path": str(path), "dim": table.dimension}
    dim = int(raw.get("embedding_dim", 64))
    seed = int(raw.get("embedding_seed", raw.get("seed", 0)))
    table = hash_embeddings(docs, dim, seed)
    return table, {"kind": "hash", "dim": dim, "seed": seed}


def _table_for_eval(info: dict, docs: list[Document], override: str | None) -> EmbeddingTable:
    if override:
        return load_embeddings(Path(override))
    if info.get("kind") == "hash":
        return hash_embeddings(docs, int(info["dim"]), int(info["seed"]))
    if info.get("kind") == "file":
        path = Path(info["path"])
        if not path.exists():
            raise UserError(
                f"checkpoint was trained on embeddings file {path}, which is missing; "
                "pass --embeddings"
            )
        return load_embeddings(path)
    raise UserError("checkpoint sidecar has no embedding provenance; pass --embeddings")


def _load_checkpoint(path: str) -> tuple[CorefModel, TrainConfig, dict]:
    p = Path(path)
    if not p.exists():
        raise UserError(f"checkpoint not found: {p}")
    model, sidecar = CorefModel.load(p)
    cfg = _train_config(sidecar.get("train_config", {}))
    return model, cfg, sidecar


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UserError(f"{THREADS_ENV} must be an integer, got {raw!r}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    docs = parse_conll(args.conll)
    write_jsonl(docs, args.out)
    clusters = sum(len(d.gold_clusters) for d in docs)
    print(f"prepared {len(docs)} documents, {clusters} gold clusters -> {args.out}")
    return 0


def cmd_gen_synth(args) -> int:
    cfg = SynthConfig(
        vocab_size=args.vocab,
        n_docs=args.docs,
        entities_per_doc=args.entities,
        mentions_per_entity=args.mentions,
        pronoun_rate=args.pronoun_rate,
        seed=args.seed,
        name_width_max=args.name_width_max,
    )
    docs = generate_synthetic(cfg)
    write_jsonl(docs, args.out)
    print(f"generated {len(docs)} synthetic documents -> {args.out}")
    return 0


def cmd_train(args) -> int:
    raw = load_run_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.no_detection_loss:
        raw["detection_loss"] = False
    cfg = _train_config(raw)
    docs = _load_corpus(raw["corpus"])
    table, emb_info = _embedding_table(raw, docs)
    result = train(docs, table, cfg, log=lambda e: print(json.dumps(e, sort_keys=True)))
    paths = save_run(result, cfg, raw["out_dir"], emb_info)
    final = result.history[-1]
    print(f"checkpoint: {paths['checkpoint']}")
    print(f"final dev avg F1: {final['avg_f1']:.4f}")
    return 0


def _predicted_clusters_from_file(path: str, docs: list[Document]) -> list[list[frozenset]]:
    p = Path(path)
    if not p.exists():
        raise UserError(f"predictions file not found: {p}")
    by_key = {}
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                by_key[obj["doc_key"]] = [
                    frozenset((int(s), int(e)) for s, e in cluster)
                    for cluster in obj["clusters"]
                ]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise UserError(f"{p}:{lineno}: bad prediction record ({exc})") from exc
    missing = [d.doc_key for d in docs if d.doc_key not in by_key]
    if missing:
        raise UserError(f"predictions missing documents: {missing[:5]}")
    return [by_key[d.doc_key] for d in docs]


def cmd_eval(args) -> int:
    docs = _load_corpus(args.corpus)
    gold = [[frozenset(c) for c in d.gold_clusters] for d in docs]
    if args.oracle_gold:
        preds = gold
    elif args.predictions:
        preds = _predicted_clusters_from_file(args.predictions, docs)
    elif args.checkpoint:
        model, cfg, sidecar = _load_checkpoint(args.checkpoint)
        table = _table_for_eval(sidecar.get("embedding", {}), docs, args.embeddings)
        if table.dimension != model.config.d_tok:
            raise UserError(
                f"embedding dimension {table.dimension} does not match the "
                f"checkpoint's token dimension {model.config.d_tok}"
            )
        preds = decode_corpus(docs, model, table, cfg, threads=args.threads)
    else:
        raise UserError("eval needs --checkpoint, --predictions or --oracle-gold")
    report = corpus_report(gold, preds)
    payload = json.dumps(report.to_json(), indent=2, sort_keys=True)
    print(payload)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    if args.conll_response:
        write_conll_response(docs, preds, args.conll_response)
    return 0


def cmd_predict(args) -> int:
    docs = _load_corpus(args.corpus)
    model, cfg, sidecar = _load_checkpoint(args.checkpoint)
    table = _table_for_eval(sidecar.get("embedding", {}), docs, args.embeddings)
    if table.dimension != model.config.d_tok:
        raise UserError(
            f"embedding dimension {table.dimension} does not match the "
            f"checkpoint's token dimension {model.config.d_tok}"
        )
    preds = decode_corpus(docs, model, table, cfg, threads=args.threads)
    with open(args.out, "w", encoding="utf-8") as fh:
        for doc, clusters in zip(docs, preds):
            record = {
                "doc_key": doc.doc_key,
                "clusters": [sorted([list(s) for s in c]) for c in clusters],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"wrote predictions for {len(docs)} documents -> {args.out}")
    return 0


def cmd_ablate(args) -> int:
    raw = load_run_config(args.config)
    cfg = _train_config(raw)
    docs = _load_corpus(raw["corpus"])
    table, _ = _embedding_table(raw, docs)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    report = ablation_run(docs, table, cfg, seeds)
    payload = json.dumps(report, indent=2, sort_keys=True)
    print(payload)
    out_dir = Path(raw["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(payload + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="accoref", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="convert CoNLL-2012 annotation to the internal JSONL")
    p.add_argument("conll")
    p.add_argument("out")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("gen-synth", help="generate a synthetic corpus")
    p.add_argument("out")
    p.add_argument("--docs", type=int, default=100)
    p.add_argument("--vocab", type=int, default=50)
    p.add_argument("--entities", type=int, default=3)
    p.add_argument("--mentions", type=int, default=4)
    p.add_argument("--pronoun-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name-width-max", type=int, default=1)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train from a JSON run config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-detection-loss", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against gold clusters")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictions")
    p.add_argument("--oracle-gold", action="store_true")
    p.add_argument("--embeddings")
    p.add_argument("--out")
    p.add_argument("--conll-response")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="decode a corpus to a predictions JSONL")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="paired runs with and without the detection loss")
    p.add_argument("config")
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is None and hasattr(args, "threads"):
        args.threads = _default_threads()
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, EmbeddingError, MissingEmbeddingError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal failure
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
