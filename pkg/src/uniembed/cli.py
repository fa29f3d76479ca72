"""Command-line front door: files in, engine operations, files/stdout out.

Exit codes: 0 success, 1 domain error (bad data, contract violations,
file problems), 2 usage error. Results go to stdout, diagnostics to
stderr. `--threads` only changes scheduling, never answers.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from .errors import EngineError
from .evaluation import mean_precision_at_k, per_query_precision, read_ground_truth
from .metric_learning import LrSchedule, ToyTrainConfig, train_toy, write_training_log
from .pca import PcaModel, fit_pca, project
from .pipeline import apply_pipeline, build_pipeline
from .retrieval import (
    INDEX_BLOCK,
    build_index,
    read_predictions,
    search,
    write_predictions,
)
from .soup import load_checkpoint, save_checkpoint, soup_uniform
from .store import load_embeddings, save_embeddings, validate


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uniembed",
        description="Embedding descriptor pipelines, exact top-k retrieval, and scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a UEMB file against its invariants")
    p.add_argument("embeddings")

    p = sub.add_parser("pca-fit", help="fit a PCA model on a UEMB training set")
    p.add_argument("train")
    p.add_argument("-k", type=int, required=True, help="output dimensionality")
    p.add_argument("-o", "--output", required=True, help="model checkpoint (UCKP)")

    p = sub.add_parser("pca-apply", help="project a UEMB set through a fitted model")
    p.add_argument("model")
    p.add_argument("embeddings")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("pipeline-apply", help="run a JSON pipeline spec over source sets")
    p.add_argument("spec")
    p.add_argument("sources", nargs="+", help="one UEMB file per declared source, in order")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("search", help="exact top-k nearest neighbors")
    p.add_argument("index")
    p.add_argument("queries")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("-o", "--output", required=True, help="predictions TSV")
    p.add_argument("--distances", help="optional distances TSV")
    p.add_argument("--threads", type=int, default=os.cpu_count())
    p.add_argument("--block-size", type=int, default=INDEX_BLOCK, help="index rows per tile")

    p = sub.add_parser("evaluate", help="mean precision at k over predictions")
    p.add_argument("predictions")
    p.add_argument("ground_truth")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--per-query", help="optional per-query TSV output")

    p = sub.add_parser("soup", help="uniform-average matching checkpoints")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("train-toy", help="train the toy embedder + margin head")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--samples-per-class", type=int, default=30)
    p.add_argument("--input-dim", type=int, default=64)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--c-sub", type=int, default=3)
    p.add_argument("--scale", type=float, default=16.0)
    p.add_argument("--m-min", type=float, default=0.2)
    p.add_argument("--m-max", type=float, default=0.5)
    p.add_argument("--margin-lambda", type=float, default=0.25)
    p.add_argument("--dropout-rate", type=float, default=0.1)
    p.add_argument("--dropout-samples", type=int, default=4)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--total-steps", type=int, default=0, help="0 = exactly the planned steps")
    p.add_argument("--head-lr", type=float, default=0.2)
    p.add_argument("--layer-lr-min", type=float, default=0.02)
    p.add_argument("--layer-lr-max", type=float, default=0.1)
    p.add_argument("-o", "--output", required=True, help="checkpoint (UCKP)")
    p.add_argument("--log", help="training log TSV")

    p = sub.add_parser("bench", help="measure search throughput; writes nothing")
    p.add_argument("index")
    p.add_argument("queries")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--threads", type=int, default=os.cpu_count())
    p.add_argument("--repeats", type=int, default=1)

    return parser


def _cmd_validate(args) -> int:
    emb = load_embeddings(args.embeddings)
    report = validate(emb)
    if not report:
        print(f"OK: {emb.count} rows, dim {emb.dim}, normalized={emb.normalized}")
        return 0
    for violation in report:
        print(str(violation))
    print(f"{len(report)} violation(s)", file=sys.stderr)
    return 1


def _cmd_pca_fit(args) -> int:
    train = load_embeddings(args.train)
    model = fit_pca(train, args.k)
    save_checkpoint(model.to_checkpoint(), args.output)
    print(f"fitted {model.input_dim} -> {model.output_dim} on {train.count} rows", file=sys.stderr)
    return 0


def _cmd_pca_apply(args) -> int:
    model = PcaModel.from_checkpoint(load_checkpoint(args.model))
    out = project(model, load_embeddings(args.embeddings))
    save_embeddings(out, args.output)
    print(f"projected {out.count} rows to dim {out.dim}", file=sys.stderr)
    return 0


def _cmd_pipeline_apply(args) -> int:
    pipeline = build_pipeline(args.spec)
    declared = [tag for tag, _ in pipeline.sources]
    if len(args.sources) != len(declared):
        raise EngineError(
            f"pipeline declares {len(declared)} sources {declared}, got {len(args.sources)} files"
        )
    sources = {tag: load_embeddings(path) for tag, path in zip(declared, args.sources)}
    out = apply_pipeline(pipeline, sources)
    save_embeddings(out, args.output)
    print(f"wrote {out.count} rows at dim {out.dim}", file=sys.stderr)
    return 0


def _cmd_search(args) -> int:
    index = build_index(load_embeddings(args.index))
    queries = load_embeddings(args.queries)
    results = search(
        index, queries, k=args.k, threads=args.threads, index_block=args.block_size
    )
    write_predictions(results, args.output, args.distances)
    print(f"wrote {len(results)} result lines", file=sys.stderr)
    return 0


def _cmd_evaluate(args) -> int:
    predictions = read_predictions(args.predictions)
    gt = read_ground_truth(args.ground_truth)
    score = mean_precision_at_k(predictions, gt, k=args.k)
    if args.per_query:
        scores = per_query_precision(predictions, gt, k=args.k)
        with open(args.per_query, "w") as fh:
            for query_id, value in scores.items():
                fh.write(f"{query_id}\t{value:.6f}\n")
    print(f"mP@{args.k} = {score:.6f}")
    return 0


def _cmd_soup(args) -> int:
    checkpoints = [load_checkpoint(path) for path in args.checkpoints]
    save_checkpoint(soup_uniform(checkpoints), args.output)
    print(f"averaged {len(checkpoints)} checkpoints", file=sys.stderr)
    return 0


def _cmd_train_toy(args) -> int:
    samples = args.classes * args.samples_per_class
    steps = args.epochs * ((samples + args.batch_size - 1) // args.batch_size)
    total = args.total_steps if args.total_steps > 0 else steps
    config = ToyTrainConfig(
        seed=args.seed,
        n_classes=args.classes,
        samples_per_class=args.samples_per_class,
        input_dim=args.input_dim,
        embed_dim=args.embed_dim,
        c_sub=args.c_sub,
        scale=args.scale,
        m_min=args.m_min,
        m_max=args.m_max,
        margin_lambda=args.margin_lambda,
        dropout_rate=args.dropout_rate,
        dropout_samples=args.dropout_samples,
        epochs=args.epochs,
        batch_size=args.batch_size,
        noise_scale=args.noise_scale,
        schedule=LrSchedule(
            warmup_steps=min(args.warmup, total),
            total_steps=total,
            peak_lr=args.layer_lr_max,
            layer_lr_min=args.layer_lr_min,
            layer_lr_max=args.layer_lr_max,
            n_layers=2,
            head_lr=args.head_lr,
        ),
    )
    ckpt, log = train_toy(config)
    save_checkpoint(ckpt, args.output)
    if args.log:
        write_training_log(log, args.log)
    print(f"trained {len(log)} steps; final loss {log[-1].loss:.6f}", file=sys.stderr)
    return 0


def _cmd_bench(args) -> int:
    index = build_index(load_embeddings(args.index))
    queries = load_embeddings(args.queries)
    best = float("inf")
    for _ in range(max(1, args.repeats)):
        t0 = time.perf_counter()
        search(index, queries, k=args.k, threads=args.threads)
        best = min(best, time.perf_counter() - t0)
    print(f"{queries.count / best:.1f} queries/sec ({queries.count} queries, best of {args.repeats})")
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "pca-fit": _cmd_pca_fit,
    "pca-apply": _cmd_pca_apply,
    "pipeline-apply": _cmd_pipeline_apply,
    "search": _cmd_search,
    "evaluate": _cmd_evaluate,
    "soup": _cmd_soup,
    "train-toy": _cmd_train_toy,
    "bench": _cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
