"""Command-line entry point.

One executable, seven subcommands covering the full pipeline: corpus
cleaning, augmentation statistics, index building, neighbor retrieval,
training, similarity evaluation, and token-embedding analysis.  Every
subcommand that writes into an output directory also records its resolved
configuration and the SHA-256 of each input file there, so runs can be
reproduced from the artifacts alone.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Callable

import numpy as np

from . import analysis, augment, corpus, encoder, pipeline, retrieval, tokenizer, util
from .errors import ValidationError


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the contract here is exit 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _probability(flag: str):
    def parse(value: str) -> float:
        try:
            x = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects a number, got {value!r}") from None
        if not 0.0 <= x <= 1.0:
            raise argparse.ArgumentTypeError(f"{flag} must be in [0, 1], got {value}")
        return x

    return parse


def _hash_inputs(args: argparse.Namespace) -> dict[str, str]:
    hashes = {}
    for value in vars(args).values():
        for candidate in value if isinstance(value, list) else [value]:
            if isinstance(candidate, str):
                path = candidate.split("=", 1)[-1]
                if os.path.isfile(path):
                    hashes[path] = util.sha256_file(path)
    return hashes


def _write_run_record(
    out_dir: str | None, args: argparse.Namespace, record_path: str | None = None
) -> None:
    if record_path is None:
        os.makedirs(out_dir, exist_ok=True)
        record_path = os.path.join(out_dir, "run.json")
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    record = {"config": resolved, "input_hashes": _hash_inputs(args)}
    with open(record_path, "w", encoding="utf-8") as f:
        json.dump(record, f, sort_keys=True, indent=2)
        f.write("\n")


def _load_tokenizer(args: argparse.Namespace) -> tokenizer.Tokenizer:
    return tokenizer.load_tokenizer(args.vocab, args.merges)


def _effective_threads(args: argparse.Namespace) -> int:
    if getattr(args, "deterministic", False):
        return 1
    threads = getattr(args, "threads", None)
    return threads if threads else (os.cpu_count() or 1)


# -- subcommand implementations ---------------------------------------------


def _cmd_preprocess(args: argparse.Namespace) -> int:
    with util.open_text(args.input) as f:
        kept = list(corpus.clean_corpus(f, args.min_words))
    _write_run_record(args.out, args)
    out_path = os.path.join(args.out, "corpus.txt")
    with open(out_path, "w", encoding="utf-8") as f:
        for sentence in kept:
            f.write(sentence.text + "\n")
    print(f"kept {len(kept)} sentences -> {out_path}")
    return 0


def _cmd_augment_stats(args: argparse.Namespace) -> int:
    tok = _load_tokenizer(args)
    sentences = [s.text for s in corpus.read_corpus(args.corpus)]
    cfg = augment.AugmentConfig(p_sc=args.psc, seed=args.seed)
    stats = augment.outcome_stats(sentences, tok, cfg, threads=_effective_threads(args))
    report = stats.to_tsv()
    if args.out:
        _write_run_record(args.out, args)
        with open(os.path.join(args.out, "stats.tsv"), "w", encoding="utf-8") as f:
            f.write(report)
    sys.stdout.write(report)
    return 0


def _cmd_build_index(args: argparse.Namespace) -> int:
    ids, matrix = encoder.load_vectors(args.vectors)
    index = retrieval.build_index(ids, matrix)
    _write_run_record(args.out, args)
    out_path = os.path.join(args.out, "index.bin")
    retrieval.save_index(out_path, index)
    print(f"indexed {len(index)} vectors (dim {index.dim}) -> {out_path}")
    return 0


def _cmd_retrieve(args: argparse.Namespace) -> int:
    index = retrieval.load_index(args.index)
    lines = []
    if args.strategy is None:
        for nid, score in retrieval.top_k(index, args.query_id, args.k):
            lines.append(f"{nid}\t{score:.6f}")
    else:
        cfg = retrieval.RetrievalConfig(k=args.k, s=args.s, strategy=args.strategy)
        rng = np.random.default_rng(args.seed)
        for nid in retrieval.sample_negatives(index, args.query_id, cfg, rng):
            lines.append(str(nid))
    body = "\n".join(lines) + "\n"
    if args.out:
        _write_run_record(args.out, args)
        with open(os.path.join(args.out, "neighbors.tsv"), "w", encoding="utf-8") as f:
            f.write(body)
    sys.stdout.write(body)
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    tok = _load_tokenizer(args)
    train_corpus = corpus.read_corpus(args.corpus)
    dev = corpus.load_sts(args.dev)
    config = pipeline.TrainConfig(
        p_sc=args.psc,
        variant=args.variant,
        one_view_augment=not args.two_view_augment,
        lowercase_train=args.lowercase_train,
        tau=args.tau,
        dropout=args.dropout,
        max_tokens=args.max_tokens,
        batch_size=args.batch_size,
        epochs=args.epochs,
        lr=args.lr,
        dim=args.dim,
        eval_every=args.eval_every,
        seed=args.seed,
        use_retrieval=not args.no_retrieval,
        k=args.k,
        s=args.s,
        strategy=args.strategy,
        exclude_self_negative=args.exclude_self_negative,
    )
    _write_run_record(args.out, args)
    index = None
    if config.use_retrieval:
        if args.index:
            index = retrieval.load_index(args.index)
        else:
            # no precomputed index: build one from the untrained encoder
            init_params = pipeline.init_encoder_params(tok.vocab_size, config.dim, config.seed)
            ids, matrix = pipeline.encode_corpus(init_params, tok, train_corpus, config.max_tokens)
            index = retrieval.build_index(ids, matrix)
            retrieval.save_index(os.path.join(args.out, "index.bin"), index)
    result = pipeline.train(train_corpus, tok, config, dev, index)
    pipeline.save_checkpoint(os.path.join(args.out, "checkpoint.bin"), result.best)
    pipeline.save_checkpoint(os.path.join(args.out, "final.bin"), result.final)
    pipeline.write_metrics(os.path.join(args.out, "metrics.jsonl"), result.metrics)
    print(
        f"trained {result.final.step} steps; "
        f"best dev {result.best.dev_score:.4f} at step {result.best.step}"
    )
    return 0


_TRANSFORMS: dict[str, Callable[[str], str] | None] = {
    "none": None,
    "lowercase": augment.lowercase_transform,
    "uppercase-first": augment.uppercase_first,
    "lowercase-uppercase-first": lambda s: augment.uppercase_first(
        augment.lowercase_transform(s)
    ),
}


def _cmd_eval(args: argparse.Namespace) -> int:
    tok = _load_tokenizer(args)
    checkpoint = pipeline.load_checkpoint(args.checkpoint)
    datasets = []
    for spec in args.sts:
        name, _, path = spec.partition("=")
        if not path:
            name, path = os.path.basename(spec), spec
        datasets.append((name, corpus.load_sts(path)))
    report = pipeline.evaluate_sts_suite(
        checkpoint.params,
        tok,
        datasets,
        max_tokens=args.max_tokens,
        transform=_TRANSFORMS[args.transform],
    )
    lines = [f"{name}\t{score:.4f}" for name, score in report.per_set.items()]
    lines.append(f"Avg\t{report.average:.4f}")
    body = "\n".join(lines) + "\n"
    if args.out:
        _write_run_record(args.out, args)
        with open(os.path.join(args.out, "eval.tsv"), "w", encoding="utf-8") as f:
            f.write(body)
    sys.stdout.write(body)
    return 0


def _cmd_analyze_embeddings(args: argparse.Namespace) -> int:
    tok = _load_tokenizer(args)
    if args.checkpoint:
        embeddings = pipeline.load_checkpoint(args.checkpoint).params.token_embeddings
    else:
        ids, matrix = encoder.load_vectors(args.vectors)
        if not np.array_equal(np.sort(ids), np.arange(tok.vocab_size)):
            raise ValidationError("vector ids must cover every token id exactly once")
        embeddings = np.empty((tok.vocab_size, matrix.shape[1]))
        embeddings[ids] = matrix
    sentences = [s.text for s in corpus.read_corpus(args.corpus)] if args.corpus else ()
    labels = analysis.label_tokens(tok, sentences)
    report = analysis.bias_report(tok, embeddings, labels)
    _write_run_record(None, args, record_path=args.out + ".run.json")
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(report)
    print(f"wrote {args.out}")
    return 0


# -- parser wiring ------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="cards", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base RNG seed")
    common.add_argument("--threads", type=int, default=None, help="max worker threads")
    common.add_argument(
        "--deterministic",
        action="store_true",
        help="force serial execution for bitwise-reproducible output",
    )
    bpe = argparse.ArgumentParser(add_help=False)
    bpe.add_argument("--vocab", required=True, help="vocabulary JSON file")
    bpe.add_argument("--merges", required=True, help="merge rules file")

    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="clean a raw corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--min-words", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser(
        "augment-stats", parents=[common, bpe], help="tabulate case-flip outcome classes"
    )
    p.add_argument("--corpus", required=True)
    p.add_argument("--psc", type=_probability("--psc"), default=0.15)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_augment_stats)

    p = sub.add_parser("build-index", parents=[common], help="build an exact cosine index")
    p.add_argument("--vectors", required=True, help="sentence-vector file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("retrieve", parents=[common], help="query neighbors or sample negatives")
    p.add_argument("--index", required=True)
    p.add_argument("--query-id", type=int, required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--strategy", choices=retrieval.STRATEGIES, default=None)
    p.add_argument("--s", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("train", parents=[common, bpe], help="train the toy encoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev", required=True, help="tab-separated dev pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--index", default=None, help="prebuilt index file")
    p.add_argument("--psc", type=_probability("--psc"), default=0.1)
    p.add_argument("--variant", choices=augment.VARIANTS, default="default")
    p.add_argument("--two-view-augment", action="store_true", help="augment both views")
    p.add_argument("--lowercase-train", action="store_true")
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--dropout", type=_probability("--dropout"), default=0.1)
    p.add_argument("--max-tokens", type=int, default=32)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--eval-every", type=int, default=125)
    p.add_argument("--no-retrieval", action="store_true")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--s", type=int, default=1)
    p.add_argument("--strategy", choices=retrieval.STRATEGIES, default="r_uniform")
    p.add_argument("--exclude-self-negative", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", parents=[common, bpe], help="score similarity benchmarks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument(
        "--sts",
        action="append",
        required=True,
        metavar="NAME=FILE",
        help="dataset to score; repeatable",
    )
    p.add_argument("--transform", choices=sorted(_TRANSFORMS), default="none")
    p.add_argument("--max-tokens", type=int, default=32)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser(
        "analyze-embeddings", parents=[common, bpe], help="project token embeddings to 2-D"
    )
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", default=None)
    group.add_argument("--vectors", default=None, help="token-vector file keyed by token id")
    p.add_argument("--corpus", default=None, help="corpus for token frequencies")
    p.add_argument("--out", required=True, help="output TSV path")
    p.set_defaults(func=_cmd_analyze_embeddings)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
