"""Command-line surface: defend, rank, stats, eval, attack-sim.

Line-oriented text in and out for ``defend`` and ``rank``; JSONL corpora for
``eval`` and ``attack-sim``. Every subcommand is deterministic for identical
flags and inputs. Exit codes: 0 success, 1 usage error, 2 data/model error.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import IO

from . import __version__
from .defense import DefenseConfig, DefenseOutcome, defend, detokenize, rank_importance
from .embeddings import (
    DEFAULT_EXACT_CAP,
    DEFAULT_SAMPLED_PAIRS,
    DEFAULT_STATS_SEED,
    EmbeddingError,
    EmbeddingStore,
    SimilarityStats,
    load_embeddings,
    similarity_stats,
    threshold_value,
)
from .evaluation import (
    CorpusRecord,
    KeywordClassifier,
    corpus_line,
    evaluate,
    format_report,
    read_corpus,
    synthetic_attack,
)
from .mlm import CorpusMlm, MlmBackend, TableMlm
from .tokenizer import tokenize

USAGE_ERROR = 1
DATA_ERROR = 2


class CliError(Exception):
    """Data or model problem surfaced to the user with exit code 2."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags by default; the contract wants 1.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _build_parser() -> _Parser:
    parser = _Parser(prog="maskrepair", description=__doc__)
    parser.add_argument("--version", action="version", version=f"maskrepair {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    defend_p = sub.add_parser("defend", help="repair sentences line by line")
    _backend_flags(defend_p)
    _stats_flags(defend_p)
    _defense_flags(defend_p)
    _io_flags(defend_p)
    defend_p.add_argument("--trace", metavar="PATH", help="write per-line replacement records (JSONL)")

    rank_p = sub.add_parser("rank", help="print per-line word importance tables")
    _backend_flags(rank_p, embeddings=False)
    _io_flags(rank_p)
    rank_p.add_argument("--top-k", type=int, default=50, help="candidate depth per position")

    stats_p = sub.add_parser("stats", help="embedding similarity statistics and thresholds")
    stats_p.add_argument("--embeddings", required=True, metavar="PATH")
    stats_p.add_argument("--format", choices=("text", "cache"), default="text")
    stats_p.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    stats_p.add_argument("--pairs", type=int, default=DEFAULT_SAMPLED_PAIRS)
    stats_p.add_argument("--seed", type=int, default=DEFAULT_STATS_SEED)
    stats_p.add_argument(
        "--alpha", type=float, action="append", help="threshold multiplier (repeatable)"
    )
    stats_p.add_argument("--output", metavar="PATH")

    eval_p = sub.add_parser("eval", help="run the evaluation protocol over a corpus")
    _backend_flags(eval_p)
    _stats_flags(eval_p)
    _defense_flags(eval_p)
    eval_p.add_argument("--corpus", required=True, metavar="PATH")
    eval_p.add_argument("--classifier", required=True, metavar="PATH")
    eval_p.add_argument("--report", choices=("kv", "table"), default="kv")
    eval_p.add_argument(
        "--log",
        metavar="PATH",
        help="per-record log path (JSONL); defaults to <output>.records.jsonl "
        "when --output is a file",
    )
    eval_p.add_argument("--output", metavar="PATH")

    attack_p = sub.add_parser("attack-sim", help="fill a corpus with synthetic attacks")
    attack_p.add_argument("--embeddings", required=True, metavar="PATH")
    attack_p.add_argument("--format", choices=("text", "cache"), default="text")
    attack_p.add_argument("--corpus", required=True, metavar="PATH")
    attack_p.add_argument("--classifier", required=True, metavar="PATH")
    attack_p.add_argument("--budget", type=int, default=3)
    attack_p.add_argument("--seed", type=int, default=DEFAULT_STATS_SEED)
    attack_p.add_argument("--output", metavar="PATH")
    return parser


def _backend_flags(parser: argparse.ArgumentParser, embeddings: bool = True) -> None:
    parser.add_argument(
        "--backend",
        required=True,
        metavar="SPEC",
        help="masked-LM backend: table:<json>, corpus:<text>, or onnx:<manifest>",
    )
    if embeddings:
        parser.add_argument("--embeddings", required=True, metavar="PATH")
        parser.add_argument("--format", choices=("text", "cache"), default="text")


def _stats_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--stats-mode", choices=("auto", "exact", "sampled"), default="auto")
    parser.add_argument("--stats-pairs", type=int, default=DEFAULT_SAMPLED_PAIRS)
    parser.add_argument("--stats-seed", type=int, default=DEFAULT_STATS_SEED)


def _defense_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=2.0)
    parser.add_argument("--n", type=int, default=3)
    parser.add_argument("--max-positions", type=int, default=50)
    parser.add_argument("--top-k", type=int, default=50)
    parser.add_argument("--min-word-len", type=int, default=2)


def _open_input(path: str | None) -> IO[str]:
    if path is None:
        return sys.stdin
    try:
        return open(path, "r", encoding="utf-8")
    except OSError as err:
        raise CliError(f"cannot read input file {path}: {err.strerror}") from None


def _open_output(path: str | None) -> IO[str]:
    if path is None:
        return sys.stdout
    try:
        return open(path, "w", encoding="utf-8")
    except OSError as err:
        raise CliError(f"cannot write output file {path}: {err.strerror}") from None


def _io_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", metavar="PATH", help="input file (default: stdin)")
    parser.add_argument("--output", metavar="PATH", help="output file (default: stdout)")


def _load_store(path: str, format: str) -> EmbeddingStore:
    try:
        store, _ = load_embeddings(path, format=format)
    except OSError as err:
        raise CliError(f"cannot read embeddings {path}: {err.strerror}") from None
    except EmbeddingError as err:
        raise CliError(f"embeddings {path}: {err}") from None
    return store


def _load_backend(spec: str) -> MlmBackend:
    kind, sep, path = spec.partition(":")
    if not sep or kind not in ("table", "corpus", "onnx"):
        # malformed flag value: usage, not data
        print(
            f"maskrepair: error: bad backend spec {spec!r} "
            "(expected table:<path>, corpus:<path>, or onnx:<path>)",
            file=sys.stderr,
        )
        raise SystemExit(USAGE_ERROR)
    try:
        if kind == "table":
            return TableMlm.from_json(path)
        if kind == "corpus":
            return CorpusMlm.train(path)
        from .onnx_backend import ManifestError, OnnxMlm

        try:
            return OnnxMlm(path)
        except ManifestError as err:
            raise CliError(str(err)) from None
    except OSError as err:
        raise CliError(f"cannot read backend file {path}: {err.strerror}") from None
    except (ValueError, KeyError) as err:
        raise CliError(f"backend {path}: {err}") from None


def _compute_stats(store: EmbeddingStore, args: argparse.Namespace) -> SimilarityStats:
    mode = args.stats_mode
    if mode == "auto":
        mode = "exact" if len(store) <= DEFAULT_EXACT_CAP else "sampled"
    stats = similarity_stats(store, mode=mode, pair_count=args.stats_pairs, seed=args.stats_seed)
    if stats.method == "sampled":
        print(
            f"# stats: sampled pairs={stats.pair_count} seed={stats.seed}", file=sys.stderr
        )
    return stats


def _defense_config(args: argparse.Namespace) -> DefenseConfig:
    config = DefenseConfig(
        alpha=args.alpha,
        n=args.n,
        max_positions=args.max_positions,
        top_k=args.top_k,
        min_word_len=args.min_word_len,
    )
    try:
        config.validate()
    except ValueError as err:
        print(f"maskrepair: error: {err}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)
    return config


def _trace_line(line_number: int, outcome: DefenseOutcome) -> str:
    payload = {
        "line": line_number,
        "positions_examined": outcome.positions_examined,
        "replacements": [
            {
                "position": r.position,
                "original": r.original,
                "replacement": r.replacement,
                "importance_rank": r.importance_rank,
                "candidate_rank": r.candidate_rank,
                "similarity": round(r.similarity, 9),
                "loss": round(r.loss, 9),
            }
            for r in outcome.replacements
        ],
    }
    return json.dumps(payload, sort_keys=True)


def _cmd_defend(args: argparse.Namespace) -> int:
    # flag validation happens before any model or embedding load
    config = _defense_config(args)
    store = _load_store(args.embeddings, args.format)
    backend = _load_backend(args.backend)
    stats = _compute_stats(store, args)
    trace_out = _open_output(args.trace) if args.trace else None
    with _open_input(args.input) as src, _open_output(args.output) as dst:
        for line_number, raw in enumerate(src, start=1):
            line = raw.rstrip("\n")
            outcome = defend(tokenize(line), backend, store, stats, config)
            dst.write(detokenize(outcome) + "\n")
            if trace_out is not None:
                trace_out.write(_trace_line(line_number, outcome) + "\n")
    if trace_out is not None:
        trace_out.close()
    return 0


def _cmd_rank(args: argparse.Namespace) -> int:
    if args.top_k < 1:
        print("maskrepair: error: --top-k must be >= 1", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)
    backend = _load_backend(args.backend)
    with _open_input(args.input) as src, _open_output(args.output) as dst:
        for line_number, raw in enumerate(src, start=1):
            line = raw.rstrip("\n")
            sentence = tokenize(line)
            dst.write(f"# line {line_number}\n")
            for position, loss in rank_importance(sentence, backend, top_k=args.top_k):
                dst.write(f"{position}\t{sentence.words[position]}\t{loss:.6f}\n")
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    if args.mode == "sampled" and args.pairs < 1000:
        print("maskrepair: error: --pairs must be >= 1000 in sampled mode", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)
    store = _load_store(args.embeddings, args.format)
    try:
        stats = similarity_stats(store, mode=args.mode, pair_count=args.pairs, seed=args.seed)
    except (EmbeddingError, ValueError) as err:
        raise CliError(str(err)) from None
    alphas = args.alpha if args.alpha else [2.0]
    with _open_output(args.output) as dst:
        dst.write(f"words {len(store)}\n")
        dst.write(f"dim {store.dim}\n")
        dst.write(f"method {stats.method}\n")
        dst.write(f"pair_count {stats.pair_count}\n")
        if stats.seed is not None:
            dst.write(f"seed {stats.seed}\n")
        dst.write(f"mu {stats.mu:.9f}\n")
        dst.write(f"sigma {stats.sigma:.9f}\n")
        for alpha in alphas:
            dst.write(f"threshold alpha={alpha:g} {threshold_value(stats, alpha):.9f}\n")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _defense_config(args)
    store = _load_store(args.embeddings, args.format)
    backend = _load_backend(args.backend)
    stats = _compute_stats(store, args)
    try:
        corpus = read_corpus(args.corpus)
        classifier = KeywordClassifier.from_json(args.classifier)
    except OSError as err:
        raise CliError(f"cannot read file: {err}") from None
    except (ValueError, KeyError) as err:
        raise CliError(str(err)) from None

    def run_defense(text: str) -> DefenseOutcome:
        return defend(tokenize(text), backend, store, stats, config)

    try:
        report = evaluate(corpus, run_defense, classifier, store)
    except ValueError as err:
        raise CliError(str(err)) from None
    with _open_output(args.output) as dst:
        dst.write(format_report(report, style=args.report) + "\n")
    log_path = args.log
    if log_path is None and args.output is not None:
        log_path = args.output + ".records.jsonl"
    if log_path:
        with _open_output(log_path) as log:
            for record in report.records:
                log.write(record.to_json() + "\n")
    return 0


def _cmd_attack_sim(args: argparse.Namespace) -> int:
    if args.budget < 1:
        print("maskrepair: error: --budget must be >= 1", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)
    store = _load_store(args.embeddings, args.format)
    try:
        corpus = read_corpus(args.corpus)
        classifier = KeywordClassifier.from_json(args.classifier)
    except OSError as err:
        raise CliError(f"cannot read file: {err}") from None
    except (ValueError, KeyError) as err:
        raise CliError(str(err)) from None
    # The greedy attack is deterministic; the seed is echoed for provenance.
    print(f"# attack-sim: budget={args.budget} seed={args.seed}", file=sys.stderr)
    flipped = 0
    with _open_output(args.output) as dst:
        for record in corpus:
            if record.kind == "clean" and classifier.predict(record.original_text)[0] == record.gold_label:
                adversarial = synthetic_attack(record, classifier, store, args.budget)
                if adversarial is not None:
                    record = CorpusRecord(
                        id=record.id,
                        original_text=record.original_text,
                        gold_label=record.gold_label,
                        kind="attacked",
                        adversarial_text=adversarial,
                    )
                    flipped += 1
            dst.write(corpus_line(record) + "\n")
    print(f"# attack-sim: flipped {flipped} of {len(corpus)} records", file=sys.stderr)
    return 0


_COMMANDS = {
    "defend": _cmd_defend,
    "rank": _cmd_rank,
    "stats": _cmd_stats,
    "eval": _cmd_eval,
    "attack-sim": _cmd_attack_sim,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CliError as err:
        print(f"maskrepair: error: {err}", file=sys.stderr)
        return DATA_ERROR
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
