"""Batch export commands: ``model-export mlm`` and ``model-export embeddings``."""

from __future__ import annotations

import argparse
import sys

from .embeddings import ConversionError, convert_embeddings
from .export import ExportError, export_mlm


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="model-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    mlm = sub.add_parser("mlm", help="train the bundled masked LM and export graph files")
    mlm.add_argument("--corpus", required=True, help="training text, one sentence per line")
    mlm.add_argument("--output", required=True, help="output directory")
    mlm.add_argument("--seed", type=int, default=0)
    mlm.add_argument("--steps", type=int, default=400)
    mlm.add_argument("--seq-cap", type=int, default=32)
    mlm.add_argument("--with-encoder", action="store_true", help="also export a sentence encoder")

    emb = sub.add_parser("embeddings", help="convert text vectors to the binary cache")
    emb.add_argument("--text", required=True, help="text-format vector file")
    emb.add_argument("--output", required=True, help="cache file to write")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "mlm":
            manifest = export_mlm(
                args.corpus,
                args.output,
                seed=args.seed,
                steps=args.steps,
                seq_cap=args.seq_cap,
                with_encoder=args.with_encoder,
            )
            print(f"wrote {manifest}")
        else:
            count = convert_embeddings(args.text, args.output)
            print(f"wrote {count} words to {args.output}")
    except (ExportError, ConversionError, OSError) as err:
        print(f"model-export: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
