"""Command-line wrapper around the exporter."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import ExportError, ExportSpec, export
from .formats import FormatError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Run a trained model over a dataset CSV and write one "
        "embedding file per hooked layer",
    )
    parser.add_argument("--model", required=True,
                        help='"identity", a TorchScript file, or "module.path:factory"')
    parser.add_argument("--layer", action="append", required=True, dest="layers",
                        metavar="NAME", help="layer to hook (repeatable)")
    parser.add_argument("--dataset", type=Path, required=True, help="input dataset CSV")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--batch-size", type=int, default=256)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExportSpec(
            model=args.model,
            layers=args.layers,
            dataset=args.dataset,
            out_dir=args.out,
            batch_size=args.batch_size,
        )
        written = export(spec)
    except (ExportError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name, path in sorted(written.items()):
        print(f"{name} -> {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
