"""Script entry point: plot <kind> --in result.csv --out figure.png"""
from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureRequest, OutputExists, SchemaError, render


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot", description="Render subspacelp result CSVs as figures."
    )
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument(
        "--in",
        dest="inputs",
        action="append",
        required=True,
        help="input CSV; repeat to overlay several results",
    )
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument(
        "--labels", default=None, help="comma-separated overlay labels"
    )
    parser.add_argument("--title", default=None)
    parser.add_argument("--dpi", type=int, default=150)
    parser.add_argument("--overwrite", action="store_true")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    labels = args.labels.split(",") if args.labels else []
    try:
        request = FigureRequest(
            kind=args.kind,
            inputs=args.inputs,
            output=args.out,
            labels=labels,
            overwrite=args.overwrite,
            title=args.title,
            dpi=args.dpi,
        )
        out = render(request)
    except (SchemaError, OutputExists) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
