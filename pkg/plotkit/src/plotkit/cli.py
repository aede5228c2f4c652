"""Command line wrapper: plotkit plot --kind <k> --in <csv> --out <img>."""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, EmptySelection, FigureSpec, MissingColumn, render


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="plotkit")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("plot", help="render one figure from CSV results")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--in", dest="inputs", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--normalize", choices=("scaled-around-minimum", "baseline"), default=None
    )
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec(
            kind=args.kind,
            inputs=tuple(args.inputs),
            output=args.out,
            normalize=args.normalize,
        )
        render(spec)
    except (MissingColumn, EmptySelection, ValueError, OSError) as e:
        print(f"plotkit error: {e}", file=sys.stderr)
        return 1
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
