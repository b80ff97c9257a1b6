"""Command line: apsing-plot <kind> --in <paths> --out <img>."""

import argparse
import sys

from .figures import KINDS, FigureSpec, MissingFileError, SchemaMismatchError, render


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="apsing-plot",
        description="Render figures from apsing run artifacts",
    )
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        metavar="PATH", help="CSV/JSON artifacts to read")
    parser.add_argument("--out", required=True, help="image file to write")
    parser.add_argument("--dpi", type=int, default=130)
    args = parser.parse_args(argv)

    spec = FigureSpec(kind=args.kind, inputs=tuple(args.inputs),
                      output=args.out, style={"dpi": args.dpi})
    try:
        out = render(spec)
    except (MissingFileError, SchemaMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
