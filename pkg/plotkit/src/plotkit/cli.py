"""Command line entry: plot <figure-family> --in <dir> --out <file.png>."""

from __future__ import annotations

import argparse
import sys

from .data import SchemaError
from .figures import FIGURE_FAMILIES, FigureSpec, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plotkit",
                                     description="figures from asyncfp benchmark output")
    sub = parser.add_subparsers(dest="command", required=True)
    plot_p = sub.add_parser("plot", help="render one figure family")
    plot_p.add_argument("family", choices=sorted(FIGURE_FAMILIES))
    plot_p.add_argument("--in", dest="input_dir", required=True,
                        help="experiment output directory (holds summary.csv / traces)")
    plot_p.add_argument("--out", dest="output_path", required=True)
    args = parser.parse_args(argv)

    try:
        report = render(FigureSpec(args.family, args.input_dir, args.output_path))
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {report.output_path} ({report.series} series)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
