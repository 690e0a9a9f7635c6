"""Batch figure rendering from nestbox CSV outputs.

    nestbox-plot overlay    --in normalized_curves.csv [--in paths.csv] --out fig.png
    nestbox-plot qq         --in normalized_curves.csv [--in marginals.csv] --out fig.png
    nestbox-plot covheatmap --in pairs.csv --in covariance.csv --out fig.png
    nestbox-plot trend      --in consistency.csv --out fig.png

Inputs are the documented nestbox CSV schemas; roles are inferred from
file names (normalized_curves, paths, marginals, pairs, covariance,
consistency) or given explicitly as role=path.  Every figure gets a
``<image>.data.json`` sidecar equal to the plotted values.

Exit codes: 0 ok, 2 schema/validation error (message names the offending
column or grid), 1 other failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import FigureJob, FigureKind, render
from .schema import SchemaError, infer_role


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nestbox-plot", description=__doc__.split("\n")[0])
    parser.add_argument("kind", choices=[k.value for k in FigureKind])
    parser.add_argument(
        "--in", dest="inputs", action="append", required=True, metavar="[ROLE=]PATH",
        help="input CSV; role inferred from the file name unless given",
    )
    parser.add_argument("--out", required=True, help="output image path (png/svg/pdf)")
    parser.add_argument("--level", type=int, default=None)
    parser.add_argument("--s", type=float, default=None)
    parser.add_argument("--n", type=int, default=None)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    inputs: dict[str, Path] = {}
    try:
        for item in args.inputs:
            if "=" in item:
                role, _, path = item.partition("=")
            else:
                path = item
                role = infer_role(path)
                if role is None:
                    raise SchemaError(
                        f"cannot infer schema role from file name {Path(path).name!r}; "
                        "use role=path"
                    )
            inputs[role] = Path(path)
        job = FigureJob(
            kind=FigureKind(args.kind),
            inputs=inputs,
            out=Path(args.out),
            options={"level": args.level, "s": args.s, "n": args.n},
        )
        render(job)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} and {args.out}.data.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
