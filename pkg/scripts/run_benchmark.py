#!/usr/bin/env python3
"""Run the full robustness sweep and write CSV/Markdown tables.

Thin wrapper over the package CLI; equivalent to

    gradrobust --mode tables --forms conv,div,rot --robust both \
        --nu 1,0.1,0.01 --n 16 --csv out/records.csv --markdown out/tables.md

Pass --full to use the fine 32x32 mesh (slower, same trends).
"""

import argparse
import pathlib
import sys

from gradrobust.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--n", type=int, default=16, help="cells per direction")
    ap.add_argument("--full", action="store_true", help="use a 32x32 mesh")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 32 if args.full else args.n

    return cli_main(
        [
            "--mode", "tables",
            "--forms", "conv,div,rot",
            "--robust", "both",
            "--nu", "1,0.1,0.01",
            "--n", str(n),
            "--csv", str(out / "records.csv"),
            "--markdown", str(out / "tables.md"),
        ]
    )


if __name__ == "__main__":
    sys.exit(main())
