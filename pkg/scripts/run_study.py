"""Sensitivity propagation study for schemes A1-A4 on the 40x20 mesh."""

import argparse
import sys
from pathlib import Path

from elremoval.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/study"))
    args = ap.parse_args()
    sys.exit(cli_main(["study", "--out", str(args.out)]))


if __name__ == "__main__":
    main()
