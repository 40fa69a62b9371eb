"""Geometrically nonlinear cantilever at one or more loads, rho_t = 0.1 against n.a."""

import argparse
from pathlib import Path

from _runner import run_and_save, threshold_label
from elremoval import problems
from elremoval.schedules import ThresholdSchedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/nonlinear"))
    ap.add_argument("--loads", type=float, nargs="*", default=[240e3])
    ap.add_argument("--max-iter", type=int, default=None)
    args = ap.parse_args()
    for load in args.loads:
        for rho_t in (0.1, None):
            p = problems.nonlinear_cantilever(load=load, rho_t=None if rho_t is None else ThresholdSchedule(rho_t))
            run_and_save(p, args.out, f"{threshold_label(rho_t)}_{load:g}", args.max_iter, every=1)


if __name__ == "__main__":
    main()
