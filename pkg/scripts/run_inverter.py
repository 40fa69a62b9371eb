"""Force inverter at 120x60 with and without element removal."""

import argparse
from pathlib import Path

from _runner import run_and_save, threshold_label
from elremoval import problems
from elremoval.schedules import ThresholdSchedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/inverter"))
    ap.add_argument("--rho-t", type=float, nargs="*", default=[0.01, 0.1])
    ap.add_argument("--max-iter", type=int, default=None)
    args = ap.parse_args()
    for rho_t in [None, *args.rho_t]:
        p = problems.inverter(rho_t=None if rho_t is None else ThresholdSchedule(rho_t))
        run_and_save(p, args.out, threshold_label(rho_t), args.max_iter)


if __name__ == "__main__":
    main()
