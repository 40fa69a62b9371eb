"""Column buckling from a thin central strip, rho_t = 0.01 against the standard approach."""

import argparse
from pathlib import Path

from _runner import run_and_save, threshold_label
from elremoval import problems
from elremoval.schedules import ThresholdSchedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/buckling"))
    ap.add_argument("--max-iter", type=int, default=None)
    args = ap.parse_args()
    final = {}
    for rho_t in (0.01, None):
        p = problems.column_buckling(rho_t=None if rho_t is None else ThresholdSchedule(rho_t))
        res, _ = run_and_save(p, args.out, threshold_label(rho_t), args.max_iter)
        final[rho_t] = (res.records[0].eig1, res.records[-1].eig1)
    for rho_t, (first, last) in final.items():
        print(f"{threshold_label(rho_t):>6}: lambda1 {first:.5g} -> {last:.5g}")


if __name__ == "__main__":
    main()
