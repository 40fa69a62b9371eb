"""2D cantilever at 160x40 for rho_t in {n.a., 0.001, 0.01, 0.1}; prints the relative
objective differences and the mean reduced-system dimension of the late iterations."""

import argparse
from pathlib import Path

import numpy as np

from _runner import run_and_save, threshold_label
from elremoval import problems
from elremoval.schedules import ThresholdSchedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/cantilever"))
    ap.add_argument("--max-iter", type=int, default=None)
    args = ap.parse_args()
    results = {}
    for rho_t in (None, 0.001, 0.01, 0.1):
        p = problems.cantilever2d(rho_t=None if rho_t is None else ThresholdSchedule(rho_t))
        results[rho_t], _ = run_and_save(p, args.out, threshold_label(rho_t), args.max_iter)
    ref = results[None].records
    print(f"{'rho_t':>6} {'g0*':>14} {'rel diff':>10} {'mean dim (last 100)':>20}")
    for rho_t, res in results.items():
        g = res.records[-1].g0
        dim = np.mean([r.reduced_dim for r in res.records[-100:]])
        print(f"{threshold_label(rho_t):>6} {g:14.8g} {abs(g - ref[-1].g0) / abs(ref[-1].g0):10.2e} "
              f"{dim:20.0f}")


if __name__ == "__main__":
    main()
