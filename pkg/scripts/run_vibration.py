"""Clamped beam with a central point mass, maximizing the fundamental frequency.
Runs the standard approach, a fixed threshold and the ramped threshold."""

import argparse
from pathlib import Path

from _runner import run_and_save
from elremoval import problems
from elremoval.schedules import ThresholdSchedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/vibration"))
    ap.add_argument("--which", nargs="*", default=["na", "fixed", "ramp"], choices=["na", "fixed", "ramp"])
    ap.add_argument("--max-iter", type=int, default=None)
    args = ap.parse_args()
    schedules = {"na": None, "fixed": ThresholdSchedule(0.01), "ramp": problems.vibration_threshold_ramp()}
    for name in args.which:
        run_and_save(problems.clamped_vibration(rho_t=schedules[name]), args.out, name, args.max_iter)


if __name__ == "__main__":
    main()
