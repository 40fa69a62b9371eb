"""Shared helpers for the experiment runners: run a preset, write its log and fields."""

from __future__ import annotations

import json
import time
from pathlib import Path

from elremoval.io import export_image, write_density_field, write_iteration_log
from elremoval.optimizer import run_loop


def run_and_save(problem, out: Path, label: str, max_iter: int | None = None, every: int = 20):
    out.mkdir(parents=True, exist_ok=True)

    def progress(k, state, rec):
        if k % every == 0 or k == 1:
            print(f"[{label}] k={k} g0={rec.g0:.6g} V={rec.V:.4f} n_active={rec.n_active} "
                  f"reintroduced={rec.reintroduced} eig1={rec.eig1:.5g}", flush=True)

    t0 = time.perf_counter()
    res = run_loop(problem, max_iter=max_iter, callback=progress)
    wall = time.perf_counter() - t0
    if res.records:
        write_iteration_log(res.records, out / f"{label}.csv")
    dims = problem.mesh.dims
    write_density_field(out / f"{label}_rho.txt", res.state.rho, dims)
    if problem.mesh.ndim == 2:
        export_image(res.state.rho, dims, out / f"{label}_rho.pgm")
    last = next((r for r in reversed(res.records) if not r.failed), None)
    summary = {"label": label, "status": res.status, "error": res.error, "iterations": len(res.records),
               "final_g0": None if last is None else last.g0, "final_eig1": None if last is None else last.eig1,
               "final_n_active": None if last is None else last.n_active,
               "reintroduction_iterations": sum(r.reintroduced > 0 for r in res.records), "wall_seconds": wall}
    (out / f"{label}.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"[{label}] {res.status} after {len(res.records)} iterations in {wall:.1f} s"
          + (f" ({res.error})" if res.error else ""))
    return res, summary


def threshold_label(rho_t) -> str:
    return "na" if rho_t is None else f"rt{rho_t:g}"
