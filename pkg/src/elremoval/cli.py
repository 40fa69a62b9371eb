"""Command line interface: ``python -m elremoval {run,study,checkgrad,report}``.

Exit codes: 0 success, 1 gradient audit above tolerance, 2 configuration
error, 3 analysis failure, 4 disconnection.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .io import export_image, export_vtk, read_iteration_log, write_density_field, write_iteration_log
from .optimizer import run_loop

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_ANALYSIS, EXIT_DISCONNECTED = 0, 1, 2, 3, 4

log = logging.getLogger("elremoval")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--preset", help="benchmark preset (overrides the config's preset)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key; repeatable (e.g. rho_t=0.01, eta.cap=4)")
    p.add_argument("--snapshot-every", type=int, default=None, metavar="K",
                   help="write the density field every K iterations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elremoval", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run one optimization"))
    _add_common(sub.add_parser("study", help="sensitivity propagation study (schemes A1-A4)"))
    p = sub.add_parser("checkgrad", help="finite-difference audit of the design sensitivities")
    _add_common(p)
    p.add_argument("--beta", type=float, default=4.0)
    p.add_argument("--eta", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("report", help="summarize an iteration log")
    p.add_argument("log", type=Path)
    return parser


def _config(args, default_preset: str | None = None) -> RunConfig:
    if args.config is None and args.preset is None and default_preset is None:
        raise ConfigError("give --config or --preset")
    preset = args.preset if args.preset is not None else (default_preset if args.config is None else None)
    return load_config(args.config, preset, args.override, args.out, args.snapshot_every)


def cmd_run(args) -> int:
    cfg = _config(args)
    problem = cfg.to_problem()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(cfg.echo())
    dims = problem.mesh.dims

    def snapshot(k, state, rec):
        if cfg.snapshot_every and k % cfg.snapshot_every == 0:
            write_density_field(out / f"rho_{k:05d}.txt", state.rho, dims)

    t0 = time.perf_counter()
    result = run_loop(problem, callback=snapshot)
    wall = time.perf_counter() - t0
    if result.records:
        write_iteration_log(result.records, out / "log.csv")
    write_density_field(out / "phi.txt", result.state.phi, dims)
    write_density_field(out / "rho.txt", result.state.rho, dims)
    if problem.mesh.ndim == 2:
        export_image(result.state.rho, dims, out / "rho.pgm")
    export_vtk(out / "rho.vtk", problem.mesh, cell_data={"rho": result.state.rho})
    last = result.records[-1] if result.records else None
    meta = {"version": __version__, "preset": cfg.preset, "status": result.status, "error": result.error,
            "iterations": len(result.records), "wall_seconds": wall,
            "final_g0": None if last is None or last.failed else last.g0}
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"{cfg.preset}: {result.status} after {len(result.records)} iterations"
          + (f", g0 = {meta['final_g0']:.6g}" if meta["final_g0"] is not None else "")
          + (f" ({result.error})" if result.error else ""))
    if result.status == "disconnected":
        return EXIT_DISCONNECTED
    if result.status == "failed":
        return EXIT_ANALYSIS
    return EXIT_OK


def cmd_study(args) -> int:
    from .field_ops import Scheme
    from .io import pgm_bytes
    from .study import (STUDY_BETA, STUDY_DIMS, STUDY_ETA, STUDY_RMIN, growth_reach, propagation_maps,
                        study_problem, void_sensitivity_ratio)

    cfg = _config(args, default_preset="study")
    if cfg.preset != "study":
        raise ConfigError("the study subcommand needs preset = 'study'")
    dims = cfg.dims or STUDY_DIMS
    r_min = cfg.r_min or STUDY_RMIN
    eta = cfg.eta.initial if cfg.eta else STUDY_ETA
    beta = cfg.beta.initial if cfg.beta else STUDY_BETA
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for scheme in Scheme:
        p = study_problem(eta, beta, scheme, dims, r_min)
        rep = propagation_maps(scheme, eta, beta, problem=p)
        for name in ("rho", "s_tilde", "s", "dc_drho", "dc_dphi", "growth"):
            write_density_field(out / f"{scheme.value}_{name}.txt", rep.column(name), dims)
        (out / f"{scheme.value}_rho.pgm").write_bytes(pgm_bytes(rep.rho, dims))
        (out / f"{scheme.value}_growth.pgm").write_bytes(pgm_bytes(rep.growth_clamped(), dims))
        summary[scheme.value] = {"reach": growth_reach(rep), "void_ratio": void_sensitivity_ratio(rep),
                                 "compliance": rep.compliance, "maxima": rep.maxima}
        print(f"{scheme.value}: growth reach {summary[scheme.value]['reach']:.2f} h "
              f"(r_min = {r_min:g} h), void |dc/drho| ratio {summary[scheme.value]['void_ratio']:.2e}")
    (out / "study.json").write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_checkgrad(args) -> int:
    from .checkgrad import fd_audit, run_standard_audits
    from .schedules import ContinuationSchedule

    if args.config is None and args.preset is None:
        audits = run_standard_audits(seed=args.seed)
    else:
        cfg = _config(args)
        p = cfg.to_problem().replace(beta=ContinuationSchedule(args.beta), eta=ContinuationSchedule(args.eta))
        phi = np.random.default_rng(args.seed).uniform(0.2, 0.8, p.mesh.n_elements)
        audits = [fd_audit(p, phi, args.beta, args.eta, tol=1e-4)]
    for a in audits:
        print(a.line())
    return EXIT_OK if all(a.passed for a in audits) else EXIT_AUDIT


def cmd_report(args) -> int:
    if not args.log.exists():
        print(f"no such log: {args.log}", file=sys.stderr)
        return EXIT_CONFIG
    cols = read_iteration_log(args.log)
    k = cols["k"]
    if k.size == 0:
        print("empty log")
        return EXIT_OK
    g0 = cols["g0"]
    lines = [f"iterations      {int(k[-1])}",
             f"g0 first/last   {g0[0]:.6g} / {g0[-1]:.6g}",
             f"volume (last)   {cols['V'][-1]:.4f}",
             f"n_active        {int(cols['n_active'].max())} -> {int(cols['n_active'][-1])} "
             f"(min {int(cols['n_active'].min())})",
             f"reintroduction  {int(np.count_nonzero(cols['reintroduced'] > 0))} iterations, "
             f"{int(cols['reintroduced'].sum())} elements",
             f"wall time       {cols['seconds'].sum():.1f} s"]
    if np.any(np.isfinite(cols["eig1"])):
        lines.append(f"eig1 last       {cols['eig1'][-1]:.6g} (KS bound {cols['ks_bound'][-1]:.6g})")
        lines.append(f"phi_rat flags   {int(np.count_nonzero(cols['phi_rat_flags'] > 0))} iterations")
    print("\n".join(lines))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "study": cmd_study, "checkgrad": cmd_checkgrad, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
