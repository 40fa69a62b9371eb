"""Central finite-difference audits of the design sensitivities dg0/dphi."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import problems
from .field_ops import backprop_design, design_state
from .optimizer import evaluate
from .problems import NewtonSettings, ProblemSpec
from .removal import build_active_model
from .schedules import ContinuationSchedule


@dataclass(frozen=True)
class GradientAudit:
    name: str
    dims: tuple[int, ...]
    rel_error: float
    tol: float
    n_vars: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_error < self.tol)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return (f"{mark} {self.name:<10} dims={'x'.join(map(str, self.dims)):<6} rel_err={self.rel_error:.3e} "
                f"tol={self.tol:.0e} n={self.n_vars} t={self.seconds:.1f}s")


def objective_and_gradient(problem: ProblemSpec, phi: np.ndarray, beta: float, eta: float):
    """g0 and dg0/dphi on the full (no removal) model."""
    state = design_state(problem.filter, phi, beta, eta, problem.scheme, problem.threshold)
    model = build_active_model(problem.mesh, np.ones(problem.mesh.n_elements, bool), problem.fixed_dofs,
                               problem.pinned_nodes)
    ev = evaluate(problem, state, model, {})
    return ev.g0, backprop_design(problem.filter, state, ev.dg0, filter_sensitivity=True)


def fd_audit(problem: ProblemSpec, phi: np.ndarray, beta: float, eta: float, step: float = 1e-6,
             indices: np.ndarray | None = None, tol: float = 1e-5, name: str | None = None) -> GradientAudit:
    """max |analytic - FD| / max |FD| over ``indices`` (default: every design variable)."""
    t0 = time.perf_counter()
    _, grad = objective_and_gradient(problem, phi, beta, eta)
    idx = np.arange(phi.size) if indices is None else np.asarray(indices)
    fd = np.empty(idx.size)
    for n, i in enumerate(idx):
        xp, xm = phi.copy(), phi.copy()
        xp[i] += step
        xm[i] -= step
        fd[n] = (objective_and_gradient(problem, xp, beta, eta)[0]
                 - objective_and_gradient(problem, xm, beta, eta)[0]) / (2 * step)
    err = float(np.max(np.abs(grad[idx] - fd)) / np.max(np.abs(fd)))
    return GradientAudit(name or problem.name, tuple(problem.mesh.dims), err, tol, int(idx.size),
                         time.perf_counter() - t0)


def _with_schedules(p: ProblemSpec, beta: float, eta: float) -> ProblemSpec:
    return p.replace(beta=ContinuationSchedule(beta), eta=ContinuationSchedule(eta))


def standard_audits():
    """(name, problem factory, tolerance, beta, eta) for the five audited responses."""
    return [
        ("compliance", lambda: problems.cantilever2d(dims=(12, 6)), 1e-5, 4.0, 3.0),
        ("inverter", lambda: problems.inverter(dims=(12, 6)), 1e-5, 4.0, 3.0),
        ("nonlinear", lambda: problems.nonlinear_cantilever(
            dims=(8, 2), load=240e3, newton=NewtonSettings(tol=1e-11, max_iter=50, increments=5)), 1e-4, 4.0, 3.0),
        ("vibration", lambda: problems.clamped_vibration(dims=(8, 4)), 1e-4, 4.0, 3.0),
        ("buckling", lambda: problems.column_buckling(dims=(12, 12), strip=None), 1e-3, 4.0, 3.0),
    ]


def run_standard_audits(seed: int = 0, names=None) -> list[GradientAudit]:
    out = []
    for name, factory, tol, beta, eta in standard_audits():
        if names is not None and name not in names:
            continue
        p = _with_schedules(factory(), beta, eta)
        rng = np.random.default_rng(seed)
        phi = rng.uniform(0.2, 0.8, p.mesh.n_elements)
        out.append(fd_audit(p, phi, beta, eta, tol=tol, name=name))
    return out
