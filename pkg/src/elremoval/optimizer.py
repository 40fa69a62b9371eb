"""Design updates (OC, MMA), convergence test and the per-iteration driver.

Each iteration runs, in order: schedule update, projection of phi onto rho,
threshold detection and zeroing, fictitious nodal boundary conditions,
forward solve, sensitivities, design update.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .eigen_dynamics import EigenSolverError, buckling_objective, vibration_objective
from .field_ops import DesignState, backprop_design, design_state, inverse_projection, volume_fraction
from .grid_fem import SingularSystemError
from .lin_statics import compliance_objective, inverter_objective, linear_solve
from .mma import MMASettings, MMAState, mma_update
from .nonlin_statics import AnalysisFailure, ElementInversionError, end_compliance_objective
from .problems import ProblemKind, ProblemSpec
from .removal import ActiveModel, DisconnectionError, build_active_model, detect_and_zero, reintroduction_delta

log = logging.getLogger(__name__)


class DegenerateUpdateError(ValueError):
    pass


class NormalizationError(ValueError):
    pass


# -- OC ---------------------------------------------------------------------

def oc_update(phi: np.ndarray, dg: np.ndarray, dv: np.ndarray, V_max: float,
              volume: Callable[[np.ndarray], float], move: float = 0.2, damping: float = 0.5,
              tol: float = 1e-10) -> np.ndarray:
    """Optimality-criteria step with a bisection on the volume multiplier.

    ``volume`` maps a candidate phi to its volume fraction (through filter
    and projection), so the bound is met on the true V rather than a
    linearization.
    """
    phi = np.asarray(phi, dtype=float)
    dg = np.asarray(dg, dtype=float)
    dv = np.asarray(dv, dtype=float)
    if np.all(dg >= 0):
        raise DegenerateUpdateError("objective sensitivities are all non-negative")
    if np.any(dv <= 0):
        raise DegenerateUpdateError("volume sensitivities must be positive")
    B = np.maximum(-dg, 0.0) / dv
    B = B / B.max()
    lo_box = np.maximum(phi - move, 0.0)
    hi_box = np.minimum(phi + move, 1.0)

    def candidate(lmid):
        return np.clip(phi * (B / lmid) ** damping, lo_box, hi_box)

    lo, hi = 1e-10, 1e10
    if volume(candidate(lo)) <= V_max:
        return candidate(lo)
    best = candidate(hi)
    for _ in range(500):
        lmid = np.sqrt(lo * hi)
        cand = candidate(lmid)
        v = volume(cand)
        if abs(v - V_max) <= tol:
            return cand
        if v > V_max:
            lo = lmid
        else:
            hi, best = lmid, cand
        if hi / lo < 1 + 1e-15:
            break
    return best


# -- convergence --------------------------------------------------------------

def convergence_check(phi: np.ndarray, phi_prev: np.ndarray, g_history: list[float],
                      tau_phi_tol: float = 1e-4, tau_g0_tol: float = 1e-8) -> tuple[float, float, bool]:
    """tau_phi = ||phi - phi_prev|| / sqrt(m); tau_0 = (g_k - g_{k-1}) / g_1 (signed)."""
    if not g_history:
        raise ValueError("objective history is empty")
    phi = np.asarray(phi, dtype=float)
    tau_phi = float(np.linalg.norm(phi - np.asarray(phi_prev)) / np.sqrt(phi.size))
    if g_history[0] == 0:
        raise NormalizationError("first objective value is zero; tau_0 is undefined")
    if len(g_history) < 2:
        return tau_phi, float("nan"), False
    tau_0 = (g_history[-1] - g_history[-2]) / g_history[0]
    return tau_phi, float(tau_0), bool(tau_phi < tau_phi_tol and tau_0 < tau_g0_tol)


# -- records ----------------------------------------------------------------

@dataclass(frozen=True)
class IterationRecord:
    k: int
    g0: float
    constraints: tuple[float, ...]
    tau_phi: float
    tau_g0: float
    V: float
    n_active: int
    active_elements: int
    reduced_dim: int
    reintroduced: int
    removed: int
    eta: float
    beta: float
    rho_t: float | None
    seconds: float
    eig1: float = float("nan")
    ks_bound: float = float("nan")
    phi_rat: tuple[float, ...] = ()
    failed: bool = False

    @property
    def abs_tau_g0(self) -> float:
        return abs(self.tau_g0)

    @property
    def phi_rat_flags(self) -> int:
        return int(sum(r > 0.5 for r in self.phi_rat))

    @property
    def phi_rat_max(self) -> float:
        return max(self.phi_rat) if self.phi_rat else float("nan")


@dataclass(frozen=True, eq=False)
class Evaluation:
    g0: float
    dg0: np.ndarray  # w.r.t. rho
    constraints: tuple[tuple[float, np.ndarray], ...] = ()  # (value <= 0, gradient w.r.t. rho)
    extras: dict = field(default_factory=dict)


def full_solid_compliance(problem: ProblemSpec) -> float:
    m = problem.mesh.n_elements
    ones = np.ones(m)
    state = DesignState(ones, ones, ones, ones, 0.0, 1.0, problem.scheme)
    model = build_active_model(problem.mesh, np.ones(m, bool), problem.fixed_dofs, problem.pinned_nodes)
    return linear_solve(problem, state, model).compliance


def evaluate(problem: ProblemSpec, state: DesignState, model: ActiveModel, cache: dict | None = None) -> Evaluation:
    """Objective, extra constraints and rho-gradients for the problem kind."""
    kind = problem.kind
    if kind is ProblemKind.COMPLIANCE:
        g, dg, _ = compliance_objective(problem, state, model)
        return Evaluation(g, dg)
    if kind is ProblemKind.INVERTER:
        g, dg, _ = inverter_objective(problem, state, model)
        return Evaluation(g, dg)
    if kind is ProblemKind.NONLINEAR:
        u0 = None if cache is None else cache.get("u_equilibrium")
        g, dg, sol = end_compliance_objective(problem, state, model, u0=u0)
        if cache is not None:
            cache["u_equilibrium"] = sol.u
        return Evaluation(g, dg, extras={"newton_iterations": sol.newton_iterations})
    if kind is ProblemKind.VIBRATION:
        r = vibration_objective(problem, state, model)
        return Evaluation(r.Lambda, r.dLambda, extras=_eig_extras(r))
    if kind is ProblemKind.BUCKLING:
        cache = {} if cache is None else cache
        if "c_max" not in cache:
            cache["c_max"] = problem.c_max_factor * full_solid_compliance(problem)
        r = buckling_objective(problem, state, model)
        c_max = cache["c_max"]
        con = (r.compliance / c_max - 1.0, r.dcompliance / c_max)
        extras = _eig_extras(r)
        extras["compliance"] = r.compliance
        extras["c_max"] = c_max
        return Evaluation(r.Lambda, r.dLambda, (con,), extras)
    raise ValueError(f"unsupported problem kind {kind}")


def _eig_extras(r) -> dict:
    return {"eig1": float(r.values[0]), "ks_bound": 1.0 / r.Lambda, "phi_rat": tuple(map(float, r.phi_rat)),
            "eigenvalues": r.values, "repeated": r.repeated}


# -- driver -------------------------------------------------------------------

@dataclass(eq=False)
class RunResult:
    state: DesignState
    records: list[IterationRecord]
    status: str  # converged | max_iter | failed | disconnected
    error: str | None = None
    model: ActiveModel | None = None
    extras: dict = field(default_factory=dict)

    def __iter__(self):  # allows ``state, records = run_loop(...)``
        return iter((self.state, self.records))


def initial_design(problem: ProblemSpec) -> np.ndarray:
    if problem.initial_phi is not None:
        return problem.initial_phi.copy()
    if problem.initial_rule == "phi":
        return np.full(problem.mesh.n_elements, problem.V_max)
    beta = problem.beta.value(1)
    value = inverse_projection(problem.V_max, beta, problem.scheme, problem.threshold)
    return np.full(problem.mesh.n_elements, value)


def schedule_values(problem: ProblemSpec, k: int) -> tuple[float, float, float | None]:
    rho_t = None if problem.rho_t is None else problem.rho_t.value(k)
    return problem.eta.value(k), problem.beta.value(k), rho_t


def schedules_complete(problem: ProblemSpec, k: int) -> bool:
    scheds = [problem.eta, problem.beta] + ([problem.rho_t] if problem.rho_t is not None else [])
    return all(k >= s.completed_at() for s in scheds)


def run_loop(problem: ProblemSpec, max_iter: int | None = None,
             callback: Callable[[int, DesignState, IterationRecord], None] | None = None,
             mma_settings: MMASettings | None = None) -> RunResult:
    """Optimize ``problem``; stops on convergence, ``max_iter`` or analysis failure."""
    max_iter = problem.max_iter if max_iter is None else max_iter
    filt = problem.filter
    m = problem.mesh.n_elements
    phi = initial_design(problem)
    eta, beta, _ = schedule_values(problem, 1)
    state = design_state(filt, phi, beta, eta, problem.scheme, problem.threshold)
    records: list[IterationRecord] = []
    g_hist: list[float] = []
    prev_model: ActiveModel | None = None
    model = None
    mma_state = MMAState()
    if mma_settings is None:
        kw = {k: v for k, v in (("move", problem.move), ("asyinit", problem.asyinit)) if v is not None}
        mma_settings = MMASettings(**kw)
    oc_move = 0.2 if problem.move is None else problem.move
    cache: dict = {}
    g_scale = None
    status, error = "max_iter", None

    for k in range(1, max_iter + 1):
        t0 = time.perf_counter()
        eta, beta, rho_t = schedule_values(problem, k)
        state = design_state(filt, phi, beta, eta, problem.scheme, problem.threshold)
        V, dV = volume_fraction(state.rho)
        rho_z, active = detect_and_zero(state.rho, rho_t)
        model = build_active_model(problem.mesh, active, problem.fixed_dofs, problem.pinned_nodes, rho_t)
        back, gone = reintroduction_delta(prev_model, model) if prev_model is not None else (0, 0)
        analysis_state = dataclasses.replace(state, rho=rho_z)
        try:
            ev = evaluate(problem, analysis_state, model, cache)
        except DisconnectionError as exc:
            status, error = "disconnected", str(exc)
        except (AnalysisFailure, ElementInversionError, SingularSystemError, EigenSolverError) as exc:
            status, error = "failed", f"{type(exc).__name__}: {exc}"
        if error is not None:
            records.append(IterationRecord(k, float("nan"), (), float("nan"), float("nan"), V, model.n_active,
                                           model.n_active_elements, model.n_active, back, gone, eta, beta, rho_t,
                                           time.perf_counter() - t0, failed=True))
            log.error("iteration %d failed: %s", k, error)
            break

        dg = ev.dg0.copy()
        dg[~active] = 0.0
        dg_dphi = backprop_design(filt, state, dg, filter_sensitivity=True)
        dv_dphi = backprop_design(filt, state, dV, filter_sensitivity=False)
        g_hist.append(ev.g0)
        vol_con = V / problem.V_max - 1.0

        phi_prev = phi
        if problem.optimizer == "oc":
            def vol(x):
                return volume_fraction(design_state(filt, x, beta, eta, problem.scheme, problem.threshold).rho)[0]
            phi = oc_update(phi, dg_dphi, dv_dphi, problem.V_max, vol, move=oc_move)
        else:
            if g_scale is None:
                g_scale = 1.0 / max(abs(ev.g0), 1e-300)
            fvals = [vol_con] + [c for c, _ in ev.constraints]
            grads = [dv_dphi / problem.V_max]
            for _, cg in ev.constraints:
                cg = cg.copy()
                cg[~active] = 0.0
                grads.append(backprop_design(filt, state, cg, filter_sensitivity=False))
            phi, mma_state, _ = mma_update(phi, dg_dphi * g_scale, np.array(fvals), np.vstack(grads),
                                           mma_state, mma_settings)
            phi = np.clip(phi, 0.0, 1.0)

        tau_phi, tau_0, conv = convergence_check(phi, phi_prev, g_hist, problem.tau_phi_tol, problem.tau_g0_tol)
        ex = ev.extras
        rec = IterationRecord(
            k=k, g0=ev.g0, constraints=tuple([vol_con] + [c for c, _ in ev.constraints]),
            tau_phi=tau_phi, tau_g0=tau_0, V=V, n_active=model.n_active,
            active_elements=model.n_active_elements, reduced_dim=model.n_active,
            reintroduced=back, removed=gone, eta=eta, beta=beta, rho_t=rho_t,
            seconds=time.perf_counter() - t0, eig1=ex.get("eig1", float("nan")),
            ks_bound=ex.get("ks_bound", float("nan")), phi_rat=ex.get("phi_rat", ()))
        records.append(rec)
        if callback is not None:
            callback(k, state, rec)
        prev_model = model
        if conv and schedules_complete(problem, k):
            status = "converged"
            break

    if status in ("max_iter", "converged") and records:
        eta, beta, _ = schedule_values(problem, records[-1].k)
        state = design_state(filt, phi, beta, eta, problem.scheme, problem.threshold)
    return RunResult(state, records, status, error, model, cache)
