"""Acceptance criteria at desk scale. Heavy runs are shared through module fixtures;
the terminal summary prints one PASS/FAIL line per criterion."""

import time

import numpy as np
import pytest

from elremoval import problems
from elremoval.checkgrad import run_standard_audits
from elremoval.eigen_dynamics import vibration_objective
from elremoval.field_ops import DesignState, Scheme, heaviside_project, interpolate
from elremoval.io import read_iteration_log, write_iteration_log
from elremoval.lin_statics import linear_solve
from elremoval.optimizer import run_loop
from elremoval.removal import build_active_model, detect_and_zero
from elremoval.schedules import ThresholdSchedule
from elremoval.study import STUDY_DIMS, STUDY_RMIN, all_schemes, growth_reach

from oracles import dense_stiffness, full_system_displacements
from test_eigen_dynamics import test_detached_low_density_island_is_flagged as _island_check

FINISHED = ("converged", "max_iter")


def timed_run(problem, **kw):
    t0 = time.perf_counter()
    result = run_loop(problem, **kw)
    return result, time.perf_counter() - t0


# -- shared runs -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cantilever_pairs():
    out = {}
    for key in ("na", 0.001, 0.01, 0.1):
        rho_t = None if key == "na" else ThresholdSchedule(key)
        out[key] = timed_run(problems.cantilever2d(rho_t=rho_t))
    return out


@pytest.fixture(scope="module")
def vibration_ramp():
    sched = problems.vibration_threshold_ramp()
    return sched, *timed_run(problems.clamped_vibration(rho_t=sched))


@pytest.fixture(scope="module")
def buckling_pair():
    return {key: timed_run(problems.column_buckling(rho_t=None if key == "na" else ThresholdSchedule(key)))
            for key in (0.01, "na")}


# -- criteria ------------------------------------------------------------------------------

@pytest.mark.criterion(1, "projection identity at beta = 0")
def test_c1_projection_identity():
    mu = np.random.default_rng(1).uniform(0.0, 1.0, 10_000)
    t0 = time.perf_counter()
    rho, _ = heaviside_project(mu, 0.0)
    assert time.perf_counter() - t0 < 1.0
    assert np.max(np.abs(rho - mu)) <= 1e-14


@pytest.mark.criterion(2, "gradient audits")
def test_c2_gradient_audits():
    t0 = time.perf_counter()
    audits = run_standard_audits()
    wall = time.perf_counter() - t0
    for a in audits:
        print(a.line())
    assert [a.name for a in audits] == ["compliance", "inverter", "nonlinear", "vibration", "buckling"]
    assert [a.tol for a in audits] == [1e-5, 1e-5, 1e-4, 1e-4, 1e-3]
    assert all(a.passed for a in audits)
    assert wall < 300


def _nonsingular(p, rz, act):
    """Dense check that the reduced system has no mechanism (corner hinges make it singular)."""
    E, _ = interpolate(p.stiffness_law(3.0), rz)
    _, free = full_system_displacements(p, rz, ~act)
    w = np.linalg.eigvalsh(dense_stiffness(p.mesh, p.Ke0, np.where(act, E, 0.0))[np.ix_(free, free)])
    return w[0] > 1e-10 * w[-1]


@pytest.mark.criterion(3, "reduced system equals full system")
def test_c3_removal_oracle():
    t0 = time.perf_counter()
    p = problems.cantilever2d(dims=(16, 8), rho_t=ThresholdSchedule(0.2))
    assert p.Emin == 0.0
    rng = np.random.default_rng(100)
    checked = 0
    while checked < 20:
        rho = rng.uniform(0.0, 1.0, p.mesh.n_elements)
        rho[p.mesh.centroids()[:, 0] > 15 * p.mesh.h] = 1.0  # the loaded column stays attached
        rz, act = detect_and_zero(rho, 0.2)
        if not _nonsingular(p, rz, act):
            continue
        model = build_active_model(p.mesh, act, p.fixed_dofs)
        sol = linear_solve(p, DesignState(rz, rz, rz, np.ones_like(rz), 0.0, 3.0), model)
        u_ref, free = full_system_displacements(p, rz, ~act)
        np.testing.assert_array_equal(np.sort(free), model.free)
        err = np.linalg.norm(sol.u[model.free] - u_ref[model.free]) / np.linalg.norm(u_ref[model.free])
        assert err < 1e-10, checked
        checked += 1
    assert time.perf_counter() - t0 < 30


@pytest.mark.criterion(4, "paired-run equivalence, 2D cantilever")
def test_c4_paired_runs(cantilever_pairs):
    ref, _ = cantilever_pairs["na"]
    assert ref.status in FINISHED
    g_ref = ref.records[-1].g0
    for key in (0.001, 0.01, 0.1):
        res, _ = cantilever_pairs[key]
        assert res.status in FINISHED, key
        rel = abs(res.records[-1].g0 - g_ref) / abs(g_ref)
        print(f"rho_t = {key}: g0* = {res.records[-1].g0:.8g}, relative difference {rel:.2e}")
        assert rel < 0.01, key
    assert sum(wall for _, wall in cantilever_pairs.values()) < 900


@pytest.mark.criterion(5, "active-set reduction")
def test_c5_active_set(cantilever_pairs, tmp_path):
    res, _ = cantilever_pairs[0.01]
    write_iteration_log(res.records, tmp_path / "log.csv")
    log = read_iteration_log(tmp_path / "log.csv")
    total_free = cantilever_pairs["na"][0].records[0].n_active
    ratio = log["n_active"][-1] / total_free
    print(f"final n_active / free DOFs = {ratio:.3f}")
    assert ratio < problems.cantilever2d().V_max + 0.15
    n, re = log["n_active"][-50:], log["reintroduced"][-50:]
    grows = np.flatnonzero(np.diff(n) > 0) + 1
    assert np.all(re[grows] > 0)


@pytest.mark.criterion(6, "reintroduction in the force inverter")
@pytest.mark.xfail(strict=True, reason="with rho_t = 0.1 every element around the output port falls below the "
                   "threshold at iteration 7, so the run stops with a disconnection before any reintroduction")
def test_c6_inverter_reintroduction():
    res, wall = timed_run(problems.inverter(rho_t=ThresholdSchedule(0.1)))
    assert wall < 900
    assert any(r.reintroduced > 0 for r in res.records)
    assert res.status in FINISHED, res.error
    assert res.records[-1].g0 < 0


@pytest.mark.criterion(7, "propagation reach of the growth map")
def test_c7_propagation_reach():
    t0 = time.perf_counter()
    reports = all_schemes()
    assert time.perf_counter() - t0 < 10
    assert all(r.dims == STUDY_DIMS for r in reports.values())
    reach = {s: growth_reach(r) for s, r in reports.items()}
    print({s.value: round(v, 3) for s, v in reach.items()})
    assert abs(reach[Scheme.SENSITIVITY] - STUDY_RMIN) <= 1.0
    for s in (Scheme.DENSITY, Scheme.HEAVISIDE, Scheme.THRESHOLD):
        assert abs(reach[s] - 2 * STUDY_RMIN) <= 1.0, s


@pytest.mark.slow
@pytest.mark.criterion(8, "KS lower bound on every eigenvalue iteration")
def test_c8_ks_lower_bound(vibration_ramp, buckling_pair):
    _, res, _ = vibration_ramp
    records = [r for r in res.records if not r.failed]
    records += [r for run, _ in buckling_pair.values() for r in run.records if not r.failed]
    assert len(records) > 300
    for r in records:
        assert r.ks_bound <= r.eig1 + 1e-12, r.k


@pytest.mark.criterion(9, "artificial-mode detector")
def test_c9_detector_on_constructed_designs():
    _island_check()
    p = problems.clamped_vibration(dims=(18, 6))
    ones = np.ones(p.mesh.n_elements)
    model = build_active_model(p.mesh, ones.astype(bool), p.fixed_dofs, p.pinned_nodes)
    res = vibration_objective(p, DesignState(ones, ones, ones, ones, 0.0, 3.0), model)
    np.testing.assert_array_equal(res.phi_rat, 0.0)


@pytest.mark.slow
@pytest.mark.criterion(9, "artificial-mode detector")
def test_c9_no_flags_after_ramp(vibration_ramp):
    sched, res, _ = vibration_ramp
    after = [r for r in res.records if r.k >= sched.completed_at() and not r.failed]
    assert after
    assert sum(r.phi_rat_flags for r in after) == 0


@pytest.mark.slow
@pytest.mark.criterion(9, "artificial-mode detector")
@pytest.mark.xfail(strict=True, reason="at iteration 358 two one-element-wide columns with rho near 0.11, just "
                   "above rho_t = 0.1, are detached from the supports; with E_min = 0 their rigid-body modes make "
                   "K singular and the run stops as disconnected")
def test_c9_ramp_run_completes(vibration_ramp):
    _, res, _ = vibration_ramp
    assert res.status in FINISHED, res.error


@pytest.mark.slow
@pytest.mark.criterion(10, "buckling reinforcement from a thin strip")
def test_c10_buckling(buckling_pair):
    run, _ = buckling_pair[0.01]
    ref, _ = buckling_pair["na"]
    assert run.status in FINISHED and ref.status in FINISHED
    lam = np.array([r.eig1 for r in run.records[:300]])
    print(f"lambda1: initial {lam[0]:.5g}, best {lam.max():.5g}, final {run.records[-1].eig1:.5g}, "
          f"n.a. final {ref.records[-1].eig1:.5g}")
    assert lam[0] < 1.0
    assert lam.max() > 2 * lam[0]
    assert abs(run.records[-1].eig1 - ref.records[-1].eig1) / ref.records[-1].eig1 < 0.05
    assert sum(wall for _, wall in buckling_pair.values()) < 45 * 60


@pytest.mark.slow
@pytest.mark.criterion(11, "nonlinear robustness at the highest load")
@pytest.mark.xfail(strict=True, reason="both runs fail at iteration 13 with element inversion: rho_t = 0.1 at "
                   "load factor 0.256 and n.a. at 0.375; the inverting elements sit in the thin solid layer at "
                   "the load-transfer kink, which removal does not touch")
def test_c11_nonlinear_robustness():
    removal, _ = timed_run(problems.nonlinear_cantilever(rho_t=ThresholdSchedule(0.1)))
    standard, _ = timed_run(problems.nonlinear_cantilever())
    assert standard.status in FINISHED or (standard.status == "failed" and "AnalysisFailure" in standard.error)
    assert removal.status in FINISHED, removal.error


@pytest.mark.criterion(12, "reduced-system dimension as a cost proxy")
def test_c12_cost_proxy(cantilever_pairs):
    ref, _ = cantilever_pairs["na"]
    dims = {r.reduced_dim for r in ref.records}
    assert len(dims) == 1
    run, _ = cantilever_pairs[0.1]
    mean = np.mean([r.reduced_dim for r in run.records[-100:]])
    print(f"mean reduced dimension {mean:.0f} of {dims.pop()}")
    assert mean < 0.7 * ref.records[0].reduced_dim
