import dataclasses

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, strategies as st

from elremoval import problems
from elremoval.eigen_dynamics import (EigenSolverError, UndefinedRatioError, artificial_mode_ratio, assemble_mass,
                                      buckling_objective, element_geometric_stiffness, energy_ratio,
                                      generalized_eigensolve, ks_aggregate, stress_stiffness, vibration_objective)
from elremoval.field_ops import design_state, interpolate
from elremoval.grid_fem import assemble, build_mesh, element_mass
from elremoval.removal import build_active_model, detect_and_zero, expand_vector
from elremoval.schedules import ContinuationSchedule, ThresholdSchedule


def model_for(p, active=None, rho_t=None):
    active = np.ones(p.mesh.n_elements, bool) if active is None else active
    return build_active_model(p.mesh, active, p.fixed_dofs, p.pinned_nodes, rho_t)


def state_for(p, rho, eta=3.0):
    s = design_state(p.filter, np.ones(p.mesh.n_elements), 0.0, eta)
    return dataclasses.replace(s, rho=np.asarray(rho, dtype=float))


def vib_matrices(p, rho, model, eta=3.0):
    E, _ = interpolate(p.stiffness_law(eta), rho)
    return assemble(p.mesh, model, p.Ke0, scale=E), assemble_mass(p, model, rho)


# -- eigensolver --------------------------------------------------------------------

@pytest.mark.parametrize("dense_limit", [2000, 0])
def test_diagonal_pencil(dense_limit):
    A = sp.diags([1.0, 2.0, 3.0, 4.0, 5.0]).tocsc()
    sol = generalized_eigensolve(A, sp.identity(5, format="csc"), 3, dense_limit=dense_limit)
    np.testing.assert_allclose(sol.values, [1, 2, 3], rtol=1e-12)


def test_hand_computed_two_by_two_pencil():
    A = sp.csc_matrix([[2.0, 0.0], [0.0, 4.0]])
    B = sp.csc_matrix([[1.0, 0.0], [0.0, 2.0]])
    sol = generalized_eigensolve(A, B, 2)
    np.testing.assert_allclose(sol.values, [2.0, 2.0], rtol=1e-14)
    np.testing.assert_allclose(sol.modes.T @ B.toarray() @ sol.modes, np.eye(2), atol=1e-12)


def test_too_many_modes_rejected():
    with pytest.raises(ValueError):
        generalized_eigensolve(sp.identity(3, format="csc"), sp.identity(3, format="csc"), 4)


def test_indefinite_pencil_reports_solver_error():
    A = sp.identity(3, format="csc")
    B = sp.diags([1.0, -1.0, -2.0]).tocsc()
    with pytest.raises(EigenSolverError):
        generalized_eigensolve(A, B, 2)


@pytest.mark.parametrize("dense_limit", [2000, 0])
def test_small_beam_against_dense_oracle(dense_limit):
    p = problems.clamped_vibration(dims=(8, 2))
    rho = np.random.default_rng(5).uniform(0.3, 1.0, p.mesh.n_elements)
    model = model_for(p)
    K, M = vib_matrices(p, rho, model)
    sol = generalized_eigensolve(K, M, 4, dense_limit=dense_limit, norm="M")
    ref = sla.eigh(K.toarray(), M.toarray(), eigvals_only=True)[:4]
    np.testing.assert_allclose(sol.values, ref, rtol=1e-8)
    Md, Kd = M.toarray(), K.toarray()
    np.testing.assert_allclose(sol.modes.T @ Md @ sol.modes, np.eye(4), atol=1e-8)
    rq = np.einsum("ij,ij->j", sol.modes, Kd @ sol.modes) / np.einsum("ij,ij->j", sol.modes, Md @ sol.modes)
    np.testing.assert_allclose(rq, sol.values, rtol=1e-8)
    assert np.all(sol.residuals <= 1e-8)


def test_scaling_mass_scales_squared_frequencies():
    p = problems.clamped_vibration(dims=(6, 2))
    model = model_for(p)
    K, M = vib_matrices(p, np.full(p.mesh.n_elements, 0.7), model)
    a = generalized_eigensolve(K, M, 3).values
    b = generalized_eigensolve(K, 2.5 * M, 3).values
    np.testing.assert_allclose(b, a / 2.5, rtol=1e-10)


# -- KS aggregate -------------------------------------------------------------------

def test_ks_equal_values():
    lam, _ = ks_aggregate(np.full(4, 2.0), 16.0, 4)
    assert lam == pytest.approx(0.5 + 4 / 16, rel=1e-15)


def test_ks_single_value():
    lam, _ = ks_aggregate(np.array([3.0, 5.0]), 16.0, 1)
    assert lam == pytest.approx(1 / 3 + 1 / 16, rel=1e-15)


def test_ks_two_values_hand_value():
    lam, _ = ks_aggregate(np.array([2.0, 4.0]), 16.0, 2)
    assert lam == pytest.approx(0.5 + (1 + np.exp(-4.0)) / 16, rel=1e-15)


def test_ks_rejects_nonpositive_and_short_input():
    with pytest.raises(ValueError):
        ks_aggregate(np.array([0.0, 1.0]), 16.0, 2)
    with pytest.raises(ValueError):
        ks_aggregate(np.array([1.0]), 16.0, 2)


@given(st.lists(st.floats(0.05, 20.0), min_size=1, max_size=6), st.floats(1.0, 64.0))
def test_ks_lower_bound_weights_and_gradient(values, alpha):
    v = np.sort(np.array(values))
    q = v.size
    lam, dv = ks_aggregate(v, alpha, q)
    assert 1.0 / lam <= v[0] * (1 + 1e-12)
    # the weights on x = 1/v sum to one
    assert np.sum(dv * -(v**2)) == pytest.approx(1.0, rel=1e-12)
    h = 1e-7
    for i in range(q):
        vp, vm = v.copy(), v.copy()
        vp[i] += h * v[i]
        vm[i] -= h * v[i]
        fd = (ks_aggregate(vp, alpha, q)[0] - ks_aggregate(vm, alpha, q)[0]) / (2 * h * v[i])
        assert fd == pytest.approx(dv[i], rel=1e-5, abs=1e-8 * abs(lam) / v[i])


# -- artificial-mode ratio ------------------------------------------------------------

def test_ratio_hand_cases():
    assert energy_ratio(np.array([1.0, 1.0, 2.0]), np.array([0.05, 0.5, 0.9])) == pytest.approx(0.25)
    assert energy_ratio(np.array([1.0, 3.0]), np.array([0.1, 1.0])) == 0.0
    with pytest.raises(UndefinedRatioError):
        energy_ratio(np.zeros(3), np.ones(3))


def test_detached_low_density_island_is_flagged():
    """Solid block clamped on the left, removed column, soft block clamped on the right."""
    p = problems.clamped_vibration(dims=(7, 2))
    p = p.replace(bc=dataclasses.replace(p.bc, point_masses=()), pinned_nodes=())
    col = p.mesh.centroids()[:, 0] / p.mesh.h
    rho = np.where(col < 3, 1.0, 0.05)
    rho[(col > 3) & (col < 4)] = 0.001
    rz, active = detect_and_zero(rho, 0.01)
    model = model_for(p, active, 0.01)
    K, M = vib_matrices(p, rz, model)
    sol = generalized_eigensolve(K, M, 2)
    E, _ = interpolate(p.stiffness_law(3.0), rz)
    v = expand_vector(model, sol.modes[:, 0])
    assert artificial_mode_ratio(p.mesh, p.Ke0, E, rz, v) > 0.99


def test_dense_design_has_no_artificial_modes():
    p = problems.clamped_vibration(dims=(8, 4))
    res = vibration_objective(p, state_for(p, np.ones(p.mesh.n_elements)), model_for(p))
    np.testing.assert_array_equal(res.phi_rat, 0.0)
    assert 1.0 / res.Lambda <= res.values[0]


# -- mass ---------------------------------------------------------------------------

def test_single_element_mass_total():
    Me = element_mass("Q4", 0.5, density=2.0)
    ones_x = np.tile([1.0, 0.0], 4)
    assert ones_x @ Me @ ones_x == pytest.approx(2.0 * 0.25, rel=1e-14)


def test_void_design_keeps_only_the_point_mass():
    p = problems.clamped_vibration(dims=(6, 2))
    M = assemble_mass(p, model_for(p), np.zeros(p.mesh.n_elements)).toarray()
    nz = np.flatnonzero(np.abs(M).sum(1))
    assert nz.size == 2
    np.testing.assert_allclose(np.diag(M)[nz], p.bc.point_masses[0][1])


def test_structural_mass_is_linear_in_density(rng):
    p = problems.clamped_vibration(dims=(6, 2))
    p = p.replace(bc=dataclasses.replace(p.bc, point_masses=()))
    model = model_for(p)
    rho = rng.uniform(0, 0.5, p.mesh.n_elements)
    M1 = assemble_mass(p, model, rho)
    M2 = assemble_mass(p, model, 2 * rho)
    assert abs(M2 - 2 * M1).max() < 1e-14 * abs(M2).max()


# -- stress stiffness -------------------------------------------------------------------

def test_zero_displacement_gives_zero_stress_stiffness():
    p = problems.column_buckling(dims=(4, 4), strip=None)
    G = stress_stiffness(p, model_for(p), np.ones(p.mesh.n_elements), np.zeros(p.mesh.n_dofs))
    assert G.count_nonzero() == 0 or abs(G).max() == 0


def test_uniaxial_compression_single_element():
    """Uniform sigma_xx = -eps: G_ab = t sigma_xx xi_a xi_b (1/4 + eta_a eta_b / 12) per component."""
    nu, eps, h, t = 0.3, 1e-3, 0.5, 1.0
    mesh = build_mesh((1, 1), h=h)
    X = mesh.node_coords()
    u = np.zeros(mesh.n_dofs)
    u[0::2] = -eps * X[:, 0]
    u[1::2] = nu * eps * X[:, 1]
    Ge = element_geometric_stiffness(mesh, nu, u, np.array([0]), t)[0]
    xe = X[mesh.connectivity[0]]
    xi = np.sign(xe[:, 0] - h / 2)
    et = np.sign(xe[:, 1] - h / 2)
    g = -eps * t * np.outer(xi, xi) * (0.25 + np.outer(et, et) / 12)
    np.testing.assert_allclose(Ge, np.kron(g, np.eye(2)), atol=1e-15)


def test_stress_stiffness_linear_in_displacement(rng):
    p = problems.column_buckling(dims=(5, 4), strip=None)
    model = model_for(p)
    u = rng.normal(size=p.mesh.n_dofs)
    sig = rng.uniform(0.1, 1, p.mesh.n_elements)
    G1 = stress_stiffness(p, model, sig, u)
    G2 = stress_stiffness(p, model, sig, 2 * u)
    assert abs(G2 - 2 * G1).max() < 1e-13 * abs(G2).max()
    assert abs(G1 - G1.T).max() < 1e-14 * abs(G1).max()


def test_load_scaling_halves_buckling_factors():
    p = problems.column_buckling(dims=(12, 12), strip=None)
    q = p.replace(bc=dataclasses.replace(p.bc, loads=tuple((d, 2 * f) for d, f in p.bc.loads)))
    rho = np.random.default_rng(2).uniform(0.3, 1.0, p.mesh.n_elements)
    a = buckling_objective(p, state_for(p, rho), model_for(p))
    b = buckling_objective(q, state_for(q, rho), model_for(q))
    np.testing.assert_allclose(b.values, a.values / 2, rtol=1e-8)
    assert 1.0 / a.Lambda <= a.values[0]


# -- objectives with removal -------------------------------------------------------------

def test_removed_elements_have_zero_eigen_sensitivity(rng):
    p = problems.clamped_vibration(dims=(12, 6), rho_t=ThresholdSchedule(0.1))
    rho = rng.uniform(0.3, 1.0, p.mesh.n_elements)
    rho[[13, 14, 25]] = 0.02
    rz, active = detect_and_zero(rho, 0.1)
    res = vibration_objective(p, state_for(p, rz), model_for(p, active, 0.1))
    np.testing.assert_array_equal(res.dLambda[~active], 0.0)
    assert res.values[0] >= 1.0 / res.Lambda


def test_vibration_gradient_vs_finite_differences():
    from elremoval.checkgrad import fd_audit

    p = problems.clamped_vibration(dims=(8, 4)).replace(beta=ContinuationSchedule(4.0), eta=ContinuationSchedule(3.0))
    phi = np.random.default_rng(0).uniform(0.2, 0.8, p.mesh.n_elements)
    audit = fd_audit(p, phi, 4.0, 3.0, tol=1e-4)
    assert audit.passed, audit.line()
