"""Vibration and linearized buckling eigenproblems, KS aggregation and sensitivities.

Both problems are solved as ``B v = mu K v`` with K positive definite: B = M
for vibration (omega^2 = 1/mu) and B = -G for buckling (lambda = 1/mu).
Modes are normalized to ``v^T B v = 1``, which is ``v^T M v = 1`` and
``v^T G v = -1`` respectively.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .field_ops import DesignState, interpolate
from .grid_fem import Factorization, StructuredMesh, assemble, elasticity_matrix, gauss_data, strain_matrices
from .lin_statics import element_energies, linear_solve
from .problems import ProblemSpec
from .removal import ActiveModel, DisconnectionError, check_connected, expand_vector

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000


class EigenSolverError(RuntimeError):
    pass


class UndefinedRatioError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EigenSolution:
    """Eigenvalues (ascending) and reduced modes (columns).

    ``norm`` is ``"M"`` (v^T M v = 1) or ``"-G"`` (v^T G v = -1).
    """

    values: np.ndarray
    modes: np.ndarray
    norm: str
    residuals: np.ndarray


# -- matrices ---------------------------------------------------------------

def assemble_mass(problem: ProblemSpec, model: ActiveModel, rho: np.ndarray) -> sp.csc_matrix:
    """Structural mass (linear in rho) plus the point masses on every component."""
    M = assemble(problem.mesh, model, problem.Me0, scale=np.asarray(rho, dtype=float))
    diag = np.zeros(model.n_active)
    mesh = problem.mesh
    for node, mass in problem.bc.point_masses:
        for c in range(mesh.dofs_per_node):
            dof = mesh.dof(node, c)
            if model.eliminated[dof]:
                raise DisconnectionError(f"point mass node {node} was eliminated")
            r = model.full_to_reduced[dof]
            if r >= 0:
                diag[r] += mass
    return sp.csc_matrix(M + sp.diags(diag))


def unit_stress(mesh: StructuredMesh, nu: float, u: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Unit-modulus Voigt stresses D B u_e at each Gauss point, shape (ne, ngp, nvoigt)."""
    B = strain_matrices(mesh.ndim, mesh.h)
    D = elasticity_matrix(mesh.ndim, nu)
    ue = u[mesh.edofs[elements]]
    return np.einsum("ij,gjk,ek->egi", D, B, ue)


def _voigt_to_tensor(sig: np.ndarray, ndim: int) -> np.ndarray:
    if ndim == 2:
        xx, yy, xy = np.moveaxis(sig, -1, 0)
        return np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], -2)
    xx, yy, zz, yz, xz, xy = np.moveaxis(sig, -1, 0)
    return np.stack([np.stack([xx, xy, xz], -1), np.stack([xy, yy, yz], -1), np.stack([xz, yz, zz], -1)], -2)


def element_geometric_stiffness(mesh: StructuredMesh, nu: float, u: np.ndarray, elements: np.ndarray,
                                thickness: float = 1.0) -> np.ndarray:
    """Unit-modulus stress stiffness matrices of ``elements`` (ne, nen*d, nen*d)."""
    d = mesh.ndim
    _, dN, w = gauss_data(d, mesh.h)
    wt = w * (thickness if d == 2 else 1.0)
    sig = _voigt_to_tensor(unit_stress(mesh, nu, u, elements), d)
    g = np.einsum("g,gaI,egIJ,gbJ->eab", wt, dN, sig, dN)
    nen = dN.shape[1]
    return np.einsum("eab,ik->eaibk", g, np.eye(d)).reshape(len(elements), nen * d, nen * d)


def stress_stiffness(problem: ProblemSpec, model: ActiveModel, sigma: np.ndarray, u: np.ndarray) -> sp.csc_matrix:
    """G(u) with element stress scale sigma(rho_e) (already including E0)."""
    act = np.flatnonzero(model.active)
    Ge = element_geometric_stiffness(problem.mesh, problem.material.nu, u, act, problem.thickness)
    return assemble(problem.mesh, model, Ge, scale=sigma)


# -- eigensolver ------------------------------------------------------------

def generalized_eigensolve(A: sp.spmatrix, B: sp.spmatrix, k: int, factor: Factorization | None = None,
                           dense_limit: int = DENSE_LIMIT, norm: str = "B") -> EigenSolution:
    """Smallest k positive eigenvalues theta of A v = theta B v with A positive definite.

    Solved as B v = mu A v for the largest mu (theta = 1/mu), densely below
    ``dense_limit`` unknowns and with ARPACK in the A-inner product otherwise.
    Modes are scaled to v^T B v = 1.
    """
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"requested {k} eigenpairs from a space of dimension {n}")
    if n < dense_limit:
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
        Bd = B.toarray() if sp.issparse(B) else np.asarray(B)
        try:
            mu, V = sla.eigh(Bd, Ad, subset_by_index=(n - k, n - 1))
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EigenSolverError(f"dense eigensolve failed: {exc}") from exc
    else:
        factor = factor or Factorization(A)
        Minv = spla.LinearOperator((n, n), matvec=factor.solve, dtype=float)
        try:
            mu, V = spla.eigsh(sp.csc_matrix(B), k=k, M=sp.csc_matrix(A), Minv=Minv, which="LA",
                               tol=1e-12, ncv=min(n, max(2 * k + 1, 20)))
        except spla.ArpackError as exc:
            raise EigenSolverError(f"ARPACK failed: {exc}") from exc
    order = np.argsort(mu)[::-1]
    mu, V = mu[order], V[:, order]
    if np.any(mu <= 0):
        raise EigenSolverError("fewer positive eigenvalues than requested")
    theta = 1.0 / mu
    BV = B @ V
    scale = np.sqrt(np.einsum("ij,ij->j", V, BV))
    V = V / scale
    BV = BV / scale
    AV = A @ V
    res = np.linalg.norm(AV - BV * theta, axis=0) / np.linalg.norm(AV, axis=0)
    if np.any(res > 1e-6):
        raise EigenSolverError(f"eigenpair residual {res.max():.2e} too large")
    if np.any(res > 1e-8):
        log.warning("eigenpair residual %.2e above 1e-8", res.max())
    return EigenSolution(theta, V, norm, res)


# -- KS aggregate -----------------------------------------------------------

def ks_aggregate(values: np.ndarray, alpha: float, q: int) -> tuple[float, np.ndarray]:
    """Lambda = x1 + (1/alpha) sum_{i<=q} exp(alpha (x_i - x1)) with x = 1/value.

    Returns Lambda and dLambda/dvalue_i for the first q values.
    """
    v = np.asarray(values, dtype=float)[:q]
    if v.size < q:
        raise ValueError("fewer values than the aggregation count q")
    if np.any(v <= 0):
        raise ValueError("eigenvalues must be positive (structure lost stiffness)")
    x = 1.0 / v
    e = np.exp(alpha * (x - x[0]))
    lam = x[0] + e.sum() / alpha
    dx = e.copy()
    dx[0] = 1.0 - e[1:].sum()
    return float(lam), dx * (-1.0 / v**2)


def repeated(values: np.ndarray, q: int, rtol: float = 1e-6) -> bool:
    v = np.asarray(values)[:q]
    return bool(np.any(np.diff(v) <= rtol * np.abs(v[1:])))


def artificial_mode_ratio(mesh: StructuredMesh, Ke0: np.ndarray, E: np.ndarray, rho: np.ndarray,
                          v_full: np.ndarray, cutoff: float = 0.1) -> float:
    """Share of the mode's elemental strain energy carried by elements with rho < cutoff."""
    s = E * element_energies(mesh, Ke0, v_full)
    return energy_ratio(s, rho, cutoff)


def energy_ratio(s: np.ndarray, rho: np.ndarray, cutoff: float = 0.1) -> float:
    total = float(np.sum(s))
    if not total > 0:
        raise UndefinedRatioError("mode carries no strain energy")
    return float(np.sum(s[np.asarray(rho) < cutoff]) / total)


# -- objectives -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EigenResult:
    Lambda: float
    dLambda: np.ndarray  # w.r.t. rho
    values: np.ndarray  # omega_i or lambda_i, ascending
    phi_rat: np.ndarray  # one per aggregated mode
    repeated: bool
    compliance: float | None = None
    dcompliance: np.ndarray | None = None


def vibration_objective(problem: ProblemSpec, state: DesignState, model: ActiveModel) -> EigenResult:
    """KS bound on the lowest q angular frequencies and its rho-gradient.

    d(omega_i^2)/drho_e = v_e^T (E' K_e0 - omega_i^2 rho0 M_e0) v_e, then
    d omega = d(omega^2) / (2 omega).
    """
    es = problem.eigen
    check_connected(model, problem.attached_dofs, "point mass")
    mesh = problem.mesh
    E, dE = interpolate(problem.stiffness_law(state.eta), state.rho)
    K = assemble(mesh, model, problem.Ke0, scale=E)
    M = assemble_mass(problem, model, state.rho)
    factor = Factorization(K)
    eig = generalized_eigensolve(K, M, min(es.n_modes, model.n_active), factor, norm="M")
    w2, V = eig.values, eig.modes
    omega = np.sqrt(w2)
    Lam, dLdw = ks_aggregate(omega, es.alpha, es.q)
    act = model.active
    dL = np.zeros(mesh.n_elements)
    ratios = np.zeros(es.q)
    for i in range(es.q):
        v = expand_vector(model, V[:, i])
        sk = element_energies(mesh, problem.Ke0, v)
        sm = element_energies(mesh, problem.Me0, v)  # Me0 already carries rho0
        dw2 = dE * sk - w2[i] * sm
        dL += dLdw[i] * dw2 / (2 * omega[i])
        ratios[i] = energy_ratio(np.where(act, E * sk, 0.0), state.rho, es.low_density)
    dL[~act] = 0.0
    rep = repeated(w2, es.q)
    if rep:
        log.warning("repeated eigenvalues among the aggregated modes; sensitivities may be nonsmooth")
    return EigenResult(Lam, dL, omega, ratios, rep)


def buckling_objective(problem: ProblemSpec, state: DesignState, model: ActiveModel) -> EigenResult:
    """KS bound on the lowest q buckling load factors plus the pre-buckling compliance.

    Per mode: dlambda = v^T (dK + lambda dG) v - lambda a^T dK u, K a = d(v^T G v)/du.
    """
    es = problem.eigen
    mesh = problem.mesh
    sol = linear_solve(problem, state, model)
    u = sol.u
    sig, dsig = interpolate(problem.stress_law(state.eta), state.rho)
    act_idx = np.flatnonzero(model.active)
    Ge = element_geometric_stiffness(mesh, problem.material.nu, u, act_idx, problem.thickness)
    G = assemble(mesh, model, Ge, scale=sig)
    eig = generalized_eigensolve(sol.K, -G, min(es.n_modes, model.n_active), sol.factor, norm="-G")
    lam, V = eig.values, eig.modes
    Lam, dLdl = ks_aggregate(lam, es.alpha, es.q)

    _, dN, w = gauss_data(mesh.ndim, mesh.h)
    wt = w * (problem.thickness if mesh.ndim == 2 else 1.0)
    Bm = strain_matrices(mesh.ndim, mesh.h)
    D = elasticity_matrix(mesh.ndim, problem.material.nu)
    ne = act_idx.size
    nen, d = dN.shape[1], mesh.ndim

    dL = np.zeros(mesh.n_elements)
    ratios = np.zeros(es.q)
    H = np.zeros((model.n_active, es.q))
    direct = np.zeros((es.q, mesh.n_elements))
    for i in range(es.q):
        v = expand_vector(model, V[:, i])
        ve = v[mesh.edofs[act_idx]]
        sk = np.zeros(mesh.n_elements)
        sk[act_idx] = np.einsum("ei,ij,ej->e", ve, problem.Ke0, ve)
        sg = np.einsum("ei,eij,ej->e", ve, Ge, ve)
        direct[i, act_idx] = sol.dE[act_idx] * sk[act_idx] + lam[i] * dsig[act_idx] * sg
        # h_i = d(v^T G v)/du: sigma_e sum_g w B^T D m, m = [M11, M22, 2 M12] (Voigt of grad v^T grad v)
        grad = np.einsum("eai,gaJ->egiJ", ve.reshape(ne, nen, d), dN)
        Mt = np.einsum("egiJ,egiL->egJL", grad, grad)
        m = _tensor_to_voigt(Mt, d)
        he = np.einsum("g,gka,kl,egl->ea", wt, Bm, D, m) * sig[act_idx, None]
        h = np.zeros(mesh.n_dofs)
        np.add.at(h, mesh.edofs[act_idx], he)
        H[:, i] = h[model.free]
        ratios[i] = energy_ratio(np.where(model.active, sol.E * sk, 0.0), state.rho, es.low_density)
    A = sol.factor.solve(H)
    for i in range(es.q):
        a = expand_vector(model, A[:, i])
        adj = sol.dE * element_energies(mesh, problem.Ke0, u, a)
        dL += dLdl[i] * (direct[i] - lam[i] * adj)
    dL[~model.active] = 0.0
    dc = -sol.dE * sol.s_tilde
    dc[~model.active] = 0.0
    rep = repeated(lam, es.q)
    if rep:
        log.warning("repeated buckling factors among the aggregated modes; sensitivities may be nonsmooth")
    return EigenResult(Lam, dL, lam, ratios, rep, sol.compliance, dc)


def _tensor_to_voigt(T: np.ndarray, ndim: int) -> np.ndarray:
    """Strain-like Voigt form (off-diagonals doubled) matching :func:`strain_matrices`."""
    if ndim == 2:
        return np.stack([T[..., 0, 0], T[..., 1, 1], 2 * T[..., 0, 1]], -1)
    return np.stack([T[..., 0, 0], T[..., 1, 1], T[..., 2, 2],
                     2 * T[..., 1, 2], 2 * T[..., 0, 2], 2 * T[..., 0, 1]], -1)
