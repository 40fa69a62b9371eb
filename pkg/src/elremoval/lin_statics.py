"""Linear compliance and force-inverter responses with adjoint sensitivities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .field_ops import DesignState, interpolate
from .grid_fem import Factorization, StructuredMesh, assemble
from .problems import ProblemSpec
from .removal import ActiveModel, DisconnectionError, check_connected, expand_vector


@dataclass(frozen=True, eq=False)
class LinearSolution:
    """Displacements (full length, zero on fixed and eliminated DOFs) and energies.

    ``s_tilde[e] = u_e^T K_e0 u_e`` and ``s[e] = E(rho_e) s_tilde[e]``.
    """

    u: np.ndarray
    compliance: float
    s_tilde: np.ndarray
    s: np.ndarray
    E: np.ndarray
    dE: np.ndarray
    factor: Factorization
    K: sp.csc_matrix


def element_energies(mesh: StructuredMesh, Ke0: np.ndarray, u: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
    """Per-element bilinear form x_e^T K_e0 u_e (x = u gives the strain energy)."""
    ue = u[mesh.edofs]
    xe = ue if x is None else x[mesh.edofs]
    return np.einsum("ei,ij,ej->e", xe, Ke0, ue)


def add_springs(problem: ProblemSpec, model: ActiveModel, K: sp.spmatrix) -> sp.csc_matrix:
    if not problem.bc.springs:
        return sp.csc_matrix(K)
    diag = np.zeros(model.n_active)
    for dof, k in problem.bc.springs:
        r = model.full_to_reduced[dof]
        if r < 0:
            if model.eliminated[dof]:
                raise DisconnectionError(f"spring DOF {dof} lies in a removed region")
            continue
        diag[r] += k
    return sp.csc_matrix(K + sp.diags(diag))


def stiffness_matrix(problem: ProblemSpec, state: DesignState, model: ActiveModel):
    """Reduced stiffness (springs included), element moduli and their derivatives."""
    law = problem.stiffness_law(state.eta)
    E, dE = interpolate(law, state.rho)
    K = assemble(problem.mesh, model, problem.Ke0, scale=E)
    return add_springs(problem, model, K), E, dE


def linear_solve(problem: ProblemSpec, state: DesignState, model: ActiveModel,
                 f: np.ndarray | None = None) -> LinearSolution:
    check_connected(model, problem.attached_dofs, "load/spring")
    K, E, dE = stiffness_matrix(problem, state, model)
    f = problem.force if f is None else f
    factor = Factorization(K)
    u = expand_vector(model, factor.solve(f[model.free]))
    s_tilde = element_energies(problem.mesh, problem.Ke0, u)
    s_tilde[~model.active] = 0.0
    return LinearSolution(u, float(u @ f), s_tilde, E * s_tilde, E, dE, factor, K)


def compliance_objective(problem: ProblemSpec, state: DesignState, model: ActiveModel):
    """g0 = u^T f and dg0/drho = -E'(rho) s_tilde (zero on removed elements)."""
    sol = linear_solve(problem, state, model)
    dg = -sol.dE * sol.s_tilde
    dg[~model.active] = 0.0
    return sol.compliance, dg, sol


def inverter_objective(problem: ProblemSpec, state: DesignState, model: ActiveModel,
                       l: np.ndarray | None = None):
    """g0 = l^T u with adjoint K a = -l and dg0/drho_e = E'(rho_e) a_e^T K_e0 u_e.

    ``l`` defaults to the unit vector on the output DOF.
    """
    if l is None:
        out = problem.bc.output_dof
        check_connected(model, [out], "output")
        l = np.zeros(problem.mesh.n_dofs)
        l[out] = 1.0
    sol = linear_solve(problem, state, model)
    a = expand_vector(model, sol.factor.solve(-l[model.free]))
    dg = sol.dE * element_energies(problem.mesh, problem.Ke0, sol.u, a)
    dg[~model.active] = 0.0
    return float(l @ sol.u), dg, sol
