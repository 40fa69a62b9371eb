"""Total-Lagrangian large-deformation statics with the modified Saint Venant material.

Everything is evaluated per unit modulus and scaled elementwise by E(rho_e);
the Lamé pair comes from :meth:`MaterialConstants.lame` with E0 = 1, so in
2D the tangent at u = 0 is exactly the plane-stress linear stiffness.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .field_ops import DesignState, interpolate
from .grid_fem import Factorization, MaterialConstants, SingularSystemError, StructuredMesh, assemble, gauss_data
from .problems import NewtonSettings, ProblemSpec
from .removal import ActiveModel, check_connected, expand_vector, reduce_vector

log = logging.getLogger(__name__)


class ElementInversionError(RuntimeError):
    def __init__(self, element: int, J: float):
        super().__init__(f"element {element} inverted (det F = {J:.3e})")
        self.element = element
        self.J = J


class AnalysisFailure(RuntimeError):
    """Newton iteration did not converge; ``residual`` is the last relative residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def pk2_stress(F: np.ndarray, lam: float, mu: float, tangent: bool = True):
    """Second Piola-Kirchhoff stress S = lam J (J-1) C^-1 + 2 mu E and dS/dE.

    ``F`` has shape (..., d, d). The returned tangent has shape (..., d, d, d, d)
    and is ``2 dS/dC``, i.e. the derivative with respect to the Green strain.
    """
    F = np.asarray(F, dtype=float)
    return pk2_from_gradient(F - np.eye(F.shape[-1]), lam, mu, tangent)


def _det_minus_one(H: np.ndarray) -> np.ndarray:
    """det(I + H) - 1 without cancellation for small H."""
    tr = np.trace(H, axis1=-2, axis2=-1)
    if H.shape[-1] == 2:
        return tr + H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] * H[..., 1, 0]
    i2 = 0.5 * (tr**2 - np.einsum("...ij,...ji->...", H, H))
    return tr + i2 + np.linalg.det(H)


def pk2_from_gradient(H: np.ndarray, lam: float, mu: float, tangent: bool = True):
    """:func:`pk2_stress` in terms of the displacement gradient H = F - I.

    E and J - 1 are formed from H directly, which keeps the stress accurate
    down to strains near machine precision.
    """
    H = np.asarray(H, dtype=float)
    d = H.shape[-1]
    I = np.eye(d)
    F = I + H
    Jm1 = _det_minus_one(H)
    J = 1.0 + Jm1
    if np.any(J <= 0):
        raise ElementInversionError(-1, float(np.min(J)))
    Ht = np.swapaxes(H, -1, -2)
    E = 0.5 * (H + Ht + Ht @ H)
    Ci = np.linalg.inv(np.swapaxes(F, -1, -2) @ F)
    a = (lam * J * Jm1)[..., None, None]
    S = a * Ci + 2 * mu * E
    if not tangent:
        return S, None
    b = (lam * J * (2 * J - 1))[..., None, None, None, None]
    a4 = a[..., None, None]
    CC = Ci[..., :, :, None, None] * Ci[..., None, None, :, :]
    sym_ci = 0.5 * (np.einsum("...ik,...jl->...ijkl", Ci, Ci) + np.einsum("...il,...jk->...ijkl", Ci, Ci))
    sym_i = 0.5 * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I))
    Ct = b * CC - 2 * a4 * sym_ci + 2 * mu * sym_i
    return S, Ct


def strain_energy_density(F: np.ndarray, lam: float, mu: float) -> np.ndarray:
    """W = lam/2 (J - 1)^2 + mu tr(E^2)."""
    J = np.linalg.det(F)
    E = 0.5 * (np.swapaxes(F, -1, -2) @ F - np.eye(F.shape[-1]))
    return 0.5 * lam * (J - 1) ** 2 + mu * np.einsum("...ij,...ij->...", E, E)


def green_strain(F: np.ndarray) -> np.ndarray:
    return 0.5 * (np.swapaxes(F, -1, -2) @ F - np.eye(F.shape[-1]))


@dataclass(frozen=True)
class ElementResponse:
    f_int: np.ndarray  # (ne, nen*d) unit-modulus internal forces
    k_t: np.ndarray | None  # (ne, nen*d, nen*d) unit-modulus tangents


def element_response(mesh: StructuredMesh, elements: np.ndarray, u: np.ndarray, lam: float, mu: float,
                     thickness: float = 1.0, tangent: bool = True) -> ElementResponse:
    """Internal force vectors and tangent stiffnesses of the given elements."""
    d = mesh.ndim
    _, dN, w = gauss_data(d, mesh.h)
    nen = dN.shape[1]
    ue = u[mesh.edofs[elements]].reshape(len(elements), nen, d)
    # H_iJ = sum_a u_ai dN_aJ, F = I + H
    H = np.einsum("eai,gaJ->egiJ", ue, dN)
    F = np.eye(d) + H
    J = 1.0 + _det_minus_one(H)
    if np.any(J <= 0):
        bad = np.argwhere(J <= 0)[0]
        raise ElementInversionError(int(elements[bad[0]]), float(J[tuple(bad)]))
    S, Ct = pk2_from_gradient(H, lam, mu, tangent)
    wt = w * (thickness if d == 2 else 1.0)
    # f_ai = sum_g w F_iI S_IJ dN_aJ
    P = F @ S  # first Piola-Kirchhoff stress, (e, g, d, d)
    f = np.einsum("g,egiJ,gaJ->eai", wt, P, dN, optimize=True).reshape(len(elements), nen * d)
    if not tangent:
        return ElementResponse(f, None)
    # G[e,g,(a,i),(I,J)] = F_iI dN_aJ, the derivative of E_IJ (unsymmetrized) w.r.t. u_ai
    G = np.einsum("egiI,gaJ->egaiIJ", F, dN).reshape(len(elements), len(w), nen * d, d * d)
    Cm = Ct.reshape(len(elements), len(w), d * d, d * d)
    GC = G @ Cm
    k_mat = np.einsum("g,egxy->exy", wt, GC @ np.swapaxes(G, -1, -2))
    geo = np.einsum("g,egab->eab", wt, dN[None] @ S @ np.swapaxes(dN, -1, -2)[None])
    k_geo = np.einsum("eab,ik->eaibk", geo, np.eye(d)).reshape(len(elements), nen * d, nen * d)
    k = k_mat + k_geo
    return ElementResponse(f, 0.5 * (k + np.swapaxes(k, 1, 2)))


def unit_lame(material: MaterialConstants, ndim: int) -> tuple[float, float]:
    unit = MaterialConstants(E0=1.0, Emin=0.0, nu=material.nu)
    return unit.lame(ndim)


def residual_and_tangent(problem: ProblemSpec, model: ActiveModel, E: np.ndarray, u: np.ndarray,
                         f_ext: np.ndarray | None = None, tangent: bool = True):
    """Reduced residual r = f_int(u) - f_ext and tangent K_T = dr/du.

    ``u`` is full length; ``E`` holds per-element moduli (full element ids).
    """
    mesh = problem.mesh
    act = np.flatnonzero(model.active)
    lam, mu = unit_lame(problem.material, mesh.ndim)
    resp = element_response(mesh, act, u, lam, mu, problem.thickness, tangent)
    fe = resp.f_int * E[act, None]
    f_int = np.zeros(mesh.n_dofs)
    np.add.at(f_int, mesh.edofs[act], fe)
    f_ext = problem.force if f_ext is None else f_ext
    r = (f_int - f_ext)[model.free]
    if not tangent:
        return r, None, resp
    KT = assemble(mesh, model, resp.k_t, scale=E)
    return r, KT, resp


@dataclass(frozen=True, eq=False)
class NonlinearSolution:
    u: np.ndarray
    load_factor: float
    newton_iterations: int
    residual: float
    KT: sp.csc_matrix
    response: ElementResponse


def newton_solve(problem: ProblemSpec, state: DesignState, model: ActiveModel,
                 settings: NewtonSettings | None = None, u0: np.ndarray | None = None) -> NonlinearSolution:
    """Incremental Newton-Raphson with step halving on failure.

    The tolerance is relative to the norm of the current external load,
    measured on the free active DOFs only. With ``u0`` (typically the previous
    design's equilibrium) one full-load Newton solve is tried from ``u0``
    first; if it fails, the incremental path from u = 0 is taken.
    """
    settings = settings or problem.newton
    check_connected(model, problem.attached_dofs, "load")
    E, _ = interpolate(problem.stiffness_law(state.eta), state.rho)
    f_ext = problem.force
    if u0 is not None:
        start = expand_vector(model, reduce_vector(model, u0))
        try:
            u, its, res = _newton_step(problem, model, E, start, f_ext, settings)
            r, KT, resp = residual_and_tangent(problem, model, E, u, f_ext)
            return NonlinearSolution(u, 1.0, its, res, KT, resp)
        except (AnalysisFailure, ElementInversionError, SingularSystemError) as exc:
            log.debug("warm start failed (%s); solving incrementally", exc)
    u = np.zeros(problem.mesh.n_dofs)
    t, dt = 0.0, 1.0 / settings.increments
    halvings, total_iters, last_res = 0, 0, np.inf
    while t < 1.0 - 1e-12:
        t_new = 1.0 if t + dt > 1.0 - 1e-12 else t + dt
        try:
            u_new, its, last_res = _newton_step(problem, model, E, u, t_new * f_ext, settings)
        except (AnalysisFailure, ElementInversionError, SingularSystemError) as exc:
            if halvings >= settings.max_halvings:
                res = getattr(exc, "residual", last_res)
                raise AnalysisFailure(f"Newton failed at load factor {t_new:.4f}: {exc}", res) from exc
            halvings += 1
            dt *= 0.5
            log.debug("halving load step to %.4g (%s)", dt, exc)
            continue
        u, t = u_new, t_new
        total_iters += its
    r, KT, resp = residual_and_tangent(problem, model, E, u, f_ext)
    return NonlinearSolution(u, t, total_iters, last_res, KT, resp)


def _newton_step(problem, model, E, u, f_ext, settings: NewtonSettings):
    fnorm = np.linalg.norm(f_ext[model.free])
    u = u.copy()
    res = np.inf
    for it in range(1, settings.max_iter + 1):
        r, KT, _ = residual_and_tangent(problem, model, E, u, f_ext)
        res = np.linalg.norm(r) / fnorm if fnorm > 0 else np.linalg.norm(r)
        if not np.isfinite(res):
            raise AnalysisFailure("non-finite residual", res)
        if res <= settings.tol:
            return u, it - 1, res
        du = expand_vector(model, Factorization(KT).solve(-r))
        if settings.line_search:
            du = _backtrack(problem, model, E, u, du, f_ext, np.linalg.norm(r))
        u += du
    raise AnalysisFailure(f"no convergence in {settings.max_iter} iterations", res)


def _backtrack(problem, model, E, u, du, f_ext, r0):
    s = 1.0
    for _ in range(6):
        try:
            r, _, _ = residual_and_tangent(problem, model, E, u + s * du, f_ext, tangent=False)
            if np.linalg.norm(r) < r0:
                break
        except ElementInversionError:
            pass
        s *= 0.5
    return s * du


def end_compliance_objective(problem: ProblemSpec, state: DesignState, model: ActiveModel,
                             settings: NewtonSettings | None = None, u0: np.ndarray | None = None):
    """g0 = F_ext^T u; adjoint K_T a = -F_ext, dg0/drho_e = E'(rho_e) a_e^T f_int_e(u)."""
    sol = newton_solve(problem, state, model, settings, u0)
    f_ext = problem.force
    _, dE = interpolate(problem.stiffness_law(state.eta), state.rho)
    try:
        a = expand_vector(model, Factorization(sol.KT).solve(-f_ext[model.free]))
    except SingularSystemError as exc:
        raise SingularSystemError(f"singular tangent in the adjoint solve: {exc}", exc.pivot) from exc
    act = np.flatnonzero(model.active)
    dg = np.zeros(problem.mesh.n_elements)
    dg[act] = dE[act] * np.einsum("ei,ei->e", a[problem.mesh.edofs[act]], sol.response.f_int)
    return float(f_ext @ sol.u), dg, sol
