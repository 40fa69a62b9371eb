"""Sensitivity and topology propagation on a half-solid cantilever.

For each density scheme the study computes, on a fixed design:

(a) rho, (b) s_tilde, (c) s = E(rho) s_tilde, (d) dc/drho, (e) dc/dphi and
(f) the growth map T(|dc/dphi| / max), i.e. the normalized sensitivities
pushed through the phi -> rho map as if they were design variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .field_ops import (DesignState, FilterOperator, Scheme, backprop_design, build_filter, design_state,
                        interpolate)
from .grid_fem import BoundarySpec, MaterialConstants, StructuredMesh, build_mesh
from .lin_statics import linear_solve
from .problems import ProblemKind, ProblemSpec, _edge_dofs
from .removal import build_active_model
from .schedules import ContinuationSchedule

STUDY_DIMS = (40, 20)
STUDY_RMIN = 2.5  # element lengths
STUDY_ETA = 3.0
STUDY_BETA = 40.0
STUDY_EMIN = 1e-9  # keeps the void half solvable so s_tilde is defined there

COLUMNS = ("rho", "s_tilde", "s", "dc_drho", "dc_dphi", "growth")


def study_problem(eta: float = STUDY_ETA, beta: float = STUDY_BETA, scheme: Scheme | str = Scheme.HEAVISIDE,
                  dims=STUDY_DIMS, r_min: float = STUDY_RMIN) -> ProblemSpec:
    """Cantilever clamped on the left, unit downward load at mid-height of the right edge."""
    nx, ny = dims
    mesh = build_mesh(dims, h=1.0 / ny)
    tip = mesh.node_id(nx, ny // 2)
    bc = BoundarySpec(fixed=_edge_dofs(mesh, 0, 0), loads=((mesh.dof(tip, 1), -1.0),))
    return ProblemSpec(name="study", kind=ProblemKind.COMPLIANCE, mesh=mesh, bc=bc,
                       material=MaterialConstants(E0=1.0, Emin=STUDY_EMIN, nu=0.3),
                       r_min=r_min * mesh.h, V_max=0.5, scheme=Scheme(scheme),
                       eta=ContinuationSchedule(eta), beta=ContinuationSchedule(beta), max_iter=0)


def study_phi(mesh: StructuredMesh, scheme: Scheme | str) -> np.ndarray:
    """phi = 1 on the lower half; A4 also clears the two layers below the centreline
    so that its projected rho matches the other schemes."""
    scheme = Scheme(scheme)
    ny = mesh.dims[1]
    rows = np.floor(mesh.centroids()[:, 1] / mesh.h + 1e-9).astype(int)
    top = ny // 2 - (2 if scheme is Scheme.HEAVISIDE else 0)
    return (rows < top).astype(float)


def build_study_design(scheme: Scheme | str, eta: float = STUDY_ETA, beta: float = STUDY_BETA,
                       problem: ProblemSpec | None = None) -> DesignState:
    scheme = Scheme(scheme)
    p = problem or study_problem(eta, beta, scheme)
    return design_state(p.filter, study_phi(p.mesh, scheme), beta, eta, scheme, p.threshold)


def _normalize(x: np.ndarray) -> np.ndarray:
    m = np.max(np.abs(x))
    return np.abs(x) / m if m > 0 else np.zeros_like(x)


@dataclass(eq=False)
class PropagationReport:
    """Raw study columns plus their max-normalized magnitudes.

    ``growth`` is kept unclamped; use :meth:`growth_clamped` for rendering.
    """

    scheme: Scheme
    eta: float
    beta: float
    r_min: float  # element lengths
    dims: tuple[int, int]
    phi: np.ndarray
    rho: np.ndarray
    s_tilde: np.ndarray
    s: np.ndarray
    dc_drho: np.ndarray
    dc_dphi: np.ndarray
    growth: np.ndarray
    compliance: float
    normalized: dict = field(default_factory=dict)
    maxima: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("s_tilde", "s", "dc_drho", "dc_dphi"):
            arr = getattr(self, name)
            self.maxima[name] = float(np.max(np.abs(arr)))
            self.normalized[name] = _normalize(arr)

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def growth_clamped(self) -> np.ndarray:
        return np.clip(self.growth, 0.0, 1.0)

    def grid(self, name: str) -> np.ndarray:
        """Column as an (ny, nx) array with row 0 at the bottom."""
        nx, ny = self.dims
        return np.asarray(self.column(name)).reshape(ny, nx)


def propagation_maps(scheme: Scheme | str, eta: float = STUDY_ETA, beta: float = STUDY_BETA,
                     phi: np.ndarray | None = None, problem: ProblemSpec | None = None) -> PropagationReport:
    """Compute columns (a)-(f) for one scheme. ``phi`` overrides the default study design."""
    scheme = Scheme(scheme)
    p = problem or study_problem(eta, beta, scheme)
    filt: FilterOperator = p.filter
    if phi is None:
        phi = study_phi(p.mesh, scheme)
    state = design_state(filt, phi, beta, eta, scheme, p.threshold)
    model = build_active_model(p.mesh, np.ones(p.mesh.n_elements, bool), p.fixed_dofs)
    sol = linear_solve(p, state, model)
    _, dE = interpolate(p.stiffness_law(eta), state.rho)
    dc_drho = -dE * sol.s_tilde
    dc_dphi = backprop_design(filt, state, dc_drho, filter_sensitivity=True)
    growth_in = _normalize(dc_dphi)
    growth = design_state(filt, growth_in, beta, eta, scheme, p.threshold).rho
    return PropagationReport(scheme, eta, beta, p.r_min / p.mesh.h, tuple(p.mesh.dims), state.phi, state.rho,
                             sol.s_tilde, sol.s, dc_drho, dc_dphi, growth, sol.compliance)


def all_schemes(eta: float = STUDY_ETA, beta: float = STUDY_BETA) -> dict[Scheme, PropagationReport]:
    return {s: propagation_maps(s, eta, beta) for s in Scheme}


# -- measurements ---------------------------------------------------------------

def _centroids_in_h(dims) -> np.ndarray:
    nx, ny = dims
    ix, iy = np.meshgrid(np.arange(nx) + 0.5, np.arange(ny) + 0.5, indexing="xy")
    return np.column_stack([ix.ravel(), iy.ravel()])


def growth_reach(report: PropagationReport, solid_level: float = 0.5, support_tol: float = 0.0) -> float:
    """Largest centroid distance (in element lengths) from the solid set
    ``rho >= solid_level`` to any element where the growth map exceeds ``support_tol``."""
    c = _centroids_in_h(report.dims)
    solid = report.rho >= solid_level
    support = np.abs(report.growth) > support_tol
    if not solid.any() or not support.any():
        return 0.0
    d, _ = cKDTree(c[solid]).query(c[support])
    return float(d.max())


def void_half_mask(dims) -> np.ndarray:
    nx, ny = dims
    rows = np.repeat(np.arange(ny), nx)
    return rows >= ny // 2


def void_sensitivity_ratio(report: PropagationReport) -> float:
    """max over the upper (void) half of |dc/drho| relative to the global max."""
    mask = void_half_mask(report.dims)
    return float(np.max(np.abs(report.dc_drho[mask])) / np.max(np.abs(report.dc_drho)))


def intermediate_band_width(report: PropagationReport, tol: float = 1e-6) -> int:
    """Number of element rows holding any rho strictly between tol and 1 - tol."""
    g = report.grid("rho")
    inter = (g > tol) & (g < 1 - tol)
    return int(np.count_nonzero(inter.any(axis=1)))
