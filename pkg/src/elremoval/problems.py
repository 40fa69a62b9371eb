"""Problem definitions and the desk-scale benchmark presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from .field_ops import FilterOperator, InterpolationLaw, LawKind, Scheme, build_filter
from .grid_fem import (BoundarySpec, InvalidSpecError, MaterialConstants, StructuredMesh, build_mesh,
                       element_mass, element_stiffness)
from .schedules import ContinuationSchedule, ThresholdSchedule


class ProblemKind(str, Enum):
    COMPLIANCE = "compliance"
    INVERTER = "inverter"
    NONLINEAR = "nonlinear"
    VIBRATION = "vibration"
    BUCKLING = "buckling"


@dataclass(frozen=True)
class NewtonSettings:
    tol: float = 1e-8
    max_iter: int = 30
    increments: int = 10
    max_halvings: int = 4
    line_search: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidSpecError("Newton tolerance must be positive")
        if self.increments < 1 or self.max_iter < 1:
            raise InvalidSpecError("Newton increments and iterations must be >= 1")
        if self.max_halvings < 0:
            raise InvalidSpecError("max_halvings must be >= 0")


@dataclass(frozen=True)
class EigenSettings:
    n_modes: int = 8
    q: int = 4
    alpha: float = 16.0
    lumped: bool = False
    low_density: float = 0.1  # rho below which strain energy counts as "low"

    def __post_init__(self):
        if not 1 <= self.q <= self.n_modes:
            raise InvalidSpecError("need 1 <= q <= n_modes")
        if not self.alpha > 0:
            raise InvalidSpecError("KS parameter alpha must be positive")


@dataclass(eq=False)
class ProblemSpec:
    """Everything needed to run one optimization.

    ``material.Emin`` is the void modulus of the standard approach; when a
    removal schedule is set the analysis uses ``Emin = 0`` instead.
    ``r_min`` is in physical length units.
    """

    name: str
    kind: ProblemKind
    mesh: StructuredMesh
    bc: BoundarySpec
    material: MaterialConstants
    r_min: float
    V_max: float
    law: LawKind = LawKind.SIMP
    thickness: float = 1.0
    scheme: Scheme = Scheme.HEAVISIDE
    threshold: float = 0.5
    eta: ContinuationSchedule = field(default_factory=lambda: ContinuationSchedule(3.0))
    beta: ContinuationSchedule = field(default_factory=lambda: ContinuationSchedule(32.0))
    rho_t: ThresholdSchedule | None = None
    optimizer: str = "oc"
    max_iter: int = 200
    move: float | None = None  # OC or MMA move limit; None keeps the optimizer default
    asyinit: float | None = None  # initial MMA asymptote distance; None keeps the default
    pinned_nodes: tuple[int, ...] = ()
    newton: NewtonSettings = field(default_factory=NewtonSettings)
    eigen: EigenSettings | None = None
    c_max_factor: float | None = None
    initial_phi: np.ndarray | None = None
    initial_rule: str = "volume"  # "volume": uniform rho = V_max; "phi": uniform phi = V_max
    tau_phi_tol: float = 1e-4
    tau_g0_tol: float = 1e-8

    def __post_init__(self):
        self.kind = ProblemKind(self.kind)
        self.law = LawKind(self.law)
        self.scheme = Scheme(self.scheme)
        self.bc.validate(self.mesh.n_dofs, self.mesh.n_nodes)
        if not 0 < self.V_max <= 1:
            raise InvalidSpecError("V_max must lie in (0, 1]")
        if not self.r_min > 0:
            raise InvalidSpecError("filter radius must be positive")
        if self.optimizer not in ("oc", "mma"):
            raise InvalidSpecError(f"unknown optimizer {self.optimizer!r}")
        if self.max_iter < 0:
            raise InvalidSpecError("max_iter must be >= 0")
        if self.kind in (ProblemKind.VIBRATION, ProblemKind.BUCKLING) and self.eigen is None:
            raise InvalidSpecError(f"{self.kind.value} problems need eigen settings")
        if self.kind is ProblemKind.INVERTER and self.bc.output_dof is None:
            raise InvalidSpecError("inverter problems need an output DOF")
        if self.kind is ProblemKind.BUCKLING and (self.c_max_factor is None or self.c_max_factor <= 0):
            raise InvalidSpecError("buckling problems need a positive c_max factor")
        if self.kind is not ProblemKind.COMPLIANCE and self.optimizer == "oc":
            raise InvalidSpecError("OC only handles compliance problems; use mma")
        if self.initial_rule not in ("volume", "phi"):
            raise InvalidSpecError(f"unknown initial_rule {self.initial_rule!r}")
        if self.initial_phi is not None:
            phi = np.asarray(self.initial_phi, dtype=float)
            if phi.shape != (self.mesh.n_elements,) or phi.min() < 0 or phi.max() > 1:
                raise InvalidSpecError("initial_phi must be a [0,1] field with one value per element")
            self.initial_phi = phi

    @property
    def removal(self) -> bool:
        return self.rho_t is not None

    @property
    def Emin(self) -> float:
        return 0.0 if self.removal else self.material.Emin

    def stiffness_law(self, eta: float) -> InterpolationLaw:
        return InterpolationLaw(self.law, self.material.E0, self.Emin, eta)

    def stress_law(self, eta: float) -> InterpolationLaw:
        return InterpolationLaw(LawKind.SIMP_STRESS, self.material.E0, 0.0, eta)

    @property
    def element_kind(self) -> str:
        return "Q4" if self.mesh.ndim == 2 else "H8"

    @cached_property
    def Ke0(self) -> np.ndarray:
        return element_stiffness(self.element_kind, self.mesh.h, self.material.nu, self.thickness)

    @cached_property
    def Me0(self) -> np.ndarray:
        lumped = self.eigen.lumped if self.eigen is not None else False
        return element_mass(self.element_kind, self.mesh.h, self.material.density, self.thickness, lumped)

    @cached_property
    def filter(self) -> FilterOperator:
        return build_filter(self.mesh, self.r_min)

    @cached_property
    def force(self) -> np.ndarray:
        return self.bc.force_vector(self.mesh.n_dofs)

    @property
    def fixed_dofs(self) -> np.ndarray:
        return np.asarray(self.bc.fixed, dtype=int)

    @property
    def attached_dofs(self) -> list[int]:
        """DOFs that must stay connected: loads, springs, output, point masses."""
        dofs = [d for d, v in self.bc.loads if v != 0]
        dofs += [d for d, _ in self.bc.springs]
        if self.bc.output_dof is not None:
            dofs.append(self.bc.output_dof)
        for node, _ in self.bc.point_masses:
            dofs += [self.mesh.dof(node, c) for c in range(self.mesh.dofs_per_node)]
        fixed = set(self.fixed_dofs.tolist())
        return sorted(set(dofs) - fixed)

    def replace(self, **changes) -> "ProblemSpec":
        return dataclasses.replace(self, **changes)


# -- presets ----------------------------------------------------------------

def _edge_dofs(mesh: StructuredMesh, axis: int, index: int, comps=None) -> np.ndarray:
    nodes = mesh.nodes_where(axis, index)
    comps = range(mesh.dofs_per_node) if comps is None else comps
    return np.sort(np.concatenate([nodes * mesh.dofs_per_node + c for c in comps]))


def patch_load_weights(n_el: int, h: float, a: float, b: float) -> list[tuple[int, float]]:
    """Consistent nodal shares of a uniform traction on [a, b] along an edge of
    ``n_el`` linear elements; the shares sum to 1."""
    if not b > a:
        raise InvalidSpecError("load patch must have positive length")
    out = np.zeros(n_el + 1)
    for e in range(n_el):
        lo, hi = max(a, e * h), min(b, (e + 1) * h)
        if hi <= lo:
            continue
        s0, s1 = lo / h - e, hi / h - e  # local coordinates in [0, 1]
        out[e] += (s1 - s0) - (s1**2 - s0**2) / 2
        out[e + 1] += (s1**2 - s0**2) / 2
    out /= out.sum()
    return [(int(j), float(w)) for j, w in enumerate(out) if w > 0]


def cantilever2d(dims=(160, 40), rho_t: ThresholdSchedule | None = None, **kw) -> ProblemSpec:
    """Clamped left edge, downward tip force at mid-height of the right edge."""
    nx, ny = dims
    mesh = build_mesh(dims, h=1.0 / ny)
    tip = mesh.node_id(nx, ny // 2)
    bc = BoundarySpec(fixed=_edge_dofs(mesh, 0, 0), loads=((mesh.dof(tip, 1), -1e7),))
    opts = dict(name="cantilever2d", kind=ProblemKind.COMPLIANCE, mesh=mesh, bc=bc,
                material=MaterialConstants(E0=200e9, Emin=200e9 * 1e-6, nu=0.3),
                r_min=2.4 * mesh.h, V_max=0.5,
                eta=ContinuationSchedule(2.0, 0.5, 25, 6.0), beta=ContinuationSchedule(32.0),
                rho_t=rho_t, optimizer="oc", max_iter=400)
    opts.update(kw)
    return ProblemSpec(**opts)


def cantilever3d(dims=(48, 16, 16), rho_t: ThresholdSchedule | None = None, **kw) -> ProblemSpec:
    """Clamped x = 0 face, downward tip force at the centre of the opposite face."""
    nx, ny, nz = dims
    mesh = build_mesh(dims, h=1.0 / ny)
    tip = mesh.node_id(nx, ny // 2, nz // 2)
    bc = BoundarySpec(fixed=_edge_dofs(mesh, 0, 0), loads=((mesh.dof(tip, 1), -1e7),))
    opts = dict(name="cantilever3d", kind=ProblemKind.COMPLIANCE, mesh=mesh, bc=bc,
                material=MaterialConstants(E0=200e9, Emin=200e9 * 1e-6, nu=0.3),
                r_min=2 * np.sqrt(3) * mesh.h, V_max=0.16,
                eta=ContinuationSchedule(3.0), beta=ContinuationSchedule(32.0),
                rho_t=rho_t, optimizer="oc", max_iter=200)
    opts.update(kw)
    return ProblemSpec(**opts)


def inverter(dims=(120, 60), rho_t: ThresholdSchedule | None = None, **kw) -> ProblemSpec:
    """Lower half of the force inverter; the top edge is the symmetry line.

    Input (+x force and spring k_in) at the top-left node, output spring
    k_out and target DOF at the top-right node, left-bottom corner clamped.
    """
    nx, ny = dims
    mesh = build_mesh(dims, h=1.0)
    n_in = mesh.node_id(0, ny)
    n_out = mesh.node_id(nx, ny)
    support = [mesh.node_id(0, j) for j in range(max(2, ny // 20 + 1))]
    fixed = [mesh.dof(n, c) for n in support for c in (0, 1)]
    fixed += list(_edge_dofs(mesh, 1, ny, comps=(1,)))
    bc = BoundarySpec(fixed=np.unique(fixed), loads=((mesh.dof(n_in, 0), 1.0),),
                      springs=((mesh.dof(n_in, 0), 1.0), (mesh.dof(n_out, 0), 1e-3)),
                      output_dof=mesh.dof(n_out, 0))
    opts = dict(name="inverter", kind=ProblemKind.INVERTER, mesh=mesh, bc=bc,
                material=MaterialConstants(E0=1.0, Emin=1e-3, nu=0.3),
                r_min=2.0 * mesh.h, V_max=0.3,
                eta=ContinuationSchedule(2.0, 0.2, 20, 8.0), beta=ContinuationSchedule(50.0),
                rho_t=rho_t, optimizer="mma", max_iter=400, move=1e-3, asyinit=1e-3)
    opts.update(kw)
    return ProblemSpec(**opts)


def nonlinear_cantilever(dims=(100, 25), load=240e3, rho_t: ThresholdSchedule | None = None,
                         **kw) -> ProblemSpec:
    """Large-deformation cantilever, L = 1, thickness 0.1, downward end load.

    The load is split over the node(s) nearest mid-height of the right edge.
    """
    nx, ny = dims
    mesh = build_mesh(dims, h=1.0 / nx)
    js = [ny // 2] if ny % 2 == 0 else [ny // 2, ny // 2 + 1]
    loads = tuple((mesh.dof(mesh.node_id(nx, j), 1), -load / len(js)) for j in js)
    bc = BoundarySpec(fixed=_edge_dofs(mesh, 0, 0), loads=loads)
    opts = dict(name="nonlinear", kind=ProblemKind.NONLINEAR, mesh=mesh, bc=bc,
                material=MaterialConstants(E0=3e9, Emin=3e9 * 1e-6, nu=0.4),
                thickness=0.1, r_min=2.0 * mesh.h, V_max=0.5,
                eta=ContinuationSchedule(2.5, 0.5, 50, 6.0, start=100), beta=ContinuationSchedule(50.0),
                rho_t=rho_t, optimizer="mma", max_iter=300, move=1e-3, asyinit=1e-3)
    opts.update(kw)
    return ProblemSpec(**opts)


def clamped_vibration(dims=(180, 60), rho_t: ThresholdSchedule | None = None, **kw) -> ProblemSpec:
    """Beam clamped at both ends with a nonstructural mass at the centre."""
    nx, ny = dims
    mesh = build_mesh(dims, h=1.0 / ny)
    V_max = kw.get("V_max", 0.3)
    centre = mesh.node_id(nx // 2, ny // 2)
    m0 = 0.15 * V_max * 1.0 * (nx * mesh.h) * (ny * mesh.h)
    fixed = np.concatenate([_edge_dofs(mesh, 0, 0), _edge_dofs(mesh, 0, nx)])
    bc = BoundarySpec(fixed=fixed, point_masses=((centre, m0),))
    opts = dict(name="vibration", kind=ProblemKind.VIBRATION, mesh=mesh, bc=bc,
                material=MaterialConstants(E0=1.0, Emin=1e-6, nu=0.3, density=1.0),
                law=LawKind.RAMP, r_min=2.5 * mesh.h, V_max=V_max,
                eta=ContinuationSchedule(0.0, 1.0, 20, 24.0), beta=ContinuationSchedule(40.0),
                rho_t=rho_t, optimizer="mma", max_iter=360, move=1e-3, asyinit=1e-3, pinned_nodes=(centre,),
                eigen=EigenSettings(n_modes=8, q=4, alpha=16.0))
    opts.update(kw)
    return ProblemSpec(**opts)


def vibration_threshold_ramp(start: int = 50) -> ThresholdSchedule:
    """rho_t = 0 first, then +0.02 every 50 iterations up to 0.1."""
    return ThresholdSchedule(0.0, 0.02, 50, 0.1, start=start)


def column_buckling(dims=(180, 90), rho_t: ThresholdSchedule | None = None, strip: float | None = 0.2,
                    **kw) -> ProblemSpec:
    """Column clamped at x = 0, compressed at x = L_x over a patch of length L_y/90.

    ``strip`` is the relative width of the solid central strip used as the
    initial guess; ``None`` starts from the uniform field instead.
    """
    nx, ny = dims
    mesh = build_mesh(dims, h=1.0 / ny)
    Ly = ny * mesh.h
    b = Ly / 90.0
    weights = patch_load_weights(ny, mesh.h, Ly / 2 - b / 2, Ly / 2 + b / 2)
    total = 1e-3
    loads = tuple((mesh.dof(mesh.node_id(nx, int(j)), 0), -total * w) for j, w in weights)
    bc = BoundarySpec(fixed=_edge_dofs(mesh, 0, 0), loads=loads)
    initial = None
    if strip is not None:
        yc = mesh.centroids()[:, 1]
        initial = np.where(np.abs(yc - Ly / 2) <= strip * Ly / 2, 1.0, 0.0)
    opts = dict(name="buckling", kind=ProblemKind.BUCKLING, mesh=mesh, bc=bc,
                material=MaterialConstants(E0=1.0, Emin=1e-6, nu=0.3),
                law=LawKind.SIMP, r_min=2.5 * mesh.h, V_max=0.25,
                eta=ContinuationSchedule(3.0, 0.2, 15, 6.0, start=100),
                beta=ContinuationSchedule(4.0, 2.0, 50, 24.0, start=350),
                rho_t=rho_t, optimizer="mma", max_iter=300, c_max_factor=2.5,
                eigen=EigenSettings(n_modes=16, q=12, alpha=16.0), initial_phi=initial)
    opts.update(kw)
    return ProblemSpec(**opts)


PRESETS = {
    "cantilever2d": cantilever2d,
    "cantilever3d": cantilever3d,
    "inverter": inverter,
    "nonlinear-cantilever": nonlinear_cantilever,
    "clamped-vibration": clamped_vibration,
    "column-buckling": column_buckling,
}
