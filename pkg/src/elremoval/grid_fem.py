"""Structured Q4/H8 grids, element matrices, active-set assembly and direct solves."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    import cvxopt
    import cvxopt.cholmod

    _HAVE_CHOLMOD = True
except ImportError:  # pragma: no cover
    _HAVE_CHOLMOD = False

log = logging.getLogger(__name__)

GAUSS_1D = np.array([-1.0, 1.0]) / np.sqrt(3.0)


class InvalidSpecError(ValueError):
    pass


class SingularSystemError(RuntimeError):
    """Raised when a factorization hits a (numerically) zero pivot.

    ``pivot`` is the row of the reduced system where the breakdown was
    located, or ``None`` when it could not be pinned down.
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


@dataclass(frozen=True)
class MaterialConstants:
    E0: float = 1.0
    Emin: float = 0.0
    nu: float = 0.3
    density: float = 1.0

    def __post_init__(self):
        if self.E0 <= 0:
            raise InvalidSpecError("E0 must be positive")
        if not 0 <= self.Emin < self.E0:
            raise InvalidSpecError("Emin must lie in [0, E0)")
        if not -1.0 < self.nu < 0.5:
            raise InvalidSpecError("Poisson ratio must lie in (-1, 0.5)")
        if self.density < 0:
            raise InvalidSpecError("mass density must be non-negative")

    def lame(self, ndim: int = 2) -> tuple[float, float]:
        """Lamé pair (lambda, mu); 2D uses the plane-stress reduction."""
        E, nu = self.E0, self.nu
        mu = E / (2 * (1 + nu))
        if ndim == 2:
            lam = E * nu / (1 - nu**2)
        else:
            lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        return lam, mu


@dataclass(frozen=True)
class BoundarySpec:
    """Supports, loads, springs and nonstructural masses, all on full DOF ids."""

    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    loads: tuple[tuple[int, float], ...] = ()
    springs: tuple[tuple[int, float], ...] = ()
    point_masses: tuple[tuple[int, float], ...] = ()  # (node, mass)
    output_dof: int | None = None

    def validate(self, n_dofs: int, n_nodes: int) -> None:
        fixed = np.asarray(self.fixed, dtype=int)
        if fixed.size and (fixed.min() < 0 or fixed.max() >= n_dofs):
            raise InvalidSpecError("fixed DOF out of range")
        for dof, _ in self.loads:
            if not 0 <= dof < n_dofs:
                raise InvalidSpecError(f"load on invalid DOF {dof}")
        for dof, k in self.springs:
            if not 0 <= dof < n_dofs:
                raise InvalidSpecError(f"spring on invalid DOF {dof}")
            if k <= 0:
                raise InvalidSpecError("spring stiffness must be positive")
        for node, mass in self.point_masses:
            if not 0 <= node < n_nodes:
                raise InvalidSpecError(f"point mass on invalid node {node}")
            if mass < 0:
                raise InvalidSpecError("point mass must be non-negative")
        if self.output_dof is not None and not 0 <= self.output_dof < n_dofs:
            raise InvalidSpecError("output DOF out of range")

    def force_vector(self, n_dofs: int) -> np.ndarray:
        f = np.zeros(n_dofs)
        for dof, value in self.loads:
            f[dof] += value
        return f


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    """Uniform grid of Q4 (2D) or H8 (3D) elements.

    Nodes and elements are numbered lexicographically with x fastest,
    then y, then z. DOF ``d`` of node ``n`` is ``n * dofs_per_node + d``.
    """

    dims: tuple[int, ...]
    h: float
    dofs_per_node: int
    connectivity: np.ndarray
    edofs: np.ndarray

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.dims))

    @property
    def node_dims(self) -> tuple[int, ...]:
        return tuple(d + 1 for d in self.dims)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_dims))

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.dofs_per_node

    def node_id(self, *idx: int) -> int:
        nid, stride = 0, 1
        for i, n in zip(idx, self.node_dims):
            if not 0 <= i < n:
                raise IndexError(f"node index {idx} outside grid")
            nid += i * stride
            stride *= n
        return nid

    def node_index(self, nid: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(nid, self.node_dims[::-1])[::-1])

    def dof(self, node: int, comp: int) -> int:
        return node * self.dofs_per_node + comp

    def node_coords(self) -> np.ndarray:
        axes = [np.arange(n) * self.h for n in self.node_dims]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel(order="F") for g in grids], axis=1)

    def centroids(self) -> np.ndarray:
        axes = [(np.arange(n) + 0.5) * self.h for n in self.dims]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel(order="F") for g in grids], axis=1)

    def element_index(self, *idx: int) -> int:
        eid, stride = 0, 1
        for i, n in zip(idx, self.dims):
            eid += i * stride
            stride *= n
        return eid

    def nodes_where(self, axis: int, index: int) -> np.ndarray:
        """Ids of all nodes with grid coordinate ``index`` along ``axis``."""
        ids = np.arange(self.n_nodes).reshape(self.node_dims[::-1])
        sl = [slice(None)] * self.ndim
        sl[self.ndim - 1 - axis] = index
        return np.sort(ids[tuple(sl)].ravel())


def build_mesh(dims: Sequence[int], h: float = 1.0, dofs_per_node: int | None = None) -> StructuredMesh:
    dims = tuple(int(d) for d in dims)
    if len(dims) not in (2, 3):
        raise InvalidSpecError("only 2D and 3D grids are supported")
    if any(d < 1 for d in dims):
        raise InvalidSpecError(f"grid dimensions must be >= 1, got {dims}")
    if not h > 0:
        raise InvalidSpecError("element size must be positive")
    dpn = len(dims) if dofs_per_node is None else int(dofs_per_node)
    if dpn < 1:
        raise InvalidSpecError("dofs_per_node must be >= 1")

    nn = [d + 1 for d in dims]
    if len(dims) == 2:
        nx, ny = dims
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
        n0 = (i + j * nn[0]).ravel()
        conn = np.stack([n0, n0 + 1, n0 + 1 + nn[0], n0 + nn[0]], axis=1)
    else:
        nx, ny, nz = dims
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        n0 = (i + nn[0] * (j + nn[1] * k)).ravel()
        sxy = nn[0] * nn[1]
        base = np.stack([n0, n0 + 1, n0 + 1 + nn[0], n0 + nn[0]], axis=1)
        conn = np.concatenate([base, base + sxy], axis=1)
    conn = conn.astype(np.int64)
    edofs = (conn[:, :, None] * dpn + np.arange(dpn)).reshape(conn.shape[0], -1)
    return StructuredMesh(dims, float(h), dpn, conn, edofs)


# -- reference element -----------------------------------------------------

def _corner_signs(ndim: int) -> np.ndarray:
    q4 = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    if ndim == 2:
        return q4
    lo = np.hstack([q4, -np.ones((4, 1))])
    hi = np.hstack([q4, np.ones((4, 1))])
    return np.vstack([lo, hi])


@lru_cache(maxsize=None)
def _gauss_data(ndim: int, h: float):
    """Shape values N (ngp, nen), physical gradients dN (ngp, nen, ndim) and
    integration weights times det J (ngp,) for an axis-aligned cube of size h."""
    signs = _corner_signs(ndim)
    pts = np.array(np.meshgrid(*([GAUSS_1D] * ndim), indexing="ij")).reshape(ndim, -1).T
    N = np.prod(0.5 * (1 + pts[:, None, :] * signs[None]), axis=2)
    dN = np.empty((len(pts), len(signs), ndim))
    for d in range(ndim):
        other = [o for o in range(ndim) if o != d]
        fac = 0.5 * signs[None, :, d]
        for o in other:
            fac = fac * 0.5 * (1 + pts[:, None, o] * signs[None, :, o])
        dN[:, :, d] = fac * (2.0 / h)
    w = np.full(len(pts), (h / 2.0) ** ndim)
    N.setflags(write=False)
    dN.setflags(write=False)
    w.setflags(write=False)
    return N, dN, w


def gauss_data(ndim: int, h: float):
    return _gauss_data(int(ndim), float(h))


def strain_matrices(ndim: int, h: float) -> np.ndarray:
    """Engineering-strain B matrices at the Gauss points, shape (ngp, nvoigt, nen*ndim).

    Voigt order is (xx, yy, xy) in 2D and (xx, yy, zz, yz, xz, xy) in 3D.
    """
    _, dN, _ = gauss_data(ndim, h)
    ngp, nen, _ = dN.shape
    if ndim == 2:
        B = np.zeros((ngp, 3, 2 * nen))
        B[:, 0, 0::2] = dN[:, :, 0]
        B[:, 1, 1::2] = dN[:, :, 1]
        B[:, 2, 0::2] = dN[:, :, 1]
        B[:, 2, 1::2] = dN[:, :, 0]
    else:
        B = np.zeros((ngp, 6, 3 * nen))
        for d in range(3):
            B[:, d, d::3] = dN[:, :, d]
        B[:, 3, 1::3] = dN[:, :, 2]
        B[:, 3, 2::3] = dN[:, :, 1]
        B[:, 4, 0::3] = dN[:, :, 2]
        B[:, 4, 2::3] = dN[:, :, 0]
        B[:, 5, 0::3] = dN[:, :, 1]
        B[:, 5, 1::3] = dN[:, :, 0]
    return B


def elasticity_matrix(ndim: int, nu: float, E: float = 1.0) -> np.ndarray:
    """Plane-stress (2D) or isotropic 3D constitutive matrix in engineering Voigt form."""
    if ndim == 2:
        return E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


def _kind_ndim(kind: str | int) -> int:
    if kind in ("Q4", 2):
        return 2
    if kind in ("H8", 3):
        return 3
    raise InvalidSpecError(f"unknown element kind {kind!r}")


def element_stiffness(kind: str | int, h: float, nu: float, thickness: float = 1.0) -> np.ndarray:
    """Unit-modulus element stiffness K_e0 by full Gauss integration."""
    ndim = _kind_ndim(kind)
    if not -1.0 < nu < 0.5:
        raise InvalidSpecError("Poisson ratio must lie in (-1, 0.5)")
    _, _, w = gauss_data(ndim, h)
    B = strain_matrices(ndim, h)
    D = elasticity_matrix(ndim, nu)
    Ke = np.einsum("g,gia,ij,gjb->ab", w, B, D, B)
    if ndim == 2:
        Ke *= thickness
    return 0.5 * (Ke + Ke.T)


def element_mass(kind: str | int, h: float, density: float = 1.0, thickness: float = 1.0,
                 lumped: bool = False) -> np.ndarray:
    """Consistent (or row-sum lumped) element mass matrix for unit relative density."""
    ndim = _kind_ndim(kind)
    N, _, w = gauss_data(ndim, h)
    Ms = np.einsum("g,ga,gb->ab", w, N, N) * density
    if ndim == 2:
        Ms *= thickness
    if lumped:
        Ms = np.diag(Ms.sum(axis=1))
    return np.kron(Ms, np.eye(ndim))


# -- assembly ---------------------------------------------------------------

def assemble(mesh: StructuredMesh, model, element_matrix: np.ndarray,
             scale: np.ndarray | None = None) -> sp.csc_matrix:
    """Assemble active elements into the reduced (free, non-eliminated) system.

    ``element_matrix`` is either one matrix shared by all elements or a stack
    with one matrix per active element (in ascending element order).
    ``scale`` multiplies each element's matrix; it is indexed by full element id.
    """
    act = np.flatnonzero(model.active)
    n = model.n_active
    if model.active.shape[0] != mesh.n_elements or model.full_to_reduced.shape[0] != mesh.n_dofs:
        raise IndexError("active model does not match mesh")
    nd = mesh.edofs.shape[1]
    if act.size == 0 or n == 0:
        return sp.csc_matrix((n, n))
    red = model.full_to_reduced[mesh.edofs[act]]
    rows = np.repeat(red, nd, axis=1).ravel()
    cols = np.tile(red, (1, nd)).ravel()
    if element_matrix.ndim == 2:
        s = np.ones(act.size) if scale is None else np.asarray(scale)[act]
        vals = (s[:, None] * element_matrix.ravel()[None, :]).ravel()
    else:
        if element_matrix.shape[0] != act.size:
            raise IndexError("per-element matrices do not match the active set")
        em = element_matrix if scale is None else element_matrix * np.asarray(scale)[act, None, None]
        vals = em.reshape(act.size, -1).ravel()
    keep = (rows >= 0) & (cols >= 0)
    K = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsc()
    K.sum_duplicates()
    return K


class Factorization:
    """Direct factorization of a symmetric reduced system with residual-checked solves.

    Positive definite systems go through CHOLMOD (via cvxopt); anything else,
    and every breakdown diagnosis, goes through SuperLU.
    """

    RESIDUAL_TOL = 1e-10
    FAIL_TOL = 1e-6

    def __init__(self, K: sp.spmatrix, spd: bool = True):
        K = sp.csc_matrix(K)
        if K.shape[0] == 0:
            raise SingularSystemError("empty system: every DOF was removed or fixed", pivot=None)
        self.K = K
        self.n = K.shape[0]
        self._chol = None
        self._lu = None
        zero = np.flatnonzero(K.diagonal() == 0.0)
        if zero.size:
            raise SingularSystemError(f"zero diagonal at reduced row {zero[0]}", pivot=int(zero[0]))
        if spd and _HAVE_CHOLMOD:
            try:
                self._chol = _cholmod_factor(K)
            except ArithmeticError:
                log.debug("CHOLMOD rejected the matrix, falling back to LU")
        if self._chol is None:
            self._lu_factor()

    def _lu_factor(self):
        try:
            self._lu = spla.splu(self.K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SingularSystemError(f"factorization failed: {exc}", pivot=None) from exc
        udiag = np.abs(self._lu.U.diagonal())
        bad = np.flatnonzero(~np.isfinite(udiag) | (udiag <= 1e-300))
        if bad.size:
            col = int(np.flatnonzero(self._lu.perm_c == bad[0])[0])
            raise SingularSystemError(f"zero pivot at reduced row {col}", pivot=col)

    def _raw_solve(self, b: np.ndarray) -> np.ndarray:
        if self._chol is not None:
            rhs = cvxopt.matrix(np.array(b, dtype=float, order="F").reshape(self.n, -1))
            cvxopt.cholmod.solve(self._chol, rhs)
            return np.array(rhs).reshape(b.shape)
        return self._lu.solve(b)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"right-hand side has length {b.shape[0]}, system has {self.n}")
        x = self._raw_solve(b)
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return x
        for _ in range(3):
            if not np.all(np.isfinite(x)):
                raise SingularSystemError("non-finite solution (singular system)", pivot=self._worst_pivot())
            r = b - self.K @ x
            if np.linalg.norm(r) <= self.RESIDUAL_TOL * bnorm:
                return x
            x = x + self._raw_solve(r)
        rel = np.linalg.norm(b - self.K @ x) / bnorm
        if not np.isfinite(rel) or rel > self.FAIL_TOL:
            raise SingularSystemError(f"relative residual {rel:.3e} after refinement", pivot=self._worst_pivot())
        if rel > self.RESIDUAL_TOL:
            log.warning("linear solve residual %.3e above %.0e", rel, self.RESIDUAL_TOL)
        return x

    def _worst_pivot(self) -> int | None:
        if self._lu is None:
            try:
                self._lu_factor()
            except SingularSystemError as exc:
                return exc.pivot
        udiag = np.abs(self._lu.U.diagonal())
        k = int(np.argmin(udiag))
        return int(np.flatnonzero(self._lu.perm_c == k)[0])


def _cholmod_factor(K: sp.csc_matrix):
    Kc = sp.tril(K, format="coo")
    A = cvxopt.spmatrix(Kc.data, Kc.row.astype(int), Kc.col.astype(int), K.shape)
    F = cvxopt.cholmod.symbolic(A)
    cvxopt.cholmod.numeric(A, F)
    return F


def solve_linear(K: sp.spmatrix, f: np.ndarray) -> np.ndarray:
    return Factorization(K).solve(f)
