"""Design-to-density maps: hat filter, projections, interpolation laws and
their chain-rule transposes."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import product

import numpy as np
import scipy.sparse as sp

from .grid_fem import StructuredMesh

SENS_FILTER_FLOOR = 1e-3


class Scheme(str, Enum):
    SENSITIVITY = "A1"
    DENSITY = "A2"
    THRESHOLD = "A3"
    HEAVISIDE = "A4"


@dataclass(frozen=True, eq=False)
class FilterOperator:
    """Hat-weighted neighbourhood averaging on element centroids.

    ``H[e, i] = max(0, 1 - |x_e - x_i| / r_min)``; only strictly positive
    weights are stored, so ``H[e].indices`` is the neighbourhood of ``e``.
    """

    r_min: float
    H: sp.csr_matrix
    Hs: np.ndarray

    @property
    def size(self) -> int:
        return self.Hs.size

    def neighbors(self, e: int) -> np.ndarray:
        return self.H.indices[self.H.indptr[e]:self.H.indptr[e + 1]]

    def apply(self, phi: np.ndarray) -> np.ndarray:
        phi = _check_len(phi, self.size)
        return (self.H @ phi) / self.Hs

    def apply_transpose(self, g: np.ndarray) -> np.ndarray:
        g = _check_len(g, self.size)
        return self.H.T @ (g / self.Hs)


def _check_len(x, m):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != m:
        raise ValueError(f"field has length {x.shape[0]}, expected {m}")
    return x


def build_filter(mesh: StructuredMesh, r_min: float) -> FilterOperator:
    """Filter with radius ``r_min`` in physical length units."""
    if not r_min > 0:
        raise ValueError("filter radius must be positive")
    dims = np.array(mesh.dims)
    reach = int(np.ceil(r_min / mesh.h))
    idx = np.stack(np.unravel_index(np.arange(mesh.n_elements), dims[::-1])[::-1], axis=1)
    strides = np.cumprod(np.concatenate([[1], dims[:-1]]))
    rows, cols, vals = [], [], []
    for off in product(range(-reach, reach + 1), repeat=mesh.ndim):
        off = np.array(off)
        dist = mesh.h * np.sqrt(np.sum(off.astype(float) ** 2))
        w = 1.0 - dist / r_min
        if w <= 0:
            continue
        nb = idx + off
        ok = np.all((nb >= 0) & (nb < dims), axis=1)
        src = np.flatnonzero(ok)
        rows.append(src)
        cols.append(nb[ok] @ strides)
        vals.append(np.full(src.size, w))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    H = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_elements,) * 2)
    H.sort_indices()
    Hs = np.asarray(H.sum(axis=1)).ravel()
    return FilterOperator(float(r_min), H, Hs)


def apply_filter(filt: FilterOperator, phi: np.ndarray) -> np.ndarray:
    return filt.apply(phi)


def heaviside_project(mu: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """rho = 1 - exp(-beta mu) + mu exp(-beta), and d rho / d mu."""
    if beta < 0:
        raise ValueError("projection sharpness beta must be >= 0")
    mu = np.asarray(mu, dtype=float)
    eb = np.exp(-beta)
    rho = -np.expm1(-beta * mu) + mu * eb
    drho = beta * np.exp(-beta * mu) + eb
    return rho, drho


def threshold_project(mu: np.ndarray, beta: float, threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed step (tanh(b t) + tanh(b (mu - t))) / (tanh(b t) + tanh(b (1 - t))).

    Evaluated in an overflow-free factored form so that tiny positive inputs
    keep tiny positive outputs instead of cancelling to zero.
    """
    if beta < 0:
        raise ValueError("projection sharpness beta must be >= 0")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    mu = np.asarray(mu, dtype=float)
    if beta < 1e-8:
        return mu.copy(), np.ones_like(mu)
    b, t = beta, threshold
    d = mu - t
    ad = np.abs(d)
    # tanh(a)+tanh(c) = sinh(a+c)/(cosh a cosh c); factor out the exponentials
    num = -np.expm1(-2 * b * mu) * (1 + np.exp(-2 * b * (1 - t)))
    den = -np.expm1(-2 * b) * (1 + np.exp(-2 * b * ad))
    rho = np.exp(b * (d - ad)) * num / den
    # sech^2(x) = 4 e^{-2|x|} / (1 + e^{-2|x|})^2
    e2 = np.exp(-2 * b * ad)
    sech2 = 4 * e2 / (1 + e2) ** 2
    norm = np.tanh(b * t) + np.tanh(b * (1 - t))
    return rho, b * sech2 / norm


def project(mu: np.ndarray, beta: float, scheme: Scheme | str = Scheme.HEAVISIDE,
            threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    scheme = Scheme(scheme)
    if scheme is Scheme.HEAVISIDE:
        return heaviside_project(mu, beta)
    if scheme is Scheme.THRESHOLD:
        return threshold_project(mu, beta, threshold)
    mu = np.asarray(mu, dtype=float)
    return mu.copy(), np.ones_like(mu)


def chain_rule_backprop(filt: FilterOperator, drho_dmu: np.ndarray, dg_drho: np.ndarray) -> np.ndarray:
    """dg/dphi = H^T ((drho/dmu * dg/drho) / Hs)."""
    drho_dmu = _check_len(drho_dmu, filt.size)
    dg_drho = _check_len(dg_drho, filt.size)
    return filt.apply_transpose(drho_dmu * dg_drho)


def sensitivity_filter(filt: FilterOperator, phi: np.ndarray, dg: np.ndarray,
                       floor: float = SENS_FILTER_FLOOR) -> np.ndarray:
    phi = _check_len(phi, filt.size)
    dg = _check_len(dg, filt.size)
    return (filt.H @ (phi * dg)) / (np.maximum(phi, floor) * filt.Hs)


class LawKind(str, Enum):
    SIMP = "simp"
    SIMP_STRESS = "simp_stress"
    RAMP = "ramp"
    LINEAR = "linear"


@dataclass(frozen=True)
class InterpolationLaw:
    kind: LawKind = LawKind.SIMP
    E0: float = 1.0
    Emin: float = 0.0
    eta: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LawKind(self.kind))
        if self.eta < 0:
            raise ValueError("penalization exponent must be >= 0")

    def with_eta(self, eta: float) -> "InterpolationLaw":
        return InterpolationLaw(self.kind, self.E0, self.Emin, eta)


def interpolate(law: InterpolationLaw, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Property value and its derivative with respect to rho."""
    rho = np.asarray(rho, dtype=float)
    E0, Emin, eta = law.E0, law.Emin, law.eta
    if law.kind is LawKind.SIMP or law.kind is LawKind.SIMP_STRESS:
        base = 0.0 if law.kind is LawKind.SIMP_STRESS else Emin
        span = E0 if law.kind is LawKind.SIMP_STRESS else E0 - Emin
        val = base + span * rho**eta
        if eta == 0:
            return val, np.zeros_like(rho)
        with np.errstate(divide="ignore"):
            return val, span * eta * rho ** (eta - 1)
    if law.kind is LawKind.RAMP:
        den = 1 + eta * (1 - rho)
        return Emin + (E0 - Emin) * rho / den, (E0 - Emin) * (1 + eta) / den**2
    return E0 * rho, np.full_like(rho, E0)


def volume_fraction(rho: np.ndarray) -> tuple[float, np.ndarray]:
    rho = np.asarray(rho, dtype=float)
    return float(rho.mean()), np.full(rho.shape, 1.0 / rho.size)


def non_discreteness(rho: np.ndarray) -> float:
    rho = np.asarray(rho, dtype=float)
    return float(np.sum(4 * rho * (1 - rho)) / rho.size)


def inverse_projection(target: float, beta: float, scheme: Scheme | str = Scheme.HEAVISIDE,
                       threshold: float = 0.5) -> float:
    """Uniform design value whose projection equals ``target``."""
    from scipy.optimize import brentq

    if Scheme(scheme) in (Scheme.SENSITIVITY, Scheme.DENSITY) or beta == 0:
        return float(target)
    f = lambda x: project(np.array([x]), beta, scheme, threshold)[0][0] - target
    return float(brentq(f, 0.0, 1.0, xtol=1e-15, rtol=1e-15))


@dataclass(frozen=True, eq=False)
class DesignState:
    """Design variables and the densities they map to at one iteration."""

    phi: np.ndarray
    mu: np.ndarray
    rho: np.ndarray
    drho_dmu: np.ndarray
    beta: float
    eta: float
    scheme: Scheme = Scheme.HEAVISIDE

    @property
    def m(self) -> int:
        return int(self.phi.size)


def design_state(filt: FilterOperator, phi: np.ndarray, beta: float, eta: float,
                 scheme: Scheme | str = Scheme.HEAVISIDE, threshold: float = 0.5) -> DesignState:
    """Run phi through filter and projection (A1 skips both, so rho = phi)."""
    scheme = Scheme(scheme)
    phi = _check_len(phi, filt.size)
    if scheme is Scheme.SENSITIVITY:
        return DesignState(phi.copy(), phi.copy(), phi.copy(), np.ones_like(phi), beta, eta, scheme)
    mu = filt.apply(phi)
    rho, drho = project(mu, beta, scheme, threshold)
    return DesignState(phi.copy(), mu, rho, drho, beta, eta, scheme)


def backprop_design(filt: FilterOperator, state: DesignState, dg_drho: np.ndarray,
                    filter_sensitivity: bool = True, floor: float = SENS_FILTER_FLOOR) -> np.ndarray:
    """dg/dphi for the state's scheme.

    Under A1 rho = phi, so the exact gradient is ``dg_drho`` itself; the
    heuristic sensitivity filter is applied on top when ``filter_sensitivity``
    (objective sensitivities, not the volume gradient).
    """
    if state.scheme is Scheme.SENSITIVITY:
        dg_drho = _check_len(dg_drho, filt.size)
        return sensitivity_filter(filt, state.phi, dg_drho, floor) if filter_sensitivity else dg_drho.copy()
    return chain_rule_backprop(filt, state.drho_dmu, dg_drho)
