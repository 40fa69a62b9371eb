"""Detection of void elements and elimination of the DOFs they fully surround."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .grid_fem import StructuredMesh


class DisconnectionError(RuntimeError):
    """A load, spring, output or point-mass DOF ended up inside a removed region."""


@dataclass(frozen=True, eq=False)
class ActiveModel:
    """Analysis model for one iteration; never mutated after :func:`build_active_model`.

    ``free`` maps reduced -> full DOF ids (ascending) and ``full_to_reduced``
    is its inverse with -1 on fixed or eliminated DOFs.
    """

    rho_t: float | None
    active: np.ndarray
    eliminated: np.ndarray
    fixed: np.ndarray
    free: np.ndarray
    full_to_reduced: np.ndarray

    @property
    def n_active(self) -> int:
        return int(self.free.size)

    @property
    def n_active_elements(self) -> int:
        return int(self.active.sum())


def detect_and_zero(rho: np.ndarray, rho_t: float | None) -> tuple[np.ndarray, np.ndarray]:
    """Zero every density at or below the threshold and return the active mask.

    ``rho_t=None`` is the standard approach: nothing is removed.
    """
    rho = np.asarray(rho, dtype=float)
    if rho_t is None:
        return rho.copy(), np.ones(rho.shape, dtype=bool)
    if not 0.0 <= rho_t < 1.0:
        raise ValueError(f"removal threshold must lie in [0, 1), got {rho_t}")
    active = rho > rho_t
    return np.where(active, rho, 0.0), active


def build_active_model(mesh: StructuredMesh, active: np.ndarray, fixed_dofs: Iterable[int],
                       pinned_nodes: Iterable[int] = (), rho_t: float | None = None) -> ActiveModel:
    active = np.asarray(active, dtype=bool)
    if active.shape != (mesh.n_elements,):
        raise ValueError(f"active mask has shape {active.shape}, expected ({mesh.n_elements},)")
    touched = np.zeros(mesh.n_nodes, dtype=bool)
    touched[mesh.connectivity[active].ravel()] = True
    pinned = np.asarray(list(pinned_nodes), dtype=int)
    if pinned.size:
        touched[pinned] = True
    eliminated = np.repeat(~touched, mesh.dofs_per_node)
    fixed = np.zeros(mesh.n_dofs, dtype=bool)
    fixed_idx = np.asarray(list(fixed_dofs), dtype=int)
    if fixed_idx.size:
        fixed[fixed_idx] = True
    free = np.flatnonzero(~fixed & ~eliminated)
    full_to_reduced = np.full(mesh.n_dofs, -1, dtype=np.int64)
    full_to_reduced[free] = np.arange(free.size)
    for arr in (active, eliminated, fixed, free, full_to_reduced):
        arr.setflags(write=False)
    return ActiveModel(rho_t, active, eliminated, fixed, free, full_to_reduced)


def reduce_vector(model: ActiveModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != model.full_to_reduced.shape[0]:
        raise ValueError(f"full vector has length {x.shape[0]}, expected {model.full_to_reduced.shape[0]}")
    return x[model.free]


def expand_vector(model: ActiveModel, y: np.ndarray) -> np.ndarray:
    """Scatter a reduced vector to full length; fixed and eliminated DOFs get 0."""
    y = np.asarray(y)
    if y.shape[0] != model.n_active:
        raise ValueError(f"reduced vector has length {y.shape[0]}, expected {model.n_active}")
    out = np.zeros((model.full_to_reduced.shape[0],) + y.shape[1:], dtype=y.dtype)
    out[model.free] = y
    return out


def reintroduction_delta(previous: ActiveModel, current: ActiveModel) -> tuple[int, int]:
    """(elements reintroduced, elements newly removed) between two iterations."""
    if previous.active.shape != current.active.shape:
        raise ValueError("active models belong to different meshes")
    back = int(np.count_nonzero(current.active & ~previous.active))
    gone = int(np.count_nonzero(previous.active & ~current.active))
    return back, gone


def check_connected(model: ActiveModel, dofs: Iterable[int], what: str) -> None:
    """Raise :class:`DisconnectionError` if any of ``dofs`` was eliminated."""
    for dof in dofs:
        if model.eliminated[dof]:
            raise DisconnectionError(f"{what} DOF {dof} lies in a removed region")
