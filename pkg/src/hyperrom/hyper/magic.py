"""Greedy magic-point selection and the reduced integration domain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..fem import RVEProblem
from ..reduce.pod import pod_fit


class MagicPointError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class MagicPoints:
    indices: np.ndarray  # (m,) free DOF ids in selection order
    elements: np.ndarray  # E_m, sorted element ids touching a magic DOF
    dofs: np.ndarray  # I_m, sorted free DOF ids of all E_m elements

    @property
    def m(self) -> int:
        return len(self.indices)

    @property
    def local_indices(self) -> np.ndarray:
        """Position of each magic DOF inside I_m."""
        return np.searchsorted(self.dofs, self.indices)


def deim_indices(Omega: np.ndarray) -> np.ndarray:
    """Greedy interpolation indices for the columns of ``Omega`` (argmax of |.|)."""
    Omega = np.asarray(Omega, dtype=float)
    D, m = Omega.shape
    idx = np.zeros(m, dtype=np.int64)
    idx[0] = int(np.argmax(np.abs(Omega[:, 0])))
    for j in range(1, m):
        ZO = Omega[idx[:j], :j]
        try:
            c = np.linalg.solve(ZO, Omega[idx[:j], j])
        except np.linalg.LinAlgError as exc:
            raise MagicPointError(f"Z^T Omega singular at step {j}") from exc
        r = Omega[:, j] - Omega[:, :j] @ c
        r[idx[:j]] = 0.0  # exactly zero in exact arithmetic
        k = int(np.argmax(np.abs(r)))
        if r[k] == 0.0:
            raise MagicPointError(f"residual mode {j} is interpolated exactly; rank deficient")
        idx[j] = k
    return idx


def residual_modes(G: np.ndarray, m: int) -> np.ndarray:
    basis = pod_fit(G, m)
    if basis.n_flagged:
        raise MagicPointError(f"m={m} exceeds the numerical rank of the residual snapshots")
    return basis.psi


def reduced_domain(problem: RVEProblem, indices: np.ndarray) -> MagicPoints:
    edofs = problem.element_dofs
    hit = np.isin(edofs, indices).any(axis=1)
    elements = np.nonzero(hit)[0]
    dofs = np.unique(edofs[elements])
    dofs = dofs[dofs >= 0]
    return MagicPoints(np.asarray(indices, dtype=np.int64), elements, dofs)


def select_magic_points(problem: RVEProblem, G: np.ndarray, m: int):
    """Returns ``(MagicPoints, Omega)`` with Omega the m leading residual modes."""
    if m < 1:
        raise ValueError("m must be >= 1")
    Omega = residual_modes(G, m)
    return reduced_domain(problem, deim_indices(Omega)), Omega
