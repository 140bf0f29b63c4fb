"""Proper orthogonal decomposition of snapshot matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class PodBasis:
    psi: np.ndarray  # (D, d), orthonormal columns
    singular_values: np.ndarray  # all min(D, s) values, descending
    n_flagged: int = 0  # trailing columns beyond the numerical rank

    @property
    def d(self) -> int:
        return self.psi.shape[1]

    def project(self, U: np.ndarray) -> np.ndarray:
        return self.psi.T @ U

    def reconstruct(self, y: np.ndarray) -> np.ndarray:
        return self.psi @ y


def numerical_rank(sigma: np.ndarray, rtol: float = 1e-12) -> int:
    if sigma.size == 0 or sigma[0] == 0:
        return 0
    return int(np.sum(sigma > rtol * sigma[0]))


def pod_fit(U: np.ndarray, d: int) -> PodBasis:
    """Leading ``d`` left singular vectors of ``U`` (thin SVD).

    Columns past the numerical rank are still returned (they span an
    arbitrary orthonormal complement) but counted in ``n_flagged`` so callers
    can truncate.
    """
    U = np.asarray(U, dtype=float)
    if not 1 <= d <= min(U.shape):
        raise ValueError(f"d={d} must lie in [1, {min(U.shape)}]")
    L, sigma, _ = np.linalg.svd(U, full_matrices=False)
    # fix the sign so that runs are reproducible across LAPACK builds
    signs = np.sign(L[np.argmax(np.abs(L), axis=0), np.arange(L.shape[1])])
    signs[signs == 0] = 1.0
    L = L * signs
    rank = numerical_rank(sigma)
    return PodBasis(psi=np.ascontiguousarray(L[:, :d]), singular_values=sigma,
                    n_flagged=max(0, d - rank))


def pod_tail(sigma: np.ndarray, d: int) -> float:
    return float(np.sqrt(np.sum(sigma[d:] ** 2)))
