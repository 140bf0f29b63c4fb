"""Error metrics and manifold diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist


@dataclass(frozen=True)
class ErrorResult:
    percent: float | None  # None when any state diverged
    n_diverged: int
    n_states: int


def error_metric(rom, fom, diverged=None) -> ErrorResult:
    """Mean relative Euclidean error in percent over aligned solution lists.

    If any ROM state diverged the metric is undefined and only the count is
    returned.
    """
    rom = [np.asarray(r, dtype=float).ravel() for r in rom]
    fom = [np.asarray(f, dtype=float).ravel() for f in fom]
    if len(rom) != len(fom):
        raise ValueError("solution lists are not aligned")
    n_div = 0 if diverged is None else int(np.sum(diverged))
    if n_div:
        return ErrorResult(None, n_div, len(fom))
    rel = []
    for r, f in zip(rom, fom):
        nf = np.linalg.norm(f)
        if nf == 0:
            raise ValueError("reference solution with zero norm")
        rel.append(np.linalg.norm(r - f) / nf)
    return ErrorResult(100.0 * float(np.mean(rel)), 0, len(fom))


def eig_decay(U: np.ndarray) -> np.ndarray:
    """Eigenvalues of the snapshot correlation matrix ``U^T U``, descending."""
    U = np.asarray(U, dtype=float)
    if U.shape[1] < 3:
        raise ValueError("need at least 3 snapshots")
    vals = np.linalg.eigvalsh(U.T @ U)[::-1]
    return np.maximum(vals, 0.0)


@dataclass(frozen=True)
class CorrelationCurve:
    r: np.ndarray  # radii with a nonzero pair count
    C: np.ndarray
    slope: np.ndarray  # d log C / d log r at r (centered differences; one-sided at the ends)


def correlation_dimension(U: np.ndarray, r_grid) -> CorrelationCurve:
    """Pair-counting correlation sum of the columns of ``U`` and its log-log slope."""
    U = np.asarray(U, dtype=float)
    s = U.shape[1]
    if s < 3:
        raise ValueError("need at least 3 snapshots")
    dist = np.sort(pdist(U.T))
    r_grid = np.asarray(r_grid, dtype=float)
    counts = np.searchsorted(dist, r_grid, side="left")  # pairs with distance < r
    keep = counts > 0
    r = r_grid[keep]
    C = 2.0 * counts[keep] / (s * (s - 1))
    if len(r) < 2:
        return CorrelationCurve(r, C, np.full(len(r), np.nan))
    slope = np.gradient(np.log(C), np.log(r))
    return CorrelationCurve(r, C, slope)
