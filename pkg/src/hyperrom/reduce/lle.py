"""Locally linear embedding of snapshots and per-step local linear charts.

The chart for a load step is fitted in the coordinates of a lossless (or
truncated) POD basis ``phibar`` so that online work scales with ``d_bar``
rather than with the number of DOFs::

    ubar ~ phi_t y + ubar0,      u = phibar ubar
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.spatial.distance import cdist

from .pod import pod_fit


class ChartWarning(RuntimeWarning):
    pass


def knn(X: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other rows of ``X``; ties go to the lower index."""
    dist = cdist(X, X)
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def reconstruction_weights(X: np.ndarray, neighbors: np.ndarray, reg: float = 1e-3) -> np.ndarray:
    """Sum-to-one weights minimizing ``||x_i - sum_j w_ij x_j||`` over each neighborhood.

    ``reg`` adds ``reg * trace(C) / k`` to the local Gram ``C``. With
    ``reg = 0`` the constrained problem is solved by least squares on the
    differences themselves, which stays exact when ``C`` is singular.
    """
    s, k = neighbors.shape
    W = np.zeros((s, s))
    ones = np.ones(k)
    Q = _constant_complement(k)
    for i in range(s):
        Z = X[neighbors[i]] - X[i]
        C = Z @ Z.T
        if reg > 0:
            tr = np.trace(C)
            C = C + (reg * tr / k if tr > 0 else reg) * np.eye(k)
            w = np.linalg.solve(C, ones)
        else:
            # w = 1/k + Q z with Q spanning the complement of the ones vector
            rhs = -Z.T @ (ones / k)
            z = np.linalg.lstsq(Z.T @ Q, rhs, rcond=None)[0]
            w = ones / k + Q @ z
        W[i, neighbors[i]] = w / w.sum()
    return W


def _constant_complement(s: int) -> np.ndarray:
    """Orthonormal basis (s, s-1) of the complement of the constant vector."""
    v = np.full(s, 1.0 / np.sqrt(s))
    w = -v.copy()
    w[0] += 1.0
    w /= np.linalg.norm(w)
    H = np.eye(s) - 2.0 * np.outer(w, w)  # Householder: H e1 = v
    return H[:, 1:]


def lle_embedding(W: np.ndarray, d: int) -> np.ndarray:
    """Bottom non-constant eigenvectors of ``(I-W)^T (I-W)``, unit covariance, (d, s)."""
    s = W.shape[0]
    IW = np.eye(s) - W
    M = IW.T @ IW
    Q = _constant_complement(s)
    vals, vecs = eigh(Q.T @ M @ Q, subset_by_index=(0, d - 1))
    Y = (Q @ vecs).T * np.sqrt(s)
    # deterministic sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(Y), axis=1)
    Y *= np.sign(Y[np.arange(d), idx])[:, None]
    return Y


@dataclass(frozen=True, eq=False)
class LleModel:
    neighbors: np.ndarray  # (s, k) k-NN graph
    W: np.ndarray  # (s, s)
    Y: np.ndarray  # (d, s)
    phibar: np.ndarray  # (D, d_bar)
    Ybar: np.ndarray  # (d_bar, s)
    U: np.ndarray  # (D, s)
    params: np.ndarray  # (s, 3, 3)

    @property
    def d(self) -> int:
        return self.Y.shape[0]

    @property
    def d_bar(self) -> int:
        return self.phibar.shape[1]

    @property
    def s(self) -> int:
        return self.Y.shape[1]


def lle_fit(U: np.ndarray, params: np.ndarray, k: int, d: int, d_bar: int | None = None,
            reg: float = 1e-3) -> LleModel:
    U = np.asarray(U, dtype=float)
    params = np.asarray(params, dtype=float).reshape(-1, 3, 3)
    D, s = U.shape
    if params.shape[0] != s:
        raise ValueError("params must align with snapshot columns")
    if not (k < s and 1 <= d <= k):
        raise ValueError(f"need d <= k < s, got d={d}, k={k}, s={s}")
    d_bar = min(s, D) if d_bar is None else d_bar
    if not 1 <= d_bar <= min(s, D):
        raise ValueError(f"d_bar must lie in [1, {min(s, D)}]")
    phibar = pod_fit(U, d_bar).psi
    Ybar = phibar.T @ U
    # distances in intermediate coordinates equal those in R^D for a lossless basis
    X = Ybar.T if d_bar == min(s, D) else U.T
    nbrs = knn(X, k)
    W = reconstruction_weights(X, nbrs, reg)
    Y = lle_embedding(W, d)
    return LleModel(nbrs, W, Y, phibar, Ybar, U, params)


@dataclass(frozen=True, eq=False)
class LocalChart:
    """Chart ``u = phibar (phi_t y + u0_bar)``; ``phi`` and ``u0`` are full-space views."""

    phi_t: np.ndarray  # (d_bar, d)
    u0_bar: np.ndarray  # (d_bar,)
    neighbor_ids: np.ndarray
    phibar: np.ndarray
    normal_residual: float  # relative residual of the chart normal equations
    ridge: float = 0.0

    @property
    def phi(self) -> np.ndarray:
        return self.phibar @ self.phi_t

    @property
    def u0(self) -> np.ndarray:
        return self.phibar @ self.u0_bar

    @property
    def d(self) -> int:
        return self.phi_t.shape[1]


def fit_chart(Ybar_N: np.ndarray, Y_N: np.ndarray, eps: float = 1e-10, cond_max: float = 1e12):
    """Centered least-squares map ``Y_N -> Ybar_N``. Returns (phi_t, u0_bar, residual, ridge)."""
    ym = Y_N.mean(axis=1)
    ybm = Ybar_N.mean(axis=1)
    Yc = Y_N - ym[:, None]
    Ybc = Ybar_N - ybm[:, None]
    G = Yc @ Yc.T
    R = Ybc @ Yc.T
    ridge = 0.0
    d = G.shape[0]
    if np.linalg.cond(G) > cond_max:
        ridge = eps * np.trace(G) / d if np.trace(G) > 0 else eps
        warnings.warn(f"degenerate chart neighborhood, ridge {ridge:.3e} added", ChartWarning,
                      stacklevel=3)
        G = G + ridge * np.eye(d)
    phi_t = np.linalg.solve(G, R.T).T
    u0_bar = ybm - phi_t @ ym
    res = phi_t @ G - R
    scale = max(np.linalg.norm(R), np.linalg.norm(phi_t) * np.linalg.norm(G), 1e-300)
    return phi_t, u0_bar, float(np.linalg.norm(res) / scale), ridge


def chart_neighbors(params: np.ndarray, query: np.ndarray, N: int) -> np.ndarray:
    dist = np.sqrt(np.sum((params - np.asarray(query).reshape(1, 3, 3)) ** 2, axis=(1, 2)))
    return np.argsort(dist, kind="stable")[:N]


def local_chart(model: LleModel, query, N: int | None = None) -> LocalChart:
    N = 2 * model.d if N is None else N
    if not model.d + 1 <= N <= model.s:
        raise ValueError(f"N must lie in [d+1, s] = [{model.d + 1}, {model.s}]")
    ids = chart_neighbors(model.params, query, N)
    phi_t, u0_bar, res, ridge = fit_chart(model.Ybar[:, ids], model.Y[:, ids])
    return LocalChart(phi_t, u0_bar, ids, model.phibar, res, ridge)


def embed_init_bar(chart: LocalChart, ubar_prev: np.ndarray) -> np.ndarray:
    """Chart coordinates closest to ``ubar_prev`` (intermediate coordinates)."""
    G = chart.phi_t.T @ chart.phi_t
    rhs = chart.phi_t.T @ (np.asarray(ubar_prev) - chart.u0_bar)
    try:
        return cho_solve(cho_factor(G), rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(chart.phi_t, np.asarray(ubar_prev) - chart.u0_bar, rcond=None)[0]


def embed_init(chart: LocalChart, u_prev: np.ndarray) -> np.ndarray:
    """``argmin_y ||phi y + u0 - u_prev||``; equal to the intermediate problem since phibar is orthonormal."""
    return embed_init_bar(chart, chart.phibar.T @ np.asarray(u_prev))
