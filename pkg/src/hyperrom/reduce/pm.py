"""Quadratic polynomial manifold ``u = Vbar y + Vtilde Xi q(y)``, ``q(y) = vec(y (x) y)``.

Fit by alternating minimization: coefficients ``Xi`` by linear least squares
for fixed coordinates, then per-snapshot Gauss-Newton on ``y_i`` for fixed
``Xi``. Both bases stay at the POD modes of the snapshot matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .pod import pod_fit

log = logging.getLogger(__name__)


def quad(y: np.ndarray) -> np.ndarray:
    """``vec(y (x) y)``; entry ``i*d + j`` is ``y_i y_j``. Works column-wise on (d, s)."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return np.outer(y, y).ravel()
    d, s = y.shape
    return (y[:, None, :] * y[None, :, :]).reshape(d * d, s)


def quad_jacobian(y: np.ndarray) -> np.ndarray:
    """``d q / d y`` as a ``(d*d, d)`` matrix (product rule)."""
    y = np.asarray(y, dtype=float)
    col = y[:, None]
    eye = np.eye(len(y))
    return np.kron(eye, col) + np.kron(col, eye)


@dataclass(frozen=True, eq=False)
class PmModel:
    Vbar: np.ndarray  # (D, d)
    Vtilde: np.ndarray  # (D, dt)
    Xi: np.ndarray  # (dt, d*d)
    Y: np.ndarray  # (d, s) fitted coordinates of the snapshots
    history: tuple[float, ...]  # fit objective after each alternation (index 0: Xi = 0)
    flagged: np.ndarray  # snapshots whose Gauss-Newton update was rejected at the last sweep

    @property
    def d(self) -> int:
        return self.Vbar.shape[1]

    def reconstruct(self, y: np.ndarray) -> np.ndarray:
        return self.Vbar @ y + self.Vtilde @ (self.Xi @ quad(y))

    def tilde_coords(self, y: np.ndarray) -> np.ndarray:
        return self.Xi @ quad(y)


def pm_tangent(model: PmModel, y: np.ndarray) -> np.ndarray:
    return model.Vbar + model.Vtilde @ (model.Xi @ quad_jacobian(y))


def _fit_xi(R: np.ndarray, Q: np.ndarray, rcond: float, gamma: float) -> np.ndarray:
    # min ||R - Xi Q||_F^2 + gamma ||Xi||_F^2; minimum norm when gamma = 0
    # (q has repeated entries y_i y_j = y_j y_i)
    if gamma > 0:
        G = Q @ Q.T + gamma * np.eye(Q.shape[0])
        return np.linalg.solve(G, Q @ R.T).T
    sol, *_ = np.linalg.lstsq(Q.T, R.T, rcond=rcond)
    return sol.T


def _objective(a, b, Y, Xi, resid_perp, gamma=0.0):
    # ||u - Vbar y - Vtilde Xi q||^2 split into the three orthogonal parts
    fit = np.sum((a - Y) ** 2) + np.sum((b - Xi @ quad(Y)) ** 2) + resid_perp
    return float(fit + gamma * np.sum(Xi * Xi))


def pm_fit(U: np.ndarray, d: int, d_tilde: int, max_iters: int = 20, tol: float = 1e-10,
           gn_iters: int = 10, rcond: float = 1e-10, reg: float = 0.0) -> PmModel:
    """Alternating fit. ``reg`` adds a Tikhonov penalty ``gamma ||Xi||^2`` with
    ``gamma = reg * mean(diag(Q Q^T))`` fixed from the POD coordinates; the
    recorded history is then the penalized objective."""
    U = np.asarray(U, dtype=float)
    if d < 1 or d_tilde < 1 or d + d_tilde > min(U.shape):
        raise ValueError(f"need 1 <= d, d_tilde and d + d_tilde <= {min(U.shape)}")
    basis = pod_fit(U, d + d_tilde)
    Vbar = basis.psi[:, :d]
    Vtilde = basis.psi[:, d:]
    a = Vbar.T @ U  # (d, s)
    b = Vtilde.T @ U  # (dt, s)
    resid_perp = float(np.sum(U * U) - np.sum(a * a) - np.sum(b * b))
    resid_perp = max(resid_perp, 0.0)

    Y = a.copy()
    Xi = np.zeros((d_tilde, d * d))
    q0 = quad(a)
    gamma = reg * float(np.sum(q0 * q0)) / q0.shape[0] if reg > 0 else 0.0
    history = [_objective(a, b, Y, Xi, resid_perp)]
    flagged = np.zeros(U.shape[1], dtype=bool)
    eye = np.eye(d)
    for _ in range(max_iters):
        Xi = _fit_xi(b, quad(Y), rcond, gamma)

        flagged[:] = False
        for i in range(U.shape[1]):
            y = Y[:, i]
            r_a = a[:, i] - y
            r_b = b[:, i] - Xi @ quad(y)
            f = r_a @ r_a + r_b @ r_b
            improved = False
            for _gn in range(gn_iters):
                J = np.vstack([eye, Xi @ quad_jacobian(y)])
                r = np.concatenate([r_a, r_b])
                step, *_ = np.linalg.lstsq(J, r, rcond=None)
                y_new = y + step
                r_a_new = a[:, i] - y_new
                r_b_new = b[:, i] - Xi @ quad(y_new)
                f_new = r_a_new @ r_a_new + r_b_new @ r_b_new
                if not np.isfinite(f_new) or f_new > f:
                    break
                improved = improved or f_new < f
                done = f - f_new <= 1e-14 * max(f, 1e-300)
                y, r_a, r_b, f = y_new, r_a_new, r_b_new, f_new
                if done:
                    break
            if not improved and f > 0:
                flagged[i] = True
            Y[:, i] = y
        obj = _objective(a, b, Y, Xi, resid_perp, gamma)
        history.append(obj)
        if history[-2] - history[-1] < tol * max(history[0], 1e-300):
            break
    if flagged.any():
        log.debug("PM fit: %d snapshots kept previous coordinates", int(flagged.sum()))
    return PmModel(Vbar, Vtilde, Xi, Y, tuple(history), flagged)
