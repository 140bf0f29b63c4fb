"""Lawson-Hanson active-set nonnegative least squares."""

from __future__ import annotations

import numpy as np


class NNLSError(RuntimeError):
    pass


def nnls(A: np.ndarray, b: np.ndarray, tol: float = 1e-10, max_iter: int | None = None):
    """Solve ``min ||A x - b||, x >= 0``. Returns ``(x, residual_norm)``.

    ``tol`` is relative: a free variable enters the passive set only if its
    dual value exceeds ``tol * ||A||_1 * ||b||_inf``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    max_iter = 3 * n if max_iter is None else max_iter
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    scale = max(np.abs(A).sum(axis=0).max(initial=0.0) * np.abs(b).max(initial=0.0), 1e-300)
    eps = tol * scale
    w = A.T @ (b - A @ x)
    rejected = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        candidates = np.where(~passive & ~rejected, w, -np.inf)
        j = int(np.argmax(candidates))
        if candidates[j] <= eps:
            break
        passive[j] = True
        while True:
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0):
                x = z
                break
            # step back to the boundary of the feasible set
            neg = passive & (z <= 0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > 1e-14 * max(1.0, np.abs(x).max())
            x[~passive] = 0.0
            if not passive.any():
                break
        # roundoff can make the entering variable drop out at once; do not retry it
        rejected[j] = not passive[j]
        w = A.T @ (b - A @ x)
    else:
        raise NNLSError(f"NNLS did not converge in {max_iter} iterations")
    return x, float(np.linalg.norm(A @ x - b))
