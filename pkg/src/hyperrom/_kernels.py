"""Compiled point and element kernels (numba).

The numpy formulations in ``material`` and ``hyper.kernel`` are the
reference; these produce the same numbers to roundoff and are used by
default.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, fastmath=False)
def neo_hooke_points(F, mu, kappa, stab, need_A, P, A):
    """In-place P (N,3,3) and A (N,3,3,3,3) for N points. Returns -1 or the first inverted point."""
    n = F.shape[0]
    H = np.empty((3, 3))
    for p in range(n):
        f = F[p]
        c00 = f[1, 1] * f[2, 2] - f[1, 2] * f[2, 1]
        c01 = f[1, 2] * f[2, 0] - f[1, 0] * f[2, 2]
        c02 = f[1, 0] * f[2, 1] - f[1, 1] * f[2, 0]
        J = f[0, 0] * c00 + f[0, 1] * c01 + f[0, 2] * c02
        if not J > 0.0:
            return p
        inv = 1.0 / J
        # H = F^-T = cofactor(F) / J
        H[0, 0] = c00 * inv
        H[0, 1] = c01 * inv
        H[0, 2] = c02 * inv
        H[1, 0] = (f[0, 2] * f[2, 1] - f[0, 1] * f[2, 2]) * inv
        H[1, 1] = (f[0, 0] * f[2, 2] - f[0, 2] * f[2, 0]) * inv
        H[1, 2] = (f[0, 1] * f[2, 0] - f[0, 0] * f[2, 1]) * inv
        H[2, 0] = (f[0, 1] * f[1, 2] - f[0, 2] * f[1, 1]) * inv
        H[2, 1] = (f[0, 2] * f[1, 0] - f[0, 0] * f[1, 2]) * inv
        H[2, 2] = (f[0, 0] * f[1, 1] - f[0, 1] * f[1, 0]) * inv
        m = mu[p]
        c = 0.5 * kappa[p] * (J * J - 1.0) - m * stab[p]
        for i in range(3):
            for j in range(3):
                P[p, i, j] = m * f[i, j] + c * H[i, j]
        if need_A:
            kj2 = kappa[p] * J * J
            for i in range(3):
                for j in range(3):
                    hij = kj2 * H[i, j]
                    for k in range(3):
                        for l in range(3):
                            v = hij * H[k, l] - c * H[i, l] * H[k, j]
                            if i == k and j == l:
                                v += m
                            A[p, i, j, k, l] = v
    return -1


@njit(cache=True)
def magic_stiffness_rows(dN, wdN_t, e_t, comp_t, A, pe, rows):
    """``rows[t, q] = sum_g sum_d wdN_t[t,g,d] sum_ab A[e,g,c,d,a,b] (B phi)[e,g,a,b,q]``.

    ``pe`` holds the element basis values (E, 8, 3, k) with ``(B phi)[a, b] =
    sum_k dN[k, b] pe[k, a]``. Per triple the tangent is first contracted to
    a 24-vector ``M[k, a]`` summed over Gauss points, then applied to ``pe``.
    """
    ng = dN.shape[1]
    kq = pe.shape[3]
    nt = e_t.shape[0]
    S = np.empty((3, 3))
    M = np.empty((8, 3))
    for t in range(nt):
        e = e_t[t]
        c = comp_t[t]
        M[:, :] = 0.0
        for g in range(ng):
            for a in range(3):
                for b in range(3):
                    S[a, b] = (wdN_t[t, g, 0] * A[e, g, c, 0, a, b]
                               + wdN_t[t, g, 1] * A[e, g, c, 1, a, b]
                               + wdN_t[t, g, 2] * A[e, g, c, 2, a, b])
            for k in range(8):
                d0 = dN[e, g, k, 0]
                d1 = dN[e, g, k, 1]
                d2 = dN[e, g, k, 2]
                for a in range(3):
                    M[k, a] += S[a, 0] * d0 + S[a, 1] * d1 + S[a, 2] * d2
        for q in range(kq):
            rows[t, q] = 0.0
        for k in range(8):
            for a in range(3):
                mka = M[k, a]
                for q in range(kq):
                    rows[t, q] += mka * pe[e, k, a, q]
