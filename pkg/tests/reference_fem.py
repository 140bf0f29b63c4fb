"""Loop-based reference implementation of the periodic RVE problem.

Deliberately written without any code from ``hyperrom.fem``: explicit loops
over elements and Gauss points, its own shape functions, its own periodic
node identification, dense matrices.
"""

import itertools

import numpy as np

CORNERS = [(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
           (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)]


def neo_hooke_P(F, mu, kappa):
    J = np.linalg.det(F)
    Finv_T = np.linalg.inv(F).T
    return mu * F - mu * Finv_T + 0.5 * kappa * (J * J - 1.0) * Finv_T


def tangent_fd(F, mu, kappa, h=1e-7):
    A = np.zeros((3, 3, 3, 3))
    for k, l in itertools.product(range(3), range(3)):
        E = np.zeros((3, 3))
        E[k, l] = h
        A[:, :, k, l] = (neo_hooke_P(F + E, mu, kappa) - neo_hooke_P(F - E, mu, kappa)) / (2 * h)
    return A


class Reference:
    def __init__(self, L, n, inclusions, mats):
        self.n = n
        h = L / n
        self.h = h
        self.elements = []
        for k, j, i in itertools.product(range(n), range(n), range(n)):
            nodes = []
            for c in CORNERS:
                ii, jj, kk = i + (c[0] + 1) // 2, j + (c[1] + 1) // 2, k + (c[2] + 1) // 2
                nodes.append((ii % n, jj % n, kk % n))
            centroid = np.array([i + 0.5, j + 0.5, k + 0.5]) * h
            mid = 0
            for (ctr, r, m) in inclusions:
                if np.linalg.norm(centroid - np.array(ctr)) < r:
                    mid = m
            self.elements.append((nodes, mats[mid]))
        # free nodes: all periodic images except (0,0,0), ordered x fastest
        self.node_index = {}
        for k, j, i in itertools.product(range(n), range(n), range(n)):
            if (i, j, k) != (0, 0, 0):
                self.node_index[(i, j, k)] = len(self.node_index)
        self.D = 3 * len(self.node_index)
        gp = 1 / np.sqrt(3)
        self.gauss = [(np.array(c) * gp, 1.0) for c in CORNERS]

    def shape_grad(self, xi):
        g = np.zeros((8, 3))
        for a, c in enumerate(CORNERS):
            f = [1 + xi[d] * c[d] for d in range(3)]
            g[a, 0] = c[0] * f[1] * f[2] / 8
            g[a, 1] = c[1] * f[0] * f[2] / 8
            g[a, 2] = c[2] * f[0] * f[1] / 8
        # cube of side h: dX/dxi = h/2
        return g * 2 / self.h, (self.h / 2) ** 3

    def dofs(self, node):
        if node == (0, 0, 0):
            return [None, None, None]
        b = 3 * self.node_index[node]
        return [b, b + 1, b + 2]

    def residual_stiffness(self, u, Fbar):
        g = np.zeros(self.D)
        K = np.zeros((self.D, self.D))
        for nodes, (mu, kappa) in self.elements:
            edofs = [d for nd in nodes for d in self.dofs(nd)]
            ue = np.array([0.0 if d is None else u[d] for d in edofs]).reshape(8, 3)
            for xi, w in self.gauss:
                dN, detJ = self.shape_grad(xi)
                F = Fbar + ue.T @ dN
                P = neo_hooke_P(F, mu, kappa)
                A = tangent_fd(F, mu, kappa)
                for a in range(8):
                    for i in range(3):
                        r = edofs[3 * a + i]
                        if r is None:
                            continue
                        g[r] += w * detJ * P[i] @ dN[a]
                        for b in range(8):
                            for k in range(3):
                                c = edofs[3 * b + k]
                                if c is None:
                                    continue
                                K[r, c] += w * detJ * dN[a] @ A[i, :, k, :] @ dN[b]
        return g, K

    def solve(self, Fbar, tol=1e-9):
        u = np.zeros(self.D)
        for _ in range(30):
            g, K = self.residual_stiffness(u, Fbar)
            if np.max(np.abs(g)) < tol:
                return u
            u -= np.linalg.solve(K, g)
        raise RuntimeError("reference Newton did not converge")

    def free_coords(self):
        out = np.zeros((self.D, 3))
        for (i, j, k), idx in self.node_index.items():
            out[3 * idx:3 * idx + 3] = np.array([i, j, k]) * self.h
        return out
