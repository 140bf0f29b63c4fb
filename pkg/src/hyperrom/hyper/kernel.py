"""Element kernel restricted to the reduced integration domain.

Only the residual rows belonging to magic DOFs are formed. Each magic DOF
``j`` receives contributions from (element, local node, component)
triples; the kernel evaluates those triples and sums them per ``j``.
All arrays live on ``E_m`` / ``I_m``; nothing here has length D.
"""

from __future__ import annotations

import numpy as np

from .._kernels import magic_stiffness_rows
from ..fem import VOIGT, RVEProblem
from ..material import neo_hooke
from .magic import MagicPoints


class HyperKernel:
    def __init__(self, problem: RVEProblem, magic: MagicPoints, backend: str = "numba"):
        self.backend = backend
        E = magic.elements
        mesh = problem.mesh
        self.n_elem = len(E)
        self.n_dofs = len(magic.dofs)
        self.m = magic.m
        self.dN = np.ascontiguousarray(mesh.dNdX[E])  # (E, G, 8, 3)
        self.w = mesh.detJw[E]  # (E, G)
        ng = self.w.shape[1]
        self.mu = np.repeat(problem.mu_e[E], ng).reshape(-1, ng)
        self.kappa = np.repeat(problem.kappa_e[E], ng).reshape(-1, ng)
        self.stab = np.repeat(problem.stab_e[E], ng).reshape(-1, ng)
        # element DOFs as positions in I_m; -1 (anchored) points at a trailing zero
        glob = problem.element_dofs[E]
        loc = np.searchsorted(magic.dofs, glob)
        self.edofs = np.where(glob >= 0, loc, self.n_dofs)  # (E, 24)

        pos = {int(dof): j for j, dof in enumerate(magic.indices)}
        trip = [(pos[int(dof)], e, r) for e in range(len(E)) for r, dof in enumerate(glob[e])
                if int(dof) in pos]
        trip.sort()
        trip = np.array(trip, dtype=np.int64)
        j_t, self.e_t, r_t = trip[:, 0], trip[:, 1], trip[:, 2]
        self.node_t, self.comp_t = r_t // 3, r_t % 3
        self.offsets = np.searchsorted(j_t, np.arange(self.m))
        # w_g dN_k/dX_b for each triple: (t, G, 3)
        self.wdN_t = self.w[self.e_t][:, :, None] * self.dN[self.e_t, :, self.node_t, :]

    @property
    def n_triples(self) -> int:
        return len(self.e_t)

    def _element_fields(self, u_Im):
        padded = np.append(u_Im, 0.0)
        ue = padded[self.edofs].reshape(-1, 8, 3)
        # grad u [e, g, a, b] = sum_k u[e, k, a] dN[e, g, k, b]
        return np.matmul(np.swapaxes(ue, 1, 2)[:, None], self.dN)

    def _reduce(self, rows):
        return np.add.reduceat(rows, self.offsets, axis=0)

    def evaluate(self, Fbar, u_Im, phi_m=None):
        """Magic-row residual ``g_m`` (m,) and, if ``phi_m`` is given, ``K_m phi`` (m, k).

        ``phi_m`` holds the rows of the tangent basis on I_m.
        """
        F = np.asarray(Fbar, dtype=float) + self._element_fields(u_Im)
        P, A = neo_hooke(F, self.mu, self.kappa, self.stab, need_tangent=phi_m is not None)
        Pt = P[self.e_t, :, self.comp_t, :]  # (t, G, 3)
        g_m = self._reduce(np.einsum("tgb,tgb->t", self.wdN_t, Pt))
        if phi_m is None:
            return g_m, None
        k = phi_m.shape[1]
        padded = np.vstack([phi_m, np.zeros((1, k))])
        pe = padded[self.edofs].reshape(-1, 8, 3, k)
        if self.backend == "numpy":
            rows = self._rows_numpy(A, pe)
        else:
            rows = np.empty((self.n_triples, k))
            magic_stiffness_rows(self.dN, self.wdN_t, self.e_t, self.comp_t, A, pe, rows)
        return g_m, self._reduce(rows)

    def _rows_numpy(self, A, pe):
        k = pe.shape[-1]
        # B phi [e, g, b, (a, q)] = sum_k dN[e, g, k, b] phi[e, k, a, q]
        Bphi = np.matmul(np.swapaxes(self.dN, 2, 3), pe.reshape(-1, 8, 3 * k)[:, None])
        Bphi = Bphi.reshape(*Bphi.shape[:2], 3, 3, k).transpose(0, 1, 3, 2, 4)  # (E,G,a,b,q)
        At = A[self.e_t, :, self.comp_t]  # (t, G, 3, 3, 3): [d, a, b]
        return np.einsum("tgd,tgdab,tgabq->tq", self.wdN_t, At, Bphi[self.e_t], optimize=True)

    def homogenization_terms(self, Fbar, u_Im, xi_local=None):
        """Element integrals needed by hyper homogenization.

        Returns ``(Pint (E, 9), Aint (E, 9, 9), L_m (m, 9))`` in row-major
        component order; ``L_m`` is the magic-row part of ``dg/dFbar``.
        """
        F = np.asarray(Fbar, dtype=float) + self._element_fields(u_Im)
        P, A = neo_hooke(F, self.mu, self.kappa, self.stab)
        ne, ng = self.w.shape
        Pint = np.einsum("eg,egi->ei", self.w, P.reshape(ne, ng, 9))
        A9 = A.reshape(ne, ng, 9, 9)
        Aint = np.einsum("eg,egij->eij", self.w, A9)
        At = A[self.e_t, :, self.comp_t].reshape(self.n_triples, ng, 3, 9)
        L_m = self._reduce(np.einsum("tgd,tgdj->tj", self.wdN_t, At))
        return Pint, Aint, L_m, A9

    def weighted_L(self, A9, weights):
        """``sum_e weights_e L^e`` gathered on I_m, shape (|I_m|, 9) row-major columns."""
        # L^e[(k, c), j] = sum_g w sum_b dN[k, b] A[(c, b), j]
        ne, ng = self.w.shape
        Ar = A9.reshape(ne, ng, 3, 3, 9)
        Le = np.einsum("eg,egkb,egcbj->ekcj", self.w, self.dN, Ar).reshape(ne, 24, 9)
        Le *= np.asarray(weights)[:, None, None]
        out = np.zeros((self.n_dofs + 1, 9))
        np.add.at(out, self.edofs.ravel(), Le.reshape(-1, 9))
        return out[:-1]


def voigt_cols(M: np.ndarray) -> np.ndarray:
    return M[..., VOIGT]
