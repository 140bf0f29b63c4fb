"""Full-order periodic RVE problem: assembly, Newton solve, homogenization.

Kinematics per Gauss point use the B operator ``B[(a, b), (k, c)] =
delta_ac dN_k/dX_b`` so that ``vec(F) = vec(Fbar) + B u_e`` (row-major
``vec``), the element residual is ``sum w B^T vec(P)`` and the element
stiffness ``sum w B^T A B``.

Nine-column objects (sensitivity ``L``, stiffness ``Abar``) use the Voigt
order (11, 22, 33, 12, 13, 23, 21, 31, 32).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .material import InvertedElementError, MaterialParams, neo_hooke
from .mesh import Mesh, PeriodicMap, build_periodic_map

log = logging.getLogger(__name__)

# row-major flat index of each Voigt component
VOIGT = np.array([0, 4, 8, 1, 2, 5, 3, 6, 7])
VOIGT_LABELS = ("11", "22", "33", "12", "13", "23", "21", "31", "32")


def to_voigt(M: np.ndarray) -> np.ndarray:
    """3x3 tensor -> 9-vector in Voigt order."""
    return np.asarray(M).reshape(*np.shape(M)[:-2], 9)[..., VOIGT]


def from_voigt(v: np.ndarray) -> np.ndarray:
    out = np.empty(np.shape(v)[:-1] + (9,))
    out[..., VOIGT] = v
    return out.reshape(np.shape(v)[:-1] + (3, 3))


class SingularStiffnessError(np.linalg.LinAlgError):
    pass


@dataclass
class FullState:
    u: np.ndarray
    Fbar: np.ndarray


@dataclass
class AssembledSystem:
    g: np.ndarray
    K: sp.csr_matrix | None = None
    L: np.ndarray | None = None


@dataclass
class HomogenizedResponse:
    Pbar: np.ndarray  # 3x3
    Abar: np.ndarray  # 9x9 Voigt
    S: np.ndarray | None = None  # sensitivity, (D or d) x 9


class RVEProblem:
    """Mesh + periodic map + per-element material data, with cached operators."""

    def __init__(self, mesh: Mesh, materials: dict[int, MaterialParams],
                 pmap: PeriodicMap | None = None):
        self.mesh = mesh
        self.pmap = pmap if pmap is not None else build_periodic_map(mesh)
        self.materials = dict(materials)
        missing = set(np.unique(mesh.element_material)) - set(self.materials)
        if missing:
            raise KeyError(f"no material parameters for ids {sorted(missing)}")
        mat = mesh.element_material
        self.mu_e = np.array([self.materials[m].mu for m in mat])
        self.kappa_e = np.array([self.materials[m].kappa for m in mat])
        self.stab_e = np.array(
            [1.0 if self.materials[m].variant == "stabilized" else 0.0 for m in mat]
        )
        ne, ng = mesh.detJw.shape
        dN = mesh.dNdX  # (ne, ng, 8, 3)
        B = np.zeros((ne, ng, 3, 3, 8, 3))
        for a in range(3):
            B[:, :, a, :, :, a] = np.swapaxes(dN, -1, -2)
        self.B = B.reshape(ne, ng, 9, 24)
        self.element_dofs = self.pmap.element_dofs
        self._pattern = None

    @property
    def D(self) -> int:
        return self.pmap.D

    @property
    def volume(self) -> float:
        return self.mesh.volume

    # -- element level -----------------------------------------------------

    def element_u(self, u: np.ndarray, elements=None) -> np.ndarray:
        edofs = self.element_dofs if elements is None else self.element_dofs[elements]
        padded = np.concatenate([np.asarray(u, dtype=float), [0.0]])
        return padded[edofs]  # -1 picks the trailing zero

    def deformation_gradients(self, Fbar, ue: np.ndarray, elements=None) -> np.ndarray:
        """vec(F) at every Gauss point, shape (ne, ng, 9)."""
        B = self.B if elements is None else self.B[elements]
        return np.asarray(Fbar, dtype=float).reshape(9) + np.matmul(B, ue[:, None, :, None])[..., 0]

    def constitutive(self, Fvec: np.ndarray, elements=None, need_tangent=True):
        sl = slice(None) if elements is None else elements
        ne, ng = Fvec.shape[:2]
        mu = np.repeat(self.mu_e[sl], ng).reshape(ne, ng)
        kappa = np.repeat(self.kappa_e[sl], ng).reshape(ne, ng)
        stab = np.repeat(self.stab_e[sl], ng).reshape(ne, ng)
        P, A = neo_hooke(Fvec.reshape(ne, ng, 3, 3), mu, kappa, stab, need_tangent)
        P9 = P.reshape(ne, ng, 9)
        A9 = None if A is None else A.reshape(ne, ng, 9, 9)
        return P9, A9

    def element_forms(self, Fbar, u, elements=None, need_K=True, need_L=False):
        """Element residuals (ne, 24) and optionally stiffness (ne, 24, 24), L (ne, 24, 9)."""
        B = self.B if elements is None else self.B[elements]
        w = self.mesh.detJw if elements is None else self.mesh.detJw[elements]
        ue = self.element_u(u, elements)
        Fv = self.deformation_gradients(Fbar, ue, elements)
        P9, A9 = self.constitutive(Fv, elements, need_tangent=need_K or need_L)
        ne, ng = w.shape
        # stack Gauss points so each element form is a single matmul
        wBt = np.swapaxes((B * w[:, :, None, None]).reshape(ne, ng * 9, 24), 1, 2)
        ge = np.matmul(wBt, P9.reshape(ne, ng * 9, 1))[..., 0]
        Ke = Le = None
        if need_K:
            AB = np.matmul(A9, B).reshape(ne, ng * 9, 24)
            Ke = np.matmul(wBt, AB)
        if need_L:
            Le = np.matmul(wBt, A9.reshape(ne, ng * 9, 9))
        return ge, Ke, Le

    # -- global assembly ---------------------------------------------------

    def _build_pattern(self):
        D = self.D
        ed = self.element_dofs
        rows = np.broadcast_to(ed[:, :, None], ed.shape + (24,))
        cols = np.broadcast_to(ed[:, None, :], ed.shape + (24,))
        valid = (rows >= 0) & (cols >= 0)
        lin = rows[valid].astype(np.int64) * max(D, 1) + cols[valid]
        uniq, inv = np.unique(lin, return_inverse=True)
        r = uniq // max(D, 1)
        c = uniq % max(D, 1)
        indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=D))])
        self._pattern = (valid.reshape(-1), inv, c.astype(np.int32), indptr.astype(np.int32))

    def scatter_K(self, Ke: np.ndarray) -> sp.csr_matrix:
        if self._pattern is None:
            self._build_pattern()
        valid, inv, indices, indptr = self._pattern
        data = np.bincount(inv, weights=Ke.reshape(-1)[valid], minlength=indices.size)
        return sp.csr_matrix((data, indices, indptr), shape=(self.D, self.D))

    def gather_vec(self, ve: np.ndarray, elements=None) -> np.ndarray:
        """Sum element vectors (ne, 24[, k]) onto free DOFs."""
        ed = self.element_dofs if elements is None else self.element_dofs[elements]
        flat = ed.reshape(-1)
        keep = flat >= 0
        if ve.ndim == 2:
            return np.bincount(flat[keep], weights=ve.reshape(-1)[keep], minlength=self.D)
        out = np.zeros((self.D, ve.shape[-1]))
        np.add.at(out, flat[keep], ve.reshape(-1, ve.shape[-1])[keep])
        return out


def _subset(problem: RVEProblem, element_subset):
    if element_subset is None:
        return None
    return np.asarray(element_subset, dtype=np.int64)


def assemble(problem: RVEProblem, state: FullState, element_subset=None,
             need_K: bool = True) -> AssembledSystem:
    """Residual and stiffness over all elements or a subset."""
    elems = _subset(problem, element_subset)
    ge, Ke, _ = problem.element_forms(state.Fbar, state.u, elems, need_K=need_K)
    g = problem.gather_vec(ge, elems)
    K = None
    if need_K:
        if elems is None:
            K = problem.scatter_K(Ke)
        else:
            ed = problem.element_dofs[elems]
            r = np.broadcast_to(ed[:, :, None], Ke.shape)
            c = np.broadcast_to(ed[:, None, :], Ke.shape)
            ok = (r >= 0) & (c >= 0)
            K = sp.csr_matrix((Ke[ok], (r[ok], c[ok])), shape=(problem.D, problem.D))
    return AssembledSystem(g=g, K=K)


def assemble_L(problem: RVEProblem, state: FullState, element_subset=None) -> np.ndarray:
    """Sensitivity coefficient dg/dFbar, D x 9 in Voigt column order."""
    elems = _subset(problem, element_subset)
    _, _, Le = problem.element_forms(state.Fbar, state.u, elems, need_K=False, need_L=True)
    return problem.gather_vec(Le, elems)[:, VOIGT]


def total_energy(problem: RVEProblem, state: FullState) -> float:
    from .material import MaterialParams, energy

    ue = problem.element_u(state.u)
    Fv = problem.deformation_gradients(state.Fbar, ue)
    ne, ng = Fv.shape[:2]
    total = 0.0
    for mid, params in problem.materials.items():
        mask = problem.mesh.element_material == mid
        if not np.any(mask):
            continue
        W = energy(MaterialParams(params.mu, params.kappa, params.variant),
                   Fv[mask].reshape(-1, 3, 3)).reshape(-1, ng)
        total += float((W * problem.mesh.detJw[mask]).sum())
    return total


# -- Newton solver ----------------------------------------------------------


@dataclass
class IterRecord:
    step: int
    iteration: int
    residual: float
    t_assemble: float
    t_solve: float


@dataclass
class SolveResult:
    state: FullState
    converged: bool
    trace: list[IterRecord] = field(default_factory=list)
    system: AssembledSystem | None = None
    reason: str = ""
    bisections: int = 0

    @property
    def iterations(self) -> int:
        return len([r for r in self.trace if r.t_solve > 0])


def factorize(K: sp.spmatrix):
    try:
        # K is structurally symmetric: minimum degree on A^T + A keeps the fill low
        return spla.splu(sp.csc_matrix(K), permc_spec="MMD_AT_PLUS_A",
                         options=dict(SymmetricMode=True))
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise SingularStiffnessError(str(exc)) from exc


def _newton_step(problem, Fbar, u, tol, max_iter, step_id, trace):
    """Equilibrate at fixed Fbar starting from u. Returns (u, system, converged)."""
    u = u.copy()
    for it in range(max_iter + 1):
        t0 = time.perf_counter()
        sys_ = assemble(problem, FullState(u, Fbar))
        t1 = time.perf_counter()
        res = float(np.max(np.abs(sys_.g))) if sys_.g.size else 0.0
        if not np.isfinite(res):
            trace.append(IterRecord(step_id, it, res, t1 - t0, 0.0))
            return u, sys_, False
        if res <= tol:
            trace.append(IterRecord(step_id, it, res, t1 - t0, 0.0))
            return u, sys_, True
        if it == max_iter:
            trace.append(IterRecord(step_id, it, res, t1 - t0, 0.0))
            break
        lu = factorize(sys_.K)
        du = lu.solve(-sys_.g)
        u += du
        trace.append(IterRecord(step_id, it, res, t1 - t0, time.perf_counter() - t1))
    return u, sys_, False


def newton_solve(problem: RVEProblem, Fbar_target, u0=None, Fbar0=None,
                 load_steps: int = 1, tol: float = 1e-8, max_iter: int = 25,
                 max_bisections: int = 5) -> SolveResult:
    """Load-stepped Newton-Raphson from (u0, Fbar0) to Fbar_target.

    Inverted elements trigger bisection of the current sub-step; after
    ``max_bisections`` halvings the solve is reported as failed.
    """
    if tol <= 0 or load_steps < 1:
        raise ValueError("tol must be positive and load_steps >= 1")
    Fbar_target = np.asarray(Fbar_target, dtype=float)
    Fbar = np.eye(3) if Fbar0 is None else np.asarray(Fbar0, dtype=float).copy()
    u = np.zeros(problem.D) if u0 is None else np.asarray(u0, dtype=float).copy()
    trace: list[IterRecord] = []
    start = Fbar.copy()
    # fractions of the path from start to target
    pending = [k / load_steps for k in range(load_steps, 0, -1)]
    done = 0.0
    depth_of = {}
    bisections = 0
    system = None
    step_id = 0
    while pending:
        frac = pending[-1]
        Fb = start + frac * (Fbar_target - start)
        try:
            u_new, system, ok = _newton_step(problem, Fb, u, tol, max_iter, step_id, trace)
        except InvertedElementError:
            depth = depth_of.get(frac, 0)
            if depth >= max_bisections:
                return SolveResult(FullState(u, Fbar), False, trace, system,
                                   "inverted element after max bisections", bisections)
            mid = 0.5 * (done + frac)
            depth_of[mid] = depth + 1
            pending.append(mid)
            bisections += 1
            continue
        except SingularStiffnessError as exc:
            return SolveResult(FullState(u, Fbar), False, trace, system, f"singular K: {exc}",
                               bisections)
        if not ok:
            return SolveResult(FullState(u_new, Fb), False, trace, system,
                               "max_iter exceeded", bisections)
        pending.pop()
        u, Fbar, done = u_new, Fb, frac
        step_id += 1
    return SolveResult(FullState(u, Fbar), True, trace, system, "", bisections)


# -- homogenization ---------------------------------------------------------


def volume_averages(problem: RVEProblem, state: FullState, elements=None, weights=None,
                    need_A: bool = True):
    """Element-integrated P and A: returns (sum_e c_e int P, sum_e c_e int A) row-major.

    ``weights`` multiplies each element integral (default 1, i.e. plain integrals).
    """
    B_el = None if elements is None else np.asarray(elements)
    w = problem.mesh.detJw if B_el is None else problem.mesh.detJw[B_el]
    ue = problem.element_u(state.u, B_el)
    Fv = problem.deformation_gradients(state.Fbar, ue, B_el)
    P9, A9 = problem.constitutive(Fv, B_el, need_tangent=need_A)
    ww = w if weights is None else w * np.asarray(weights)[:, None]
    P = np.einsum("eg,egi->i", ww, P9)
    A = None if A9 is None else np.einsum("eg,egij->ij", ww, A9)
    return P, A


def element_stress_integrals(problem: RVEProblem, state: FullState, elements=None) -> np.ndarray:
    """int_e P dV per element, (ne, 9) in Voigt order."""
    el = None if elements is None else np.asarray(elements)
    w = problem.mesh.detJw if el is None else problem.mesh.detJw[el]
    ue = problem.element_u(state.u, el)
    Fv = problem.deformation_gradients(state.Fbar, ue, el)
    P9, _ = problem.constitutive(Fv, el, need_tangent=False)
    return np.einsum("eg,egi->ei", w, P9)[:, VOIGT]


def voigt_matrix(A9: np.ndarray) -> np.ndarray:
    """Row-major 9x9 tangent -> Voigt-ordered 9x9."""
    return A9[np.ix_(VOIGT, VOIGT)]


def homogenize(problem: RVEProblem, state: FullState, K=None, L=None, lu=None) -> HomogenizedResponse:
    """Volume-averaged stress and consistent stiffness Abar = Abar_v - L^T K^-1 L / V."""
    V = problem.volume
    if K is None:
        K = assemble(problem, state).K
    if L is None:
        L = assemble_L(problem, state)
    Pint, Aint = volume_averages(problem, state)
    Pbar = Pint.reshape(3, 3) / V
    Av = voigt_matrix(Aint) / V
    if problem.D == 0:
        return HomogenizedResponse(Pbar, Av, np.zeros((0, 9)))
    if lu is None:
        lu = factorize(K)
    S = lu.solve(L)
    Abar = Av - (L.T @ S) / V
    return HomogenizedResponse(Pbar, Abar, S)
