"""Hyperreduced models (DEIM, LEHM, LSPG), xi-weights and the online Newton loop."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ..fem import VOIGT, FullState, HomogenizedResponse, RVEProblem, element_stress_integrals
from ..material import InvertedElementError
from ..reduce.spaces import ReducedSpace, SpaceState
from .kernel import HyperKernel
from .magic import MagicPoints
from .nnls import nnls

log = logging.getLogger(__name__)

METHODS = ("deim", "lehm", "lspg")


class ConditioningWarning(RuntimeWarning):
    pass


# -- offline fits -----------------------------------------------------------


def deim_matrix(Omega: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """``M = Omega (Z^T Omega)^-1`` (D x m)."""
    return np.linalg.solve(Omega[indices].T, Omega.T).T


def lehm_matrix(G: np.ndarray, indices: np.ndarray, eps: float | None = None) -> np.ndarray:
    """``M = G Gm^T (Gm Gm^T + eps I)^-1`` with ``Gm = Z^T G`` (D x m)."""
    return G @ _lehm_right(G, indices, eps)


def _lehm_right(G, indices, eps):
    Gm = G[indices]
    C = Gm @ Gm.T
    m = len(indices)
    if eps is None:
        eps = 1e-10 * np.trace(C) / m
    C = C + eps * np.eye(m)
    cond = np.linalg.cond(C)
    log.info("LEHM Gram condition number %.3e", cond)
    if cond > 1e14:
        warnings.warn(f"LEHM Gram matrix ill-conditioned (cond {cond:.2e})", ConditioningWarning,
                      stacklevel=3)
        return np.linalg.lstsq(C, Gm, rcond=None)[0].T  # minimum-norm fallback
    return np.linalg.solve(C, Gm).T  # Gm^T C^-1 (C symmetric)


def deim_fit(Omega: np.ndarray, magic: MagicPoints, phibar: np.ndarray) -> np.ndarray:
    """Left factor ``phibar^T Omega (Z^T Omega)^-1`` (d_bar x m)."""
    ZO = Omega[magic.indices]
    return np.linalg.solve(ZO.T, (phibar.T @ Omega).T).T


def lehm_fit(G: np.ndarray, magic: MagicPoints, phibar: np.ndarray,
             eps: float | None = None) -> np.ndarray:
    """Left factor ``phibar^T M`` for the least-squares extrapolation (d_bar x m)."""
    return (phibar.T @ G) @ _lehm_right(G, magic.indices, eps)


@dataclass(frozen=True, eq=False)
class XiWeights:
    elements: np.ndarray  # global element ids (subset of E_m)
    values: np.ndarray
    residual: float
    relative_residual: float


def fit_xi(Pe: np.ndarray, Pbar: np.ndarray, elements: np.ndarray | None = None,
           tol: float = 1e-10) -> XiWeights:
    """Nonnegative weights with ``Pe xi ~ Pbar`` (rows: 9 Voigt entries per snapshot)."""
    Pe = np.asarray(Pe, dtype=float)
    Pbar = np.asarray(Pbar, dtype=float).ravel()
    if not np.any(Pe) or not np.any(Pbar):
        raise ValueError("stress snapshots are all zero; xi is undetermined")
    x, res = nnls(Pe, Pbar, tol=tol)
    el = np.arange(Pe.shape[1]) if elements is None else np.asarray(elements)
    return XiWeights(el, x, res, res / np.linalg.norm(Pbar))


def xi_training_data(problem: RVEProblem, elements, U: np.ndarray, params: np.ndarray):
    """Stacked element stress integrals (9s x |E_m|) and homogenized stresses (9s,)."""
    params = np.asarray(params).reshape(-1, 3, 3)
    rows, target = [], []
    V = problem.volume
    for u, Fb in zip(U.T, params):
        st = FullState(u, Fb)
        rows.append(element_stress_integrals(problem, st, elements).T)  # (9, |E_m|)
        target.append(element_stress_integrals(problem, st).sum(axis=0) / V)
    return np.vstack(rows), np.concatenate(target)


# -- the model --------------------------------------------------------------


@dataclass(eq=False)
class HyperModel:
    method: str
    magic: MagicPoints
    phibar_m: np.ndarray  # rows of phibar on I_m, (|I_m|, d_bar)
    left: np.ndarray | None  # (d_bar, m); None for LSPG
    xi: XiWeights
    kernel: HyperKernel
    D: int
    volume: float
    lspg_paper_sign: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown hyperreduction method {self.method!r}")
        # xi as a vector over E_m (zero outside the fitted support)
        self.xi_local = np.zeros(len(self.magic.elements))
        pos = np.searchsorted(self.magic.elements, self.xi.elements)
        self.xi_local[pos] = self.xi.values


def build_hyper_model(problem: RVEProblem, method: str, magic: MagicPoints, phibar: np.ndarray,
                      G: np.ndarray | None, Omega: np.ndarray | None, xi: XiWeights,
                      eps: float | None = None, lspg_paper_sign: bool = False) -> HyperModel:
    if method == "deim":
        left = deim_fit(Omega, magic, phibar)
    elif method == "lehm":
        left = lehm_fit(G, magic, phibar, eps)
    else:
        left = None
    return HyperModel(method, magic, np.ascontiguousarray(phibar[magic.dofs]), left, xi,
                      HyperKernel(problem, magic), problem.D, problem.volume, lspg_paper_sign)


# -- online -----------------------------------------------------------------


def hyper_newton_step_deimlike(left: np.ndarray, g_m: np.ndarray, Kphi: np.ndarray,
                               phi_t: np.ndarray):
    """Returns ``(dy, K_hred, g_hred)``; solves ``K_hred dy = -g_hred``."""
    g_h = phi_t.T @ (left @ g_m)
    K_h = phi_t.T @ (left @ Kphi)
    return np.linalg.solve(K_h, -g_h), K_h, g_h


def hyper_newton_step_lspg(g_m: np.ndarray, Kphi: np.ndarray, paper_sign: bool = False):
    """``argmin ||Kphi dy + g_m||`` (or ``- g_m`` with ``paper_sign``) by least squares."""
    rhs = g_m if paper_sign else -g_m
    dy, _, rank, _ = np.linalg.lstsq(Kphi, rhs, rcond=None)
    if rank < Kphi.shape[1]:
        warnings.warn("rank-deficient LSPG system, minimum-norm step", ConditioningWarning,
                      stacklevel=2)
    return dy


class OnlineAudit:
    """Records the largest array produced inside the Newton loop."""

    def __init__(self, D: int):
        self.D = D
        self.max_len = 0
        self.violations = 0

    def __call__(self, *arrays):
        for a in arrays:
            n = int(np.max(np.shape(a))) if np.ndim(a) else 1
            self.max_len = max(self.max_len, n)
            if n >= self.D:
                self.violations += 1


@dataclass
class Timings:
    chart: float = 0.0
    reconstruct: float = 0.0
    assemble: float = 0.0
    project: float = 0.0
    solve: float = 0.0
    homogenize: float = 0.0

    def total(self) -> float:
        return self.chart + self.reconstruct + self.assemble + self.project + self.solve + self.homogenize

    def add(self, other: "Timings"):
        for k in vars(self):
            setattr(self, k, getattr(self, k) + getattr(other, k))

    def as_dict(self):
        return dict(vars(self))


@dataclass
class HyperStepResult:
    state: SpaceState
    converged: bool
    iterations: int
    reason: str = ""
    residuals: list[float] = field(default_factory=list)
    response: HomogenizedResponse | None = None
    timings: Timings = field(default_factory=Timings)


def hyper_newton(hm: HyperModel, space: ReducedSpace, Fbar, prev: SpaceState | None = None,
                 tol: float = 1e-8, max_iter: int = 25, step_tol: float | None = None,
                 homogenize: bool = True, audit: OnlineAudit | None = None) -> HyperStepResult:
    """One load step of the hyperreduced online solve.

    Convergence: ``max|g_hred| <= tol`` (DEIM/LEHM) or ``max|g_m| <= tol``
    (LSPG), or a relative update of ``ubar`` below ``step_tol`` (default
    1e-12 for DEIM/LEHM and 1e-8 for the Gauss-Newton iteration of LSPG).
    """
    lspg = hm.method == "lspg"
    if step_tol is None:
        step_tol = 1e-8 if lspg else 1e-12
    Fbar = np.asarray(Fbar, dtype=float)
    tm = Timings()
    t0 = time.perf_counter()
    st = space.start_step(Fbar, prev)
    phi_t = space.tangent(st)
    phi_m = hm.phibar_m @ phi_t
    tm.chart += time.perf_counter() - t0
    residuals = []
    small = False
    g_m = Kphi = K_h = None
    for it in range(max_iter + 1):
        t0 = time.perf_counter()
        u_Im = hm.phibar_m @ st.ubar
        t1 = time.perf_counter()
        try:
            g_m, Kphi = hm.kernel.evaluate(Fbar, u_Im, phi_m)
        except InvertedElementError:
            return HyperStepResult(st, False, it, "inverted element", residuals, timings=tm)
        t2 = time.perf_counter()
        tm.reconstruct += t1 - t0
        tm.assemble += t2 - t1
        if audit is not None:
            audit(u_Im, phi_m, g_m, Kphi, st.ubar)
        if lspg:
            res = float(np.max(np.abs(g_m)))
        else:
            t_left = hm.left @ g_m
            g_h = phi_t.T @ t_left
            res = float(np.max(np.abs(g_h)))
        tm.project += time.perf_counter() - t2
        residuals.append(res)
        if not np.isfinite(res):
            return HyperStepResult(st, False, it, "non-finite residual", residuals, timings=tm)
        if res <= tol or small:
            break
        if it == max_iter:
            return HyperStepResult(st, False, it, "max_iter exceeded", residuals, timings=tm)
        t3 = time.perf_counter()
        try:
            if lspg:
                dy = hyper_newton_step_lspg(g_m, Kphi, hm.lspg_paper_sign)
            else:
                K_h = phi_t.T @ (hm.left @ Kphi)
                dy = np.linalg.solve(K_h, -g_h)
        except np.linalg.LinAlgError:
            return HyperStepResult(st, False, it, "singular K_hred", residuals, timings=tm)
        t4 = time.perf_counter()
        du = phi_t @ dy
        space.increment(st, dy)
        small = np.linalg.norm(du) <= step_tol * max(np.linalg.norm(st.ubar), 1e-300)
        if space.refresh(st) or space.varying_tangent:
            phi_t = space.tangent(st)
            phi_m = hm.phibar_m @ phi_t
        if audit is not None:
            audit(dy, du, phi_m)
        tm.solve += t4 - t3
        tm.project += time.perf_counter() - t4
    iters = len(residuals) - 1
    response = None
    if homogenize:
        t0 = time.perf_counter()
        try:
            response = hyper_homogenize(hm, Fbar, u_Im, phi_t, phi_m, Kphi)
        except np.linalg.LinAlgError:
            return HyperStepResult(st, False, iters, "homogenization failed", residuals, timings=tm)
        tm.homogenize += time.perf_counter() - t0
    return HyperStepResult(st, True, iters, "", residuals, response, tm)


def hyper_homogenize(hm: HyperModel, Fbar, u_Im, phi_t, phi_m, Kphi) -> HomogenizedResponse:
    """Stress and consistent stiffness from xi-weighted E_m integrals.

    DEIM/LEHM: ``Abar = sum xi int A - (1/V) L_hred^T S`` with
    ``K_hred S = L_hred = phi_t^T left L_m``. LSPG: ``S`` solves the normal
    equations of the collocation system and the left factor is
    ``phi_m^T sum_e xi_e L^e``.
    """
    Pint, Aint, L_m, A9 = hm.kernel.homogenization_terms(Fbar, u_Im)
    xi = hm.xi_local
    Pbar = (xi @ Pint).reshape(3, 3)
    Av = np.tensordot(xi, Aint, axes=1)[np.ix_(VOIGT, VOIGT)]
    L_m = L_m[:, VOIGT]
    if hm.method == "lspg":
        N = Kphi.T @ Kphi
        S = sla.solve(N, Kphi.T @ L_m, assume_a="sym")
        L_xi = phi_m.T @ hm.kernel.weighted_L(A9, xi)[:, VOIGT]
        Abar = Av - L_xi.T @ S
    else:
        L_h = phi_t.T @ (hm.left @ L_m)
        K_h = phi_t.T @ (hm.left @ Kphi)
        S = np.linalg.solve(K_h, L_h)
        Abar = Av - (L_h.T @ S) / hm.volume
    return HomogenizedResponse(Pbar, Abar, S)


@dataclass
class HyperPathResult:
    steps: list[HyperStepResult]

    @property
    def n_diverged(self) -> int:
        return sum(not s.converged for s in self.steps)

    @property
    def timings(self) -> Timings:
        t = Timings()
        for s in self.steps:
            t.add(s.timings)
        return t

    @property
    def iterations(self) -> int:
        return sum(s.iterations for s in self.steps)


def run_hyper_path(hm: HyperModel, space: ReducedSpace, Fbars, tol: float = 1e-8,
                   max_iter: int = 25, homogenize: bool = True,
                   audit: OnlineAudit | None = None) -> HyperPathResult:
    """Online solve of a load path; a failed step restarts the next one from the last good state."""
    prev = None
    out = []
    for Fb in Fbars:
        r = hyper_newton(hm, space, Fb, prev, tol=tol, max_iter=max_iter, homogenize=homogenize,
                         audit=audit)
        out.append(r)
        if r.converged:
            prev = r.state
    return HyperPathResult(out)
