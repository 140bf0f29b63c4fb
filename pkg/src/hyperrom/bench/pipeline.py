"""Offline/online pipeline: FOM campaigns, model training, validation runs."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ..fem import RVEProblem, homogenize, newton_solve
from ..galerkin import ResidualRecorder, ResidualSet, reduced_path
from ..hyper import (HyperModel, MagicPoints, OnlineAudit, Timings, XiWeights, build_hyper_model,
                     fit_xi, run_hyper_path, select_magic_points, xi_training_data)
from ..reduce import (LleSpace, LpodSpace, PmSpace, PodSpace, ReducedSpace, lle_fit, lpod_fit,
                      pm_fit, pod_fit)

log = logging.getLogger(__name__)

REDUCTION_METHODS = ("pod", "lpod", "pm", "lle")


def parallel_map(fn, items, threads: int = 1):
    """Order-preserving map; BLAS is pinned to one thread inside workers."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]

    def run(x):
        with threadpool_limits(1):
            return fn(x)

    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(run, items))


# -- FOM ----------------------------------------------------------------------


@dataclass
class FomPath:
    U: np.ndarray  # (D, n_steps)
    Pbar: np.ndarray  # (n_steps, 3, 3)
    Abar: np.ndarray  # (n_steps, 9, 9)
    converged: np.ndarray
    iterations: np.ndarray
    time: float  # wall time of the online solve incl. homogenization


@dataclass
class Campaign:
    Fbars: np.ndarray  # (n_paths, n_steps, 3, 3)
    paths: list[FomPath]

    @property
    def U(self) -> np.ndarray:
        return np.hstack([p.U for p in self.paths])

    @property
    def params(self) -> np.ndarray:
        return self.Fbars.reshape(-1, 3, 3)

    @property
    def Pbar(self) -> np.ndarray:
        return np.concatenate([p.Pbar for p in self.paths])

    def subset(self, idx) -> "Campaign":
        idx = list(idx)
        return Campaign(self.Fbars[idx], [self.paths[i] for i in idx])


def fom_path(problem: RVEProblem, Fbars, tol: float = 1e-8, max_iter: int = 25) -> FomPath:
    t0 = time.perf_counter()
    u = np.zeros(problem.D)
    Fprev = np.eye(3)
    U, P, A, ok, its = [], [], [], [], []
    for Fb in Fbars:
        res = newton_solve(problem, Fb, u0=u, Fbar0=Fprev, tol=tol, max_iter=max_iter)
        if res.converged:
            h = homogenize(problem, res.state, K=res.system.K)
            u, Fprev = res.state.u, Fb
        else:
            h = None
        U.append(res.state.u)
        P.append(h.Pbar if h else np.full((3, 3), np.nan))
        A.append(h.Abar if h else np.full((9, 9), np.nan))
        ok.append(res.converged)
        its.append(res.iterations)
    return FomPath(np.column_stack(U), np.array(P), np.array(A), np.array(ok), np.array(its),
                   time.perf_counter() - t0)


def run_fom_campaign(problem: RVEProblem, Fbars: np.ndarray, tol: float = 1e-8,
                     threads: int = 1, max_iter: int = 25) -> Campaign:
    Fbars = np.asarray(Fbars, dtype=float)
    fom_path(problem, Fbars[0][:1], tol, max_iter)  # warm-up, discarded
    paths = parallel_map(lambda F: fom_path(problem, F, tol, max_iter), list(Fbars), threads)
    bad = sum(int((~p.converged).sum()) for p in paths)
    if bad:
        log.warning("FOM campaign: %d states did not converge", bad)
    return Campaign(Fbars, paths)


# -- reduced models -----------------------------------------------------------


@dataclass(frozen=True)
class ReductionConfig:
    method: str = "lle"
    d: int = 15
    d_bar: int | None = None  # LLE intermediate dimension (default: s)
    k: int | None = None  # LLE neighbours (default: 2d, capped at s-1)
    N: int | None = None  # chart neighbours (default: 2d)
    n_clusters: int = 4  # LPOD
    overlap: int = 2  # LPOD
    d_tilde: int | None = None  # PM (default: d)
    pm_iters: int = 10
    pm_reg: float = 1e-4  # Tikhonov weight on Xi (relative)
    lle_reg: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.method not in REDUCTION_METHODS:
            raise ValueError(f"unknown reduction method {self.method!r}")
        if self.d < 1:
            raise ValueError("d must be >= 1")


def build_space(cfg: ReductionConfig, U: np.ndarray, params: np.ndarray):
    """Returns ``(space, model)``."""
    D, s = U.shape
    if cfg.method == "pod":
        model = pod_fit(U, cfg.d)
        return PodSpace(model), model
    if cfg.method == "lpod":
        model = lpod_fit(U, cfg.n_clusters, cfg.d, cfg.overlap, seed=cfg.seed)
        return LpodSpace(model, U), model
    if cfg.method == "pm":
        dt = cfg.d if cfg.d_tilde is None else cfg.d_tilde
        dt = min(dt, min(D, s) - cfg.d)
        model = pm_fit(U, cfg.d, dt, max_iters=cfg.pm_iters, reg=cfg.pm_reg)
        return PmSpace(model), model
    k = min(2 * cfg.d, s - 1) if cfg.k is None else cfg.k
    model = lle_fit(U, params, k=k, d=cfg.d, d_bar=cfg.d_bar, reg=cfg.lle_reg)
    return LleSpace(model, cfg.N), model


def record_residuals(space: ReducedSpace, problem: RVEProblem, Fbars: np.ndarray,
                     tol: float = 1e-8, threads: int = 1):
    """Galerkin runs over the training paths; returns ``(ResidualSet, n_diverged)``."""

    def one(arg):
        p, F = arg
        rec = ResidualRecorder()
        res = reduced_path(space, problem, F, tol=tol, recorder=rec, path=p)
        return rec.result(), res.n_diverged

    out = parallel_map(one, list(enumerate(Fbars)), threads)
    return ResidualSet.concat([o[0] for o in out]), sum(o[1] for o in out)


@dataclass(frozen=True)
class HyperConfig:
    method: str = "lehm"
    m: int = 100
    eps: float | None = None
    xi_tol: float = 1e-10
    lspg_paper_sign: bool = False


@dataclass(frozen=True, eq=False)
class HyperTraining:
    """Magic points, residual modes and xi-weights; shared by DEIM, LEHM and LSPG."""

    magic: MagicPoints
    Omega: np.ndarray
    xi: XiWeights
    G: np.ndarray


def train_magic(problem: RVEProblem, residuals: ResidualSet, train: Campaign, m: int,
                xi_tol: float = 1e-10) -> HyperTraining:
    G = residuals.G
    m = min(m, min(G.shape))
    magic, Omega = select_magic_points(problem, G, m)
    Pe, Pbar = xi_training_data(problem, magic.elements, train.U, train.params)
    xi = fit_xi(Pe, Pbar, magic.elements, tol=xi_tol)
    return HyperTraining(magic, Omega, xi, G)


def hyper_from_training(problem: RVEProblem, space: ReducedSpace, ht: HyperTraining,
                        cfg: HyperConfig) -> HyperModel:
    return build_hyper_model(problem, cfg.method, ht.magic, space.phibar, ht.G, ht.Omega, ht.xi,
                             cfg.eps, cfg.lspg_paper_sign)


def train_hyper(problem: RVEProblem, space: ReducedSpace, residuals: ResidualSet,
                train: Campaign, cfg: HyperConfig) -> HyperModel:
    ht = train_magic(problem, residuals, train, cfg.m, cfg.xi_tol)
    return hyper_from_training(problem, space, ht, cfg)


# -- online validation ----------------------------------------------------------


@dataclass
class RomPath:
    ubar: np.ndarray  # (d_bar, n_steps) intermediate coordinates
    Pbar: np.ndarray
    Abar: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    timings: Timings
    time: float
    audit_max_len: int = 0


def hyper_validation(hm: HyperModel, space: ReducedSpace, Fbars: np.ndarray, tol: float = 1e-8,
                     max_iter: int = 25, threads: int = 1, audit: bool = False) -> list[RomPath]:
    def one(F):
        au = OnlineAudit(hm.D) if audit else None
        t0 = time.perf_counter()
        res = run_hyper_path(hm, space, F, tol=tol, max_iter=max_iter, audit=au)
        wall = time.perf_counter() - t0
        nan9 = np.full((9, 9), np.nan)
        return RomPath(
            np.column_stack([s.state.ubar for s in res.steps]),
            np.array([s.response.Pbar if s.response else np.full((3, 3), np.nan)
                      for s in res.steps]),
            np.array([s.response.Abar if s.response else nan9 for s in res.steps]),
            np.array([s.converged for s in res.steps]),
            np.array([s.iterations for s in res.steps]),
            res.timings, wall, au.max_len if au else 0)

    Fbars = list(Fbars)
    if Fbars:
        run_hyper_path(hm, space, Fbars[0][:1], tol=tol, max_iter=max_iter)  # warm-up, discarded
    return parallel_map(one, Fbars, threads)


@dataclass
class ValidationSummary:
    error_u: float | None
    error_P: float | None
    n_diverged: int
    n_states: int
    rom_time: float
    fom_time: float
    iterations: int
    timings: dict = field(default_factory=dict)

    @property
    def speedup(self) -> float:
        return self.fom_time / self.rom_time if self.rom_time > 0 else float("nan")


def summarize(space: ReducedSpace, rom: list[RomPath], fom: Campaign) -> ValidationSummary:
    from .metrics import error_metric

    diverged = np.concatenate([~r.converged for r in rom])
    u_rom = [space.phibar @ col for r in rom for col in r.ubar.T]
    u_fom = [col for p in fom.paths for col in p.U.T]
    P_rom = [P for r in rom for P in r.Pbar]
    P_fom = list(fom.Pbar)
    eu = error_metric(u_rom, u_fom, diverged)
    ep = error_metric(P_rom, P_fom, diverged)
    tm = Timings()
    for r in rom:
        tm.add(r.timings)
    return ValidationSummary(eu.percent, ep.percent, eu.n_diverged, eu.n_states,
                             sum(r.time for r in rom), sum(p.time for p in fom.paths),
                             int(sum(r.iterations.sum() for r in rom)), tm.as_dict())


def galerkin_validation(space: ReducedSpace, problem: RVEProblem, Fbars: np.ndarray,
                        tol: float = 1e-8, max_iter: int = 25, threads: int = 1) -> list[RomPath]:
    """Unhyperreduced Galerkin runs with full-order homogenization of each converged state."""
    from ..galerkin import reduced_homogenize

    def one(F):
        t0 = time.perf_counter()
        res = reduced_path(space, problem, F, tol=tol, max_iter=max_iter)
        P, A = [], []
        for s in res.steps:
            if s.converged:
                h = reduced_homogenize(space.phibar @ space.tangent(s.state), problem, s.u, s.Fbar)
                P.append(h.Pbar)
                A.append(h.Abar)
            else:
                P.append(np.full((3, 3), np.nan))
                A.append(np.full((9, 9), np.nan))
        return RomPath(np.column_stack([s.state.ubar for s in res.steps]), np.array(P),
                       np.array(A), np.array([s.converged for s in res.steps]),
                       np.array([s.iterations for s in res.steps]), Timings(),
                       time.perf_counter() - t0)

    return parallel_map(one, list(Fbars), threads)
