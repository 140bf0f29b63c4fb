"""Galerkin-reduced Newton-Raphson and reduced homogenization.

The reduced system for the tangent ``phi = phibar phi_t`` in force is
``g_red = phi^T g`` and ``K_red = phi^T K phi``. Full residuals of every
iterate (including iterate 0 of each step and the converged one) can be
recorded to train hyperreduction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .fem import (FullState, HomogenizedResponse, RVEProblem, assemble, assemble_L,
                  voigt_matrix, volume_averages)
from .material import InvertedElementError
from .reduce.spaces import ReducedSpace, SpaceState


@dataclass
class ReducedSystem:
    g_red: np.ndarray
    K_red: np.ndarray


@dataclass
class ResidualSet:
    G: np.ndarray  # (D, s_g)
    path: np.ndarray
    step: np.ndarray
    iteration: np.ndarray
    converged: np.ndarray

    @property
    def size(self) -> int:
        return self.G.shape[1]

    @classmethod
    def concat(cls, parts: list["ResidualSet"]) -> "ResidualSet":
        parts = [p for p in parts if p.size]
        if not parts:
            raise ValueError("no residual snapshots")
        return cls(np.hstack([p.G for p in parts]),
                   *(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("path", "step", "iteration", "converged")))


class ResidualRecorder:
    """Append-only residual buffer for one solve (or one path)."""

    def __init__(self):
        self.cols, self.meta = [], []

    def add(self, g, path, step, iteration, converged=False):
        self.cols.append(np.array(g, dtype=float))
        self.meta.append((path, step, iteration, converged))

    def mark_last_converged(self):
        if self.meta:
            p, s, i, _ = self.meta[-1]
            self.meta[-1] = (p, s, i, True)

    def result(self) -> ResidualSet:
        if not self.cols:
            return ResidualSet(np.zeros((0, 0)), *(np.zeros(0, int) for _ in range(3)),
                               np.zeros(0, bool))
        m = np.array(self.meta)
        return ResidualSet(np.column_stack(self.cols), m[:, 0].astype(int), m[:, 1].astype(int),
                           m[:, 2].astype(int), m[:, 3].astype(bool))


@dataclass
class ReducedIter:
    iteration: int
    res_red: float
    res_full: float
    t_assemble: float
    t_solve: float


@dataclass
class ReducedStepResult:
    state: SpaceState
    u: np.ndarray
    Fbar: np.ndarray
    converged: bool
    reason: str = ""
    trace: list[ReducedIter] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return max(0, len(self.trace) - 1)


def reduced_system(phi: np.ndarray, g: np.ndarray, K) -> ReducedSystem:
    return ReducedSystem(phi.T @ g, phi.T @ (K @ phi))


def reduced_newton(space: ReducedSpace, problem: RVEProblem, Fbar, prev: SpaceState | None = None,
                   tol: float = 1e-8, max_iter: int = 25, step_tol: float = 1e-12,
                   recorder: ResidualRecorder | None = None, path: int = 0,
                   step: int = 0, assembler=assemble) -> ReducedStepResult:
    """Equilibrate the reduced problem at ``Fbar`` starting from ``prev``.

    Converged when ``max|g_red| <= tol`` or when the last update changed
    ``ubar`` by less than ``step_tol`` relative (stagnation at roundoff).
    ``assembler(problem, FullState)`` must return an object with ``g`` and ``K``.
    """
    Fbar = np.asarray(Fbar, dtype=float)
    st = space.start_step(Fbar, prev)
    trace: list[ReducedIter] = []
    small_step = False
    phi = space.phibar @ space.tangent(st)
    for it in range(max_iter + 1):
        u = space.reconstruct(st)
        t0 = time.perf_counter()
        try:
            sys_ = assembler(problem, FullState(u, Fbar))
        except InvertedElementError:
            return ReducedStepResult(st, u, Fbar, False, "inverted element", trace)
        t1 = time.perf_counter()
        g_red = phi.T @ sys_.g
        res_red = float(np.max(np.abs(g_red)))
        res_full = float(np.max(np.abs(sys_.g)))
        if recorder is not None:
            recorder.add(sys_.g, path, step, it)
        if not np.isfinite(res_red) or not np.isfinite(res_full):
            trace.append(ReducedIter(it, res_red, res_full, t1 - t0, 0.0))
            return ReducedStepResult(st, u, Fbar, False, "non-finite residual", trace)
        if res_red <= tol or small_step:
            trace.append(ReducedIter(it, res_red, res_full, t1 - t0, 0.0))
            if recorder is not None:
                recorder.mark_last_converged()
            return ReducedStepResult(st, u, Fbar, True, "", trace)
        if it == max_iter:
            trace.append(ReducedIter(it, res_red, res_full, t1 - t0, 0.0))
            break
        K_red = phi.T @ (sys_.K @ phi)
        try:
            dy = sla.solve(K_red, -g_red, assume_a="sym")
        except (np.linalg.LinAlgError, ValueError):
            trace.append(ReducedIter(it, res_red, res_full, t1 - t0, 0.0))
            return ReducedStepResult(st, u, Fbar, False, "singular K_red", trace)
        dubar = space.tangent(st) @ dy
        space.increment(st, dy)
        small_step = np.linalg.norm(dubar) <= step_tol * max(np.linalg.norm(st.ubar), 1e-300)
        if space.refresh(st) or space.varying_tangent:
            phi = space.phibar @ space.tangent(st)
        trace.append(ReducedIter(it, res_red, res_full, t1 - t0, time.perf_counter() - t1))
    return ReducedStepResult(st, space.reconstruct(st), Fbar, False, "max_iter exceeded", trace)


def reduced_homogenize(phi: np.ndarray, problem: RVEProblem, u: np.ndarray,
                       Fbar) -> HomogenizedResponse:
    """``Abar = (1/V) int A - (1/V) L_red^T S_red`` with ``K_red S_red = L_red``."""
    state = FullState(np.asarray(u, dtype=float), np.asarray(Fbar, dtype=float))
    V = problem.volume
    K = assemble(problem, state).K
    L = assemble_L(problem, state)
    K_red = phi.T @ (K @ phi)
    L_red = phi.T @ L
    S = sla.solve(K_red, L_red, assume_a="sym")
    Pint, Aint = volume_averages(problem, state)
    Abar = voigt_matrix(Aint) / V - (L_red.T @ S) / V
    return HomogenizedResponse(Pint.reshape(3, 3) / V, Abar, S)


@dataclass
class PathResult:
    steps: list[ReducedStepResult]

    @property
    def n_diverged(self) -> int:
        return sum(not s.converged for s in self.steps)


def reduced_path(space: ReducedSpace, problem: RVEProblem, Fbars, tol: float = 1e-8,
                 max_iter: int = 25, recorder: ResidualRecorder | None = None,
                 path: int = 0) -> PathResult:
    """Solve a load path step by step; a failed step restarts the next from the last good state."""
    prev = None
    out = []
    for k, Fb in enumerate(Fbars):
        res = reduced_newton(space, problem, Fb, prev, tol=tol, max_iter=max_iter,
                             recorder=recorder, path=path, step=k)
        out.append(res)
        if res.converged:
            prev = res.state
    return PathResult(out)
