"""Online view of an approximation space in intermediate coordinates.

Every space is written as ``u = phibar ubar`` with a fixed orthonormal
``phibar`` (D x d_bar) and a tangent ``phi_t = d ubar / d y`` (d_bar x d).
Solvers only touch ``ubar`` and ``phi_t``; the product with ``phibar`` is
formed on the rows they need.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .lle import LleModel, LocalChart, embed_init_bar, local_chart
from .lpod import LpodModel
from .pm import PmModel, quad, quad_jacobian
from .pod import PodBasis, numerical_rank, pod_fit


@dataclass
class SpaceState:
    y: np.ndarray
    ubar: np.ndarray
    key: int = 0  # cluster id (LPOD) or chart counter (LLE)
    chart: LocalChart | None = None
    switches: int = 0
    t_chart: float = 0.0


class ReducedSpace:
    """Base class; subclasses define how ``ubar`` depends on ``y``."""

    name = "base"
    phibar: np.ndarray
    # True when the tangent must be re-evaluated after every increment
    varying_tangent = False

    @property
    def d(self) -> int:
        raise NotImplementedError

    @property
    def d_bar(self) -> int:
        return self.phibar.shape[1]

    def start_step(self, Fbar, prev: SpaceState | None) -> SpaceState:
        raise NotImplementedError

    def tangent(self, st: SpaceState) -> np.ndarray:
        raise NotImplementedError

    def increment(self, st: SpaceState, dy: np.ndarray) -> None:
        raise NotImplementedError

    def refresh(self, st: SpaceState) -> bool:
        """Post-increment update; True when the tangent changed."""
        return False

    def reconstruct(self, st: SpaceState) -> np.ndarray:
        return self.phibar @ st.ubar


class PodSpace(ReducedSpace):
    name = "pod"

    def __init__(self, basis: PodBasis | np.ndarray):
        psi = basis.psi if isinstance(basis, PodBasis) else np.asarray(basis, dtype=float)
        self.phibar = psi
        self._eye = np.eye(psi.shape[1])

    @property
    def d(self):
        return self.phibar.shape[1]

    def start_step(self, Fbar, prev):
        y = np.zeros(self.d) if prev is None else prev.y.copy()
        return SpaceState(y, y.copy())

    def tangent(self, st):
        return self._eye

    def increment(self, st, dy):
        st.y += dy
        st.ubar = st.y.copy()


class FixedChartSpace(ReducedSpace):
    """Affine space ``phibar (phi_t y + u0_bar)`` with a frozen chart."""

    name = "chart"

    def __init__(self, phibar, phi_t, u0_bar=None):
        self.phibar = np.asarray(phibar, dtype=float)
        self.phi_t = np.asarray(phi_t, dtype=float)
        self.u0_bar = np.zeros(self.phibar.shape[1]) if u0_bar is None else np.asarray(u0_bar)

    @property
    def d(self):
        return self.phi_t.shape[1]

    def start_step(self, Fbar, prev):
        y = np.zeros(self.d) if prev is None else prev.y.copy()
        return SpaceState(y, self.phi_t @ y + self.u0_bar)

    def tangent(self, st):
        return self.phi_t

    def increment(self, st, dy):
        st.y += dy
        st.ubar = st.ubar + self.phi_t @ dy


def _lossless_basis(U: np.ndarray) -> np.ndarray:
    full = pod_fit(U, min(U.shape))
    return full.psi[:, : max(1, numerical_rank(full.singular_values))]


class LpodSpace(ReducedSpace):
    """Local POD with incremental updates ``ubar += phi_t[c] dy`` and nearest-centroid switching."""

    name = "lpod"

    def __init__(self, model: LpodModel, U: np.ndarray, max_switches: int = 3):
        self.model = model
        self.phibar = _lossless_basis(U)
        self.tangents = [self.phibar.T @ b.psi for b in model.local_bases]
        self.centroids_bar = model.centroids @ self.phibar  # (k, d_bar)
        self.max_switches = max_switches

    @property
    def d(self):
        return self.tangents[0].shape[1]

    def _nearest(self, ubar):
        return int(np.argmin(np.linalg.norm(self.centroids_bar - ubar[None, :], axis=1)))

    def start_step(self, Fbar, prev):
        ubar = np.zeros(self.d_bar) if prev is None else prev.ubar.copy()
        c = self._nearest(ubar)
        return SpaceState(self.tangents[c].T @ ubar, ubar, key=c)

    def tangent(self, st):
        return self.tangents[st.key]

    def increment(self, st, dy):
        st.ubar = st.ubar + self.tangents[st.key] @ dy
        st.y = st.y + dy

    def refresh(self, st):
        c = self._nearest(st.ubar)
        if c == st.key or st.switches >= self.max_switches:
            return False
        st.key = c
        st.switches += 1
        st.y = self.tangents[c].T @ st.ubar
        return True


class PmSpace(ReducedSpace):
    name = "pm"
    varying_tangent = True

    def __init__(self, model: PmModel):
        self.model = model
        self.phibar = np.hstack([model.Vbar, model.Vtilde])
        self._d = model.Vbar.shape[1]

    @property
    def d(self):
        return self._d

    def _ubar(self, y):
        return np.concatenate([y, self.model.Xi @ quad(y)])

    def start_step(self, Fbar, prev):
        y = np.zeros(self.d) if prev is None else prev.y.copy()
        return SpaceState(y, self._ubar(y))

    def tangent(self, st):
        return np.vstack([np.eye(self.d), self.model.Xi @ quad_jacobian(st.y)])

    def increment(self, st, dy):
        st.y = st.y + dy
        st.ubar = self._ubar(st.y)


class LleSpace(ReducedSpace):
    """Chart fitted from the N snapshots nearest the step's target Fbar, frozen for the step."""

    name = "lle"

    def __init__(self, model: LleModel, N: int | None = None):
        self.model = model
        self.phibar = model.phibar
        self.N = 2 * model.d if N is None else N

    @property
    def d(self):
        return self.model.d

    def start_step(self, Fbar, prev):
        t0 = time.perf_counter()
        chart = local_chart(self.model, Fbar, self.N)
        ubar_prev = np.zeros(self.d_bar) if prev is None else prev.ubar
        y = embed_init_bar(chart, ubar_prev)
        ubar = chart.phi_t @ y + chart.u0_bar
        key = 0 if prev is None else prev.key + 1
        return SpaceState(y, ubar, key=key, chart=chart, t_chart=time.perf_counter() - t0)

    def tangent(self, st):
        return st.chart.phi_t

    def increment(self, st, dy):
        st.y = st.y + dy
        st.ubar = st.ubar + st.chart.phi_t @ dy
