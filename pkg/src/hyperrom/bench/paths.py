"""Random macroscopic load paths ``Fbar_k = Fbar_{k-1} + dlp N_LP + dls N_LS,k``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LoadPathError(RuntimeError):
    pass


def unit_direction(rng: np.random.Generator) -> np.ndarray:
    N = rng.standard_normal((3, 3))
    return N / np.linalg.norm(N)


@dataclass(frozen=True, eq=False)
class LoadPath:
    N_LP: np.ndarray  # (3, 3)
    N_LS: np.ndarray  # (n_steps, 3, 3)
    dlp: float
    dls: float
    path_id: int = 0

    @property
    def n_steps(self) -> int:
        return self.N_LS.shape[0]

    def Fbars(self) -> np.ndarray:
        increments = self.dlp * self.N_LP[None] + self.dls * self.N_LS
        return np.eye(3)[None] + np.cumsum(increments, axis=0)


def gen_load_paths(seed: int, n_paths: int, n_steps: int, dlp: float = 0.03,
                   dls: float = 0.015, max_attempts: int = 100) -> list[LoadPath]:
    """Deterministic given ``seed``; a path with any ``det Fbar <= 0`` is resampled."""
    if n_paths < 1 or n_steps < 1 or dlp < 0 or dls < 0:
        raise ValueError("n_paths, n_steps must be positive and step sizes nonnegative")
    rng = np.random.default_rng(seed)
    paths = []
    for p in range(n_paths):
        for _ in range(max_attempts):
            N_LP = unit_direction(rng)
            N_LS = np.stack([unit_direction(rng) for _ in range(n_steps)])
            path = LoadPath(N_LP, N_LS, float(dlp), float(dls), p)
            if np.all(np.linalg.det(path.Fbars()) > 0):
                paths.append(path)
                break
        else:
            raise LoadPathError(f"path {p}: no admissible sample in {max_attempts} attempts")
    return paths
