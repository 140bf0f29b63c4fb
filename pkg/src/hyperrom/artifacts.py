"""Round-trip of problems, campaigns and trained models through ``store``."""

from __future__ import annotations

import numpy as np

from . import store
from .bench.pipeline import Campaign, FomPath, ReductionConfig, build_space
from .config import RunConfig
from .fem import RVEProblem
from .hyper import HyperKernel, HyperModel, MagicPoints, XiWeights
from .material import moduli_from_E_nu
from .mesh import Inclusion, MeshSpec, build_rve_mesh
from .reduce import (LleModel, LleSpace, LpodModel, LpodSpace, PmModel, PmSpace, PodBasis,
                     PodSpace)


def mesh_spec(cfg: RunConfig) -> MeshSpec:
    m = cfg.mesh
    inc = tuple(Inclusion(tuple(float(x) for x in i.center), float(i.radius), int(i.material))
                for i in m.inclusions)
    return MeshSpec(float(m.edge_length), int(m.divisions), inc, int(m.matrix_material))


def build_problem(cfg: RunConfig) -> RVEProblem:
    mats = {k: moduli_from_E_nu(p.E, p.nu, p.variant) for k, p in cfg.materials.items()}
    return RVEProblem(build_rve_mesh(mesh_spec(cfg)), mats)


def reduction_config(cfg: RunConfig, **over) -> ReductionConfig:
    r = cfg.reduction
    kw = dict(method=r.method, d=r.d, d_bar=r.d_bar, k=r.k, N=r.N, n_clusters=r.n_clusters,
              overlap=r.overlap, d_tilde=r.d_tilde, pm_iters=r.pm_iters, pm_reg=r.pm_reg,
              lle_reg=r.lle_reg, seed=cfg.seed)
    kw.update(over)
    return ReductionConfig(**kw)


# -- campaigns ----------------------------------------------------------------


def campaign_arrays(camp: Campaign) -> dict:
    n_paths, n_steps = camp.Fbars.shape[:2]
    return {
        "U": camp.U,
        "Fbar": camp.Fbars.reshape(-1, 9),
        "Pbar": np.concatenate([p.Pbar for p in camp.paths]).reshape(-1, 9),
        "Abar": np.concatenate([p.Abar for p in camp.paths]).reshape(-1, 81),
        "converged": np.concatenate([p.converged for p in camp.paths]).astype(np.int64),
        "iterations": np.concatenate([p.iterations for p in camp.paths]).astype(np.int64),
        "shape": np.array([n_paths, n_steps], dtype=np.int64),
    }


def load_campaign(man: store.Manifest, times=None) -> Campaign:
    n_paths, n_steps = (int(x) for x in man.load("shape"))
    U = man.load("U")
    F = man.load("Fbar").reshape(n_paths, n_steps, 3, 3)
    P = man.load("Pbar").reshape(n_paths, n_steps, 3, 3)
    A = man.load("Abar").reshape(n_paths, n_steps, 9, 9)
    ok = man.load("converged").reshape(n_paths, n_steps).astype(bool)
    its = man.load("iterations").reshape(n_paths, n_steps)
    times = np.zeros(n_paths) if times is None else np.asarray(times, dtype=float)
    paths = [FomPath(U[:, i * n_steps:(i + 1) * n_steps], P[i], A[i], ok[i], its[i], float(times[i]))
             for i in range(n_paths)]
    return Campaign(F, paths)


# -- approximation spaces -------------------------------------------------------


def space_arrays(model) -> dict:
    if isinstance(model, PodBasis):
        return {"psi": model.psi, "singular_values": model.singular_values,
                "n_flagged": np.array([model.n_flagged])}
    if isinstance(model, LpodModel):
        return {"centroids": model.centroids,
                "bases": np.hstack([b.psi for b in model.local_bases]),
                "basis_sizes": np.array([b.d for b in model.local_bases]),
                "labels": np.asarray(model.labels, dtype=np.int64),
                "members": np.concatenate(model.members).astype(np.int64),
                "member_counts": np.array([len(m) for m in model.members]),
                "seed": np.array([model.seed])}
    if isinstance(model, PmModel):
        return {"Vbar": model.Vbar, "Vtilde": model.Vtilde, "Xi": model.Xi, "Y": model.Y,
                "history": np.asarray(model.history), "flagged": model.flagged.astype(np.int64)}
    if isinstance(model, LleModel):
        return {"neighbors": model.neighbors, "W": model.W, "Y": model.Y, "phibar": model.phibar,
                "Ybar": model.Ybar, "U": model.U, "params": model.params.reshape(-1, 9)}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def load_space(man: store.Manifest, U_train: np.ndarray | None = None):
    """Rebuild ``(space, model)`` from a reduce-stage manifest."""
    method = man.params["config"]["reduction"]["method"]
    if method == "pod":
        model = PodBasis(man.load("psi"), man.load("singular_values"), int(man.load("n_flagged")[0]))
        return PodSpace(model), model
    if method == "lpod":
        sizes = man.load("basis_sizes")
        bases = np.split(man.load("bases"), np.cumsum(sizes)[:-1], axis=1)
        members = np.split(man.load("members"), np.cumsum(man.load("member_counts"))[:-1])
        model = LpodModel(man.load("centroids"),
                          tuple(PodBasis(b, np.zeros(0)) for b in bases),
                          man.load("labels"), tuple(members), int(man.load("seed")[0]))
        if U_train is None:
            raise ValueError("LPOD needs the training snapshots")
        space = LpodSpace(model, U_train)
        return space, model
    if method == "pm":
        model = PmModel(man.load("Vbar"), man.load("Vtilde"), man.load("Xi"), man.load("Y"),
                        tuple(man.load("history").tolist()), man.load("flagged").astype(bool))
        return PmSpace(model), model
    if method == "lle":
        model = LleModel(man.load("neighbors"), man.load("W"), man.load("Y"), man.load("phibar"),
                         man.load("Ybar"), man.load("U"), man.load("params").reshape(-1, 3, 3))
        return LleSpace(model, man.params["config"]["reduction"]["N"]), model
    raise ValueError(f"unknown reduction method {method!r}")


def fit_space(cfg: RunConfig, train: Campaign):
    return build_space(reduction_config(cfg), train.U, train.params)


# -- hyperreduced models ----------------------------------------------------------


def hyper_arrays(hm: HyperModel) -> dict:
    out = {"indices": hm.magic.indices, "elements": hm.magic.elements, "dofs": hm.magic.dofs,
           "xi_elements": np.asarray(hm.xi.elements, dtype=np.int64), "xi_values": hm.xi.values,
           "xi_residual": np.array([hm.xi.residual, hm.xi.relative_residual])}
    if hm.left is not None:
        out["left"] = hm.left
    return out


def load_hyper(man: store.Manifest, problem: RVEProblem, space) -> HyperModel:
    h = man.params["config"]["hyper"]
    magic = MagicPoints(man.load("indices"), man.load("elements"), man.load("dofs"))
    res = man.load("xi_residual")
    xi = XiWeights(man.load("xi_elements"), man.load("xi_values"), float(res[0]), float(res[1]))
    left = man.load("left") if "left" in man.files else None
    return HyperModel(h["method"], magic, np.ascontiguousarray(space.phibar[magic.dofs]), left, xi,
                      HyperKernel(problem, magic), problem.D, problem.volume,
                      bool(h["lspg_paper_sign"]))
