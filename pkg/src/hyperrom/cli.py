"""Command-line pipeline: mesh -> fom run -> train reduce -> rom run --galerkin
--record-residuals -> train hyper -> rom run --hyper, plus sweep, diag, verify.

Every stage writes ``<output>/<stage>/manifest.json`` holding the resolved
configuration, a digest of the configuration sections the stage depends on,
and the digests of the upstream manifests. A stage whose manifest already
matches is reused. The last resolved configuration is kept in
``<output>/config.yaml`` and is the base for the next invocation unless
``--config`` is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import artifacts, config, store
from .bench.metrics import correlation_dimension, eig_decay
from .bench.paths import gen_load_paths
from .bench.pipeline import (HyperConfig, fom_path, galerkin_validation, hyper_from_training,
                             hyper_validation, record_residuals, run_fom_campaign, summarize,
                             train_magic)
from .bench.sweep import sweep
from .galerkin import ResidualSet
from .hyper import run_hyper_path

log = logging.getLogger("hyperrom")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_DIVERGED, EXIT_VERIFY = 0, 2, 3, 4, 5

STAGE_DIRS = {"mesh": "mesh", "fom": "fom", "reduce": "reduce", "galerkin": "galerkin",
              "hyper": "hyper", "rom": "rom", "rom_galerkin": "rom_galerkin", "sweep": "sweep",
              "diag": "diag"}
STAGE_COMMANDS = {"mesh": "hyperrom mesh", "fom": "hyperrom fom run",
                  "reduce": "hyperrom train reduce",
                  "galerkin": "hyperrom rom run --galerkin --record-residuals",
                  "hyper": "hyperrom train hyper", "rom": "hyperrom rom run --hyper",
                  "rom_galerkin": "hyperrom rom run --galerkin", "sweep": "hyperrom sweep",
                  "diag": "hyperrom diag"}
STAGE_ORDER = ("mesh", "fom", "reduce", "galerkin", "hyper", "rom", "rom_galerkin", "sweep",
               "diag")


class StaleArtifactError(store.MissingArtifactError):
    """Upstream artifact exists but was produced under a different configuration."""


class VerificationError(RuntimeError):
    pass


# -- configuration keys -------------------------------------------------------------


def echo(cfg: config.RunConfig) -> dict:
    """Resolved configuration as written into manifests. The output location
    is left out so relocated runs stay byte-identical."""
    d = cfg.to_dict()
    d.pop("output")
    return d


def stage_inputs(cfg: config.RunConfig, stage: str) -> dict:
    c = cfg.to_dict()
    out = {"mesh": c["mesh"], "materials": c["materials"]}
    if stage == "mesh":
        return out
    out.update(campaign=c["campaign"], solver=c["solver"], seed=c["seed"])
    if stage in ("fom", "diag"):
        return out
    if stage == "sweep":
        out.update(sweep=c["sweep"], reduction=c["reduction"], hyper=c["hyper"])
        return out
    out["reduction"] = c["reduction"]
    if stage in ("reduce", "galerkin", "rom_galerkin"):
        return out
    out["hyper"] = c["hyper"]
    return out


def stage_key(cfg, stage) -> str:
    return store.sha256_bytes(store.dumps(stage_inputs(cfg, stage)).encode())


def stage_dir(out: Path, stage: str) -> Path:
    return out / STAGE_DIRS[stage]


def require(out: Path, stage: str, cfg) -> store.Manifest:
    path = stage_dir(out, stage) / "manifest.json"
    if not path.exists():
        raise store.MissingArtifactError(
            f"required stage '{stage}' has no artifact at {path}; run `{STAGE_COMMANDS[stage]}` first")
    man = store.read_manifest(path)
    if man.params.get("stage_key") != stage_key(cfg, stage):
        raise StaleArtifactError(
            f"stage '{stage}' at {path} was produced under a different configuration; "
            f"rerun `{STAGE_COMMANDS[stage]}`")
    return man


def upstream_digests(ups: dict) -> dict:
    return {k: store.sha256_file(m.path) for k, m in sorted(ups.items())}


def cached(out: Path, stage: str, cfg, ups: dict) -> store.Manifest | None:
    path = stage_dir(out, stage) / "manifest.json"
    if not path.exists():
        return None
    try:
        man = store.verify(path)
    except store.StoreError:
        return None
    if (man.params.get("stage_key") == stage_key(cfg, stage)
            and man.params.get("upstream") == upstream_digests(ups)):
        return man
    return None


def stage_params(cfg, stage, ups) -> dict:
    return {"config": echo(cfg), "stage_key": stage_key(cfg, stage),
            "upstream": upstream_digests(ups)}


def clear_stage(directory: Path) -> None:
    if directory.exists():
        for p in directory.iterdir():
            if p.is_file() and (p.suffix in (".hrmb", ".csv", ".json", ".txt")):
                p.unlink()


def finish(out: Path, stage: str, cfg, ups: dict, arrays: dict, meta=None, extra_files=None,
           runtime=None) -> store.Manifest:
    directory = stage_dir(out, stage)
    man = store.write_artifact(directory, stage, arrays, stage_params(cfg, stage, ups),
                               {"seed": cfg.seed}, meta, extra_files)
    if runtime is not None:
        store.write_json(directory / "runtime.json", runtime)
    return man


def read_runtime(man: store.Manifest) -> dict:
    path = man.root / "runtime.json"
    return json.loads(path.read_text()) if path.exists() else {}


def config_of(man: store.Manifest) -> config.RunConfig:
    return config.from_dict(man.params["config"])


# -- stages --------------------------------------------------------------------


def _reuse(out, stage, cfg, ups, force):
    if force:
        return None
    man = cached(out, stage, cfg, ups)
    if man is not None:
        print(f"{stage}: up to date ({man.path})")
    return man


def cmd_mesh(cfg, out, args):
    if _reuse(out, "mesh", cfg, {}, args.force):
        return EXIT_OK
    problem = artifacts.build_problem(cfg)
    mesh = problem.mesh
    clear_stage(stage_dir(out, "mesh"))
    man = finish(out, "mesh", cfg, {}, {
        "node_coords": mesh.node_coords, "elements": mesh.elements.astype(np.int64),
        "element_material": mesh.element_material.astype(np.int64)},
        meta={"D": problem.D, "n_elements": int(mesh.elements.shape[0]),
              "n_nodes": int(mesh.n_nodes)})
    print(f"mesh: {mesh.elements.shape[0]} elements, D = {problem.D} -> {man.path}")
    return EXIT_OK


def _campaign_Fbars(cfg):
    c = cfg.campaign
    return np.stack([p.Fbars() for p in gen_load_paths(cfg.seed, c.paths, c.steps, c.dlp, c.dls)])


def _check_budget(what: str, n_div: int, cfg) -> int:
    if n_div > cfg.divergence_budget:
        print(f"{what}: {n_div} diverged states exceed the budget of {cfg.divergence_budget}",
              file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_fom(cfg, out, args):
    ups = {"mesh": require(out, "mesh", cfg)}
    man = _reuse(out, "fom", cfg, ups, args.force)
    if man is None:
        problem = artifacts.build_problem(cfg)
        Fbars = _campaign_Fbars(cfg)
        t0 = time.perf_counter()
        camp = run_fom_campaign(problem, Fbars, cfg.solver.tol, cfg.threads,
                                cfg.solver.max_iter)
        n_div = int(sum((~p.converged).sum() for p in camp.paths))
        clear_stage(stage_dir(out, "fom"))
        man = finish(out, "fom", cfg, ups, artifacts.campaign_arrays(camp),
                     meta={"D": problem.D, "n_snapshots": int(camp.U.shape[1]), "n_diverged": n_div},
                     runtime={"path_times": [p.time for p in camp.paths],
                              "wall": time.perf_counter() - t0})
        print(f"fom: {camp.U.shape[1]} snapshots ({n_div} diverged) -> {man.path}")
    return _check_budget("fom", int(man.meta["n_diverged"]), cfg)


def _load_campaign(fom_man):
    return artifacts.load_campaign(fom_man, read_runtime(fom_man).get("path_times"))


def _train(cfg, camp):
    return camp.subset(range(cfg.campaign.train_paths))


def cmd_train_reduce(cfg, out, args):
    ups = {"fom": require(out, "fom", cfg)}
    if _reuse(out, "reduce", cfg, ups, args.force):
        return EXIT_OK
    train = _train(cfg, _load_campaign(ups["fom"]))
    t0 = time.perf_counter()
    space, model = artifacts.fit_space(cfg, train)
    clear_stage(stage_dir(out, "reduce"))
    man = finish(out, "reduce", cfg, ups, artifacts.space_arrays(model),
                 meta={"d": space.d, "d_bar": space.d_bar, "n_snapshots": int(train.U.shape[1])},
                 runtime={"wall": time.perf_counter() - t0})
    print(f"reduce: {cfg.reduction.method} d = {space.d}, d_bar = {space.d_bar} -> {man.path}")
    return EXIT_OK


def _load_space(cfg, out):
    fom = require(out, "fom", cfg)
    red = require(out, "reduce", cfg)
    camp = _load_campaign(fom)
    space, _ = artifacts.load_space(red, _train(cfg, camp).U)
    return fom, red, camp, space


def cmd_rom_galerkin(cfg, out, args):
    problem = artifacts.build_problem(cfg)
    fom, red, camp, space = _load_space(cfg, out)
    if args.record_residuals:
        ups = {"reduce": red}
        man = _reuse(out, "galerkin", cfg, ups, args.force)
        if man is None:
            train = _train(cfg, camp)
            t0 = time.perf_counter()
            rs, n_div = record_residuals(space, problem, train.Fbars, cfg.solver.tol, cfg.threads)
            clear_stage(stage_dir(out, "galerkin"))
            man = finish(out, "galerkin", cfg, ups, {
                "G": rs.G, "path": rs.path.astype(np.int64), "step": rs.step.astype(np.int64),
                "iteration": rs.iteration.astype(np.int64),
                "converged": rs.converged.astype(np.int64)},
                meta={"n_residuals": rs.size, "galerkin_diverged": int(n_div)},
                runtime={"wall": time.perf_counter() - t0})
            print(f"galerkin: {rs.size} residual snapshots ({n_div} diverged steps) -> {man.path}")
        return EXIT_OK
    ups = {"reduce": red}
    man = _reuse(out, "rom_galerkin", cfg, ups, args.force)
    if man is None:
        rom = galerkin_validation(space, problem, camp.Fbars, cfg.solver.tol, cfg.solver.max_iter,
                                  cfg.threads)
        man = _write_rom(out, "rom_galerkin", cfg, ups, space, rom, camp)
    return _check_budget("rom", int(man.meta["n_diverged"]), cfg)


def _write_rom(out, stage, cfg, ups, space, rom, camp):
    s = summarize(space, rom, camp)
    directory = stage_dir(out, stage)
    clear_stage(directory)
    directory.mkdir(parents=True, exist_ok=True)
    report = {"error_u": s.error_u, "error_P": s.error_P, "n_diverged": s.n_diverged,
              "n_states": s.n_states, "iterations": s.iterations}
    store.write_json(directory / "report.json", report)
    arrays = {"ubar": np.hstack([r.ubar for r in rom]),
              "Pbar": np.concatenate([r.Pbar for r in rom]).reshape(-1, 9),
              "converged": np.concatenate([r.converged for r in rom]).astype(np.int64),
              "iterations": np.concatenate([r.iterations for r in rom]).astype(np.int64)}
    man = finish(out, stage, cfg, ups, arrays, meta=report,
                 extra_files={"report.json": "report.json"},
                 runtime={"rom_time": s.rom_time, "fom_time": s.fom_time,
                          "speedup": s.speedup if s.rom_time > 0 else None,
                          "timings": s.timings})
    err = "undefined" if s.error_u is None else f"{s.error_u:.4f}% (P {s.error_P:.4f}%)"
    print(f"{stage}: error {err}, {s.n_diverged}/{s.n_states} diverged, "
          f"speedup {s.speedup:.1f}x -> {man.path}")
    return man


def _hyper_config(cfg) -> HyperConfig:
    h = cfg.hyper
    return HyperConfig(h.method, h.m, h.eps, h.xi_tol, h.lspg_paper_sign)


def cmd_train_hyper(cfg, out, args):
    gal = require(out, "galerkin", cfg)
    ups = {"galerkin": gal}
    if _reuse(out, "hyper", cfg, ups, args.force):
        return EXIT_OK
    problem = artifacts.build_problem(cfg)
    _, _, camp, space = _load_space(cfg, out)
    rs = ResidualSet(gal.load("G"), gal.load("path"), gal.load("step"), gal.load("iteration"),
                     gal.load("converged").astype(bool))
    t0 = time.perf_counter()
    ht = train_magic(problem, rs, _train(cfg, camp), cfg.hyper.m, cfg.hyper.xi_tol)
    hm = hyper_from_training(problem, space, ht, _hyper_config(cfg))
    clear_stage(stage_dir(out, "hyper"))
    man = finish(out, "hyper", cfg, ups, artifacts.hyper_arrays(hm),
                 meta={"m": hm.magic.m, "E_m": int(len(hm.magic.elements)),
                       "I_m": int(len(hm.magic.dofs)), "xi_nonzero": int(len(hm.xi.elements))},
                 runtime={"wall": time.perf_counter() - t0})
    print(f"hyper: {cfg.hyper.method} m = {hm.magic.m}, |E_m| = {len(hm.magic.elements)}, "
          f"|I_m| = {len(hm.magic.dofs)} -> {man.path}")
    return EXIT_OK


def _load_hyper(cfg, out):
    problem = artifacts.build_problem(cfg)
    fom, red, camp, space = _load_space(cfg, out)
    hman = require(out, "hyper", cfg)
    return problem, camp, space, hman, artifacts.load_hyper(hman, problem, space)


def cmd_rom_hyper(cfg, out, args):
    hman = require(out, "hyper", cfg)
    ups = {"hyper": hman}
    man = _reuse(out, "rom", cfg, ups, args.force)
    if man is None:
        problem, camp, space, _, hm = _load_hyper(cfg, out)
        rom = hyper_validation(hm, space, camp.Fbars, cfg.solver.tol, cfg.solver.max_iter,
                               cfg.threads)
        man = _write_rom(out, "rom", cfg, ups, space, rom, camp)
    return _check_budget("rom", int(man.meta["n_diverged"]), cfg)


def cmd_rom(cfg, out, args):
    if args.hyper:
        return cmd_rom_hyper(cfg, out, args)
    return cmd_rom_galerkin(cfg, out, args)


def cmd_sweep(cfg, out, args):
    fom = require(out, "fom", cfg)
    ups = {"fom": fom}
    if _reuse(out, "sweep", cfg, ups, args.force):
        return EXIT_OK
    problem = artifacts.build_problem(cfg)
    camp = _load_campaign(fom)
    sw = cfg.sweep
    directory = stage_dir(out, "sweep")
    clear_stage(directory)
    rep = sweep(problem, _train(cfg, camp), camp, sw.methods, sw.hypers, sw.d, sw.m,
                artifacts.reduction_config(cfg), _hyper_config(cfg), cfg.solver.tol,
                cfg.solver.max_iter, cfg.threads)
    man = rep.write(directory, stage_params(cfg, "sweep", ups), {"seed": cfg.seed})
    for method, hyper in sorted({(c.key.method, c.key.hyper) for c in rep.cells}):
        print(rep.table(method, hyper))
    print(f"sweep: {len(rep.cells)} cells -> {man.path}")
    return EXIT_OK


def cmd_diag(cfg, out, args):
    fom = require(out, "fom", cfg)
    ups = {"fom": fom}
    if _reuse(out, "diag", cfg, ups, args.force):
        return EXIT_OK
    from scipy.spatial.distance import pdist

    U = _train(cfg, _load_campaign(fom)).U
    vals = eig_decay(U)
    dist = pdist(U.T)
    dist = dist[dist > 0]
    r_grid = np.geomspace(np.quantile(dist, 1e-3), dist.max(), args.r_points)
    curve = correlation_dimension(U, r_grid)
    directory = stage_dir(out, "diag")
    clear_stage(directory)
    directory.mkdir(parents=True, exist_ok=True)
    top = vals[0] if vals[0] > 0 else 1.0
    store.write_csv(directory / "eig_decay.csv",
                    [{"index": i + 1, "eigenvalue": float(v), "relative": float(v / top)}
                     for i, v in enumerate(vals)], ["index", "eigenvalue", "relative"])
    store.write_csv(directory / "correlation_dimension.csv",
                    [{"r": float(r), "C": float(c), "slope": float(s)}
                     for r, c, s in zip(curve.r, curve.C, curve.slope)], ["r", "C", "slope"])
    man = finish(out, "diag", cfg, ups, {},
                 extra_files={"eig_decay.csv": "eig_decay.csv",
                              "correlation_dimension.csv": "correlation_dimension.csv"})
    print(f"diag: {len(vals)} eigenvalues, {len(curve.r)} correlation radii -> {man.path}")
    return EXIT_OK


# -- verify ---------------------------------------------------------------------


def _same_bits(a: np.ndarray, b: np.ndarray) -> bool:
    a, b = np.ascontiguousarray(a, dtype=float), np.ascontiguousarray(b, dtype=float)
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def cmd_verify(cfg, out, args):
    present = {s: stage_dir(out, s) / "manifest.json" for s in STAGE_DIRS
               if (stage_dir(out, s) / "manifest.json").exists()}
    if not present:
        raise store.MissingArtifactError(f"no stage manifests under {out}")
    mans = {}
    for s, path in present.items():
        try:
            mans[s] = store.verify(path)
        except store.MissingArtifactError as exc:
            raise VerificationError(str(exc)) from None
        print(f"verify: {s} hashes ok")
    stale = set()
    for s in STAGE_ORDER:
        if s not in mans:
            continue
        for up, digest in mans[s].params.get("upstream", {}).items():
            if up not in present:
                raise VerificationError(f"{s}: upstream stage '{up}' is missing")
            if up in stale or store.sha256_file(present[up]) != digest:
                stale.add(s)
                print(f"verify: warning: {s} is stale ('{up}' was rebuilt after it); not replayed")
                break
    if "fom" in mans:
        fcfg = config_of(mans["fom"])
        problem = artifacts.build_problem(fcfg)
        camp = artifacts.load_campaign(mans["fom"])
        with threadpool_limits(1):
            replay = fom_path(problem, camp.Fbars[0][:1], fcfg.solver.tol, fcfg.solver.max_iter)
        if not _same_bits(replay.U[:, 0], camp.paths[0].U[:, 0]):
            raise VerificationError("fom replay of path 0, step 0 differs from the stored snapshot")
        print("verify: fom replay bit-exact")
    if all(s in mans and s not in stale for s in ("fom", "reduce", "galerkin", "hyper", "rom")):
        rcfg = config_of(mans["rom"])
        problem = artifacts.build_problem(rcfg)
        camp = artifacts.load_campaign(mans["fom"])
        space, _ = artifacts.load_space(mans["reduce"], _train(rcfg, camp).U)
        hm = artifacts.load_hyper(mans["hyper"], problem, space)
        with threadpool_limits(1):
            res = run_hyper_path(hm, space, camp.Fbars[0][:1], tol=rcfg.solver.tol,
                                 max_iter=rcfg.solver.max_iter)
        if not _same_bits(res.steps[0].state.ubar, mans["rom"].load("ubar")[:, 0]):
            raise VerificationError("hyper replay of path 0, step 0 differs from the stored state")
        print("verify: hyper replay bit-exact")
    print("verify: ok")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("common options")
    g.add_argument("--config", help="YAML or JSON run configuration")
    g.add_argument("--output", "--out", dest="output", help="output directory")
    g.add_argument("--threads", type=int, help="cap on parallel workers (default: available cores)")
    g.add_argument("--seed", type=int, help="master seed (overrides $HYPERROM_SEED)")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. reduction.d=30 (repeatable)")
    g.add_argument("--force", action="store_true", help="recompute even if up to date")
    g.add_argument("-v", "--verbose", action="count", default=0)


def _grid(cast):
    def parse(text):
        try:
            return [cast(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


# (attribute, dotted config key)
FLAG_KEYS = [
    ("divisions", "mesh.divisions"), ("edge_length", "mesh.edge_length"),
    ("paths", "campaign.paths"), ("train_paths", "campaign.train_paths"),
    ("steps", "campaign.steps"), ("dlp", "campaign.dlp"), ("dls", "campaign.dls"),
    ("tol", "solver.tol"), ("max_iter", "solver.max_iter"),
    ("reduce_method", "reduction.method"), ("d", "reduction.d"), ("d_bar", "reduction.d_bar"),
    ("k", "reduction.k"), ("N", "reduction.N"), ("n_clusters", "reduction.n_clusters"),
    ("d_tilde", "reduction.d_tilde"), ("hyper_method", "hyper.method"), ("m", "hyper.m"),
    ("eps", "hyper.eps"), ("grid_methods", "sweep.methods"), ("grid_hypers", "sweep.hypers"),
    ("grid_d", "sweep.d"), ("grid_m", "sweep.m"), ("budget", "divergence_budget"),
]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hyperrom", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="build and store the periodic RVE mesh")
    _common(p)
    p.add_argument("--divisions", type=int)
    p.add_argument("--edge-length", type=float)
    p.set_defaults(func=cmd_mesh)

    fom = sub.add_parser("fom", help="full-order campaigns").add_subparsers(dest="action", required=True)
    p = fom.add_parser("run", help="solve the random load-path campaign")
    _common(p)
    for flag, typ in (("--paths", int), ("--train-paths", int), ("--steps", int), ("--dlp", float),
                      ("--dls", float), ("--tol", float), ("--budget", int)):
        p.add_argument(flag, type=typ)
    p.set_defaults(func=cmd_fom)

    train = sub.add_parser("train", help="offline training").add_subparsers(dest="action", required=True)
    p = train.add_parser("reduce", help="fit the approximation space")
    _common(p)
    p.add_argument("--method", dest="reduce_method", choices=config.REDUCTION_METHODS)
    for flag, dest in (("--d", "d"), ("--d-bar", "d_bar"), ("--k", "k"), ("--N", "N"),
                       ("--clusters", "n_clusters"), ("--d-tilde", "d_tilde")):
        p.add_argument(flag, dest=dest, type=int)
    p.set_defaults(func=cmd_train_reduce)
    p = train.add_parser("hyper", help="select magic points and fit the hyperreduced model")
    _common(p)
    p.add_argument("--method", dest="hyper_method", choices=config.HYPER_METHODS)
    p.add_argument("--m", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--lspg-paper-sign", action="store_true", default=None)
    p.set_defaults(func=cmd_train_hyper)

    rom = sub.add_parser("rom", help="online runs").add_subparsers(dest="action", required=True)
    p = rom.add_parser("run", help="Galerkin or hyperreduced runs over the campaign")
    _common(p)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--galerkin", action="store_true")
    mode.add_argument("--hyper", action="store_true")
    p.add_argument("--record-residuals", action="store_true",
                   help="with --galerkin: record residual snapshots on the training paths")
    p.add_argument("--tol", type=float)
    p.add_argument("--budget", type=int)
    p.set_defaults(func=cmd_rom)

    p = sub.add_parser("sweep", help="method x hyper x d x m grid")
    _common(p)
    p.add_argument("--method", dest="grid_methods", type=_grid(str))
    p.add_argument("--hyper", dest="grid_hypers", type=_grid(str))
    p.add_argument("--d", dest="grid_d", type=_grid(int))
    p.add_argument("--m", dest="grid_m", type=_grid(int))
    p.add_argument("--lspg-paper-sign", action="store_true", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diag", help="eigenvalue decay and correlation dimension")
    _common(p)
    p.add_argument("--r-points", type=int, default=40)
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("verify", help="re-check hashes and replay one step bit-exactly")
    _common(p)
    p.set_defaults(func=cmd_verify)
    return ap


def resolve_config(args, env=None) -> tuple[config.RunConfig, Path]:
    env = dict(os.environ if env is None else env)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise config.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = yaml.safe_load(value)
    for attr, key in FLAG_KEYS:
        if getattr(args, attr, None) is not None:
            overrides[key] = getattr(args, attr)
    if getattr(args, "lspg_paper_sign", None):
        overrides["hyper.lspg_paper_sign"] = True
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.seed is not None:
        overrides["seed"] = args.seed
        env.pop(config.SEED_ENV, None)

    path = args.config
    file_output = config.read_file(path).get("output") if path else None
    out = Path(args.output or file_output or config.RunConfig.output)
    if path is None and (out / "config.yaml").exists():
        path = out / "config.yaml"
    overrides["output"] = str(out)
    # --paths alone shrinks the training subset rather than failing validation
    if getattr(args, "paths", None) is not None and getattr(args, "train_paths", None) is None:
        base = config.resolve(path, {k: v for k, v in overrides.items() if k != "campaign.paths"}, env)
        overrides["campaign.train_paths"] = min(base.campaign.train_paths, args.paths)
    return config.resolve(path, overrides, env), out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, out = resolve_config(args)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.yaml").write_text(config.dump(cfg))
        with threadpool_limits(cfg.threads):
            return args.func(cfg, out, args)
    except config.ConfigError as exc:
        print(f"hyperrom: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except store.MissingArtifactError as exc:
        print(f"hyperrom: missing dependency: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (VerificationError, store.StoreError) as exc:
        print(f"hyperrom: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
