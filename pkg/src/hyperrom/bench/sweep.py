"""Grid sweeps over reduction method x hyperreduction method x d x m."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..fem import RVEProblem
from ..hyper.model import METHODS as HYPER_METHODS
from .. import store
from .pipeline import (REDUCTION_METHODS, Campaign, HyperConfig, ReductionConfig, build_space,
                       hyper_from_training, hyper_validation, record_residuals, summarize,
                       train_magic)

log = logging.getLogger(__name__)

TIMING_CATEGORIES = ("chart", "reconstruct", "assemble", "project", "solve", "homogenize")

REPORT_COLUMNS = ["method", "hyper", "d", "m", "m_used", "error_u", "error_P", "n_diverged",
                  "n_states", "galerkin_diverged", "iterations", "failure"]
RUNTIME_COLUMNS = (["method", "hyper", "d", "m", "rom_time", "fom_time", "speedup",
                    "time_per_iteration", "category_total"] + list(TIMING_CATEGORIES))
PARETO_COLUMNS = ["method", "hyper", "d", "m", "relative_runtime", "error_u", "error_P",
                  "pareto_u", "pareto_P"]


@dataclass(frozen=True, order=True)
class CellKey:
    method: str
    hyper: str
    d: int
    m: int


@dataclass
class CellResult:
    key: CellKey
    error_u: float | None = None
    error_P: float | None = None
    n_diverged: int = 0
    n_states: int = 0
    galerkin_diverged: int = 0
    m_used: int | None = None
    iterations: int = 0
    rom_time: float = 0.0
    fom_time: float = 0.0
    timings: dict = field(default_factory=dict)
    failure: str | None = None  # training or runtime failure; the cell then has no errors

    @property
    def ok(self) -> bool:
        """Error defined: trained, ran, and no state diverged."""
        return self.failure is None and self.n_diverged == 0 and self.error_u is not None

    @property
    def speedup(self) -> float | None:
        return self.fom_time / self.rom_time if self.rom_time > 0 else None

    @property
    def time_per_iteration(self) -> float | None:
        """In-loop time (reconstruct, assemble, project, solve) per Newton iteration."""
        if not self.iterations:
            return None
        loop = sum(self.timings.get(c, 0.0) for c in ("reconstruct", "assemble", "project", "solve"))
        return loop / self.iterations

    def report_row(self) -> dict:
        k = self.key
        return {"method": k.method, "hyper": k.hyper, "d": k.d, "m": k.m, "m_used": self.m_used,
                "error_u": self.error_u, "error_P": self.error_P, "n_diverged": self.n_diverged,
                "n_states": self.n_states, "galerkin_diverged": self.galerkin_diverged,
                "iterations": self.iterations, "failure": self.failure}

    def runtime_row(self) -> dict:
        k = self.key
        row = {"method": k.method, "hyper": k.hyper, "d": k.d, "m": k.m,
               "rom_time": self.rom_time, "fom_time": self.fom_time, "speedup": self.speedup,
               "time_per_iteration": self.time_per_iteration,
               "category_total": sum(self.timings.get(c, 0.0) for c in TIMING_CATEGORIES)}
        row.update({c: self.timings.get(c, 0.0) for c in TIMING_CATEGORIES})
        return row


def _pareto(points: list[tuple[float, float]]) -> list[bool]:
    """Nondominated flags for (cost, error) pairs, both minimized."""
    flags = []
    for i, (c, e) in enumerate(points):
        dominated = any((c2 <= c and e2 <= e) and (c2 < c or e2 < e)
                        for j, (c2, e2) in enumerate(points) if j != i)
        flags.append(not dominated)
    return flags


@dataclass
class SweepReport:
    cells: list[CellResult]

    def __post_init__(self):
        self.cells = sorted(self.cells, key=lambda c: c.key)

    def cell(self, method, hyper, d, m) -> CellResult:
        key = CellKey(method, hyper, d, m)
        for c in self.cells:
            if c.key == key:
                return c
        raise KeyError(key)

    def report_rows(self) -> list[dict]:
        return [c.report_row() for c in self.cells]

    def runtime_rows(self) -> list[dict]:
        return [c.runtime_row() for c in self.cells]

    def pareto_rows(self) -> list[dict]:
        good = [c for c in self.cells if c.ok and c.speedup]
        pts_u = [(1.0 / c.speedup, c.error_u) for c in good]
        pts_p = [(1.0 / c.speedup, c.error_P) for c in good]
        rows = []
        for c, fu, fp in zip(good, _pareto(pts_u), _pareto(pts_p)):
            k = c.key
            rows.append({"method": k.method, "hyper": k.hyper, "d": k.d, "m": k.m,
                         "relative_runtime": 1.0 / c.speedup, "error_u": c.error_u,
                         "error_P": c.error_P, "pareto_u": int(fu), "pareto_P": int(fp)})
        return rows

    def table(self, method: str, hyper: str, metric: str = "error_u") -> str:
        """Text table with d as rows and m as columns; a cell with any
        diverged state shows ``x`` followed by the divergence count."""
        sel = [c for c in self.cells if c.key.method == method and c.key.hyper == hyper]
        ds = sorted({c.key.d for c in sel})
        ms = sorted({c.key.m for c in sel})
        lines = [f"{method.upper()}-{hyper.upper()} {metric} [%]",
                 "d \\ m".ljust(8) + "".join(f"{m:>12d}" for m in ms)]
        for d in ds:
            cells = []
            for m in ms:
                c = next((c for c in sel if c.key.d == d and c.key.m == m), None)
                if c is None:
                    cells.append("")
                elif c.failure is not None:
                    cells.append("fail")
                elif c.n_diverged:
                    cells.append(f"x({c.n_diverged})")
                else:
                    cells.append(f"{getattr(c, metric):.4f}")
            lines.append(f"{d:<8d}" + "".join(f"{s:>12}" for s in cells))
        return "\n".join(lines)

    def write(self, directory, manifest_params: dict | None = None, seeds: dict | None = None):
        """Deterministic report files plus a manifest; wall-clock data go to
        ``runtime.*`` which is kept out of the manifest hashes."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        store.write_csv(directory / "report.csv", self.report_rows(), REPORT_COLUMNS)
        store.write_json(directory / "report.json", {"cells": self.report_rows()})
        tables = []
        for method, hyper in sorted({(c.key.method, c.key.hyper) for c in self.cells}):
            tables.append(self.table(method, hyper))
        (directory / "tables.txt").write_text("\n\n".join(tables) + "\n")
        store.write_csv(directory / "runtime.csv", self.runtime_rows(), RUNTIME_COLUMNS)
        store.write_json(directory / "runtime.json", {"cells": self.runtime_rows()})
        store.write_csv(directory / "pareto.csv", self.pareto_rows(), PARETO_COLUMNS)
        return store.write_artifact(
            directory, "sweep", {}, params=manifest_params, seeds=seeds,
            extra_files={"report.csv": "report.csv", "report.json": "report.json",
                         "tables.txt": "tables.txt"})


def sweep(problem: RVEProblem, train: Campaign, validation: Campaign, methods, hypers, ds, ms,
          reduction: ReductionConfig | None = None, hyper: HyperConfig | None = None,
          tol: float = 1e-8, max_iter: int = 25, threads: int = 1) -> SweepReport:
    """Train and validate every grid cell. Failures are recorded per cell and
    never abort the sweep. Spaces and residual snapshots are shared across m
    and the hyperreduction method; magic points and xi across the method."""
    reduction = reduction or ReductionConfig()
    hyper = hyper or HyperConfig()
    for mth in methods:
        if mth not in REDUCTION_METHODS:
            raise ValueError(f"unknown reduction method {mth!r}")
    for h in hypers:
        if h not in HYPER_METHODS:
            raise ValueError(f"unknown hyperreduction method {h!r}")
    fom_time = sum(p.time for p in validation.paths)
    cells = []
    for mth in methods:
        for d in ds:
            keys = [CellKey(mth, h, d, m) for m in ms for h in hypers]
            try:
                cfg = replace(reduction, method=mth, d=d)
                space, _ = build_space(cfg, train.U, train.params)
                G, gal_div = record_residuals(space, problem, train.Fbars, tol, threads)
            except Exception as exc:  # noqa: BLE001 - recorded in the report
                log.warning("cell %s/%d: training failed: %s", mth, d, exc)
                cells += [CellResult(k, failure=f"reduce: {exc}") for k in keys]
                continue
            for m in ms:
                try:
                    ht = train_magic(problem, G, train, m, hyper.xi_tol)
                except Exception as exc:  # noqa: BLE001
                    cells += [CellResult(CellKey(mth, h, d, m), galerkin_diverged=gal_div,
                                         failure=f"magic: {exc}") for h in hypers]
                    continue
                for h in hypers:
                    key = CellKey(mth, h, d, m)
                    res = CellResult(key, galerkin_diverged=gal_div, m_used=ht.magic.m,
                                     fom_time=fom_time)
                    try:
                        hm = hyper_from_training(problem, space, ht, replace(hyper, method=h, m=m))
                        t0 = time.perf_counter()
                        rom = hyper_validation(hm, space, validation.Fbars, tol, max_iter, threads)
                        s = summarize(space, rom, validation)
                        log.info("cell %s done in %.1fs", key, time.perf_counter() - t0)
                        res.error_u, res.error_P = s.error_u, s.error_P
                        res.n_diverged, res.n_states = s.n_diverged, s.n_states
                        res.iterations, res.rom_time, res.timings = s.iterations, s.rom_time, s.timings
                    except Exception as exc:  # noqa: BLE001
                        log.warning("cell %s failed: %s", key, exc)
                        res.failure = f"online: {exc}"
                    cells.append(res)
    return SweepReport(cells)


def parse_grid(text: str, cast=int) -> list:
    """``"9,15,30"`` -> ``[9, 15, 30]``."""
    return [cast(x) for x in str(text).split(",") if x.strip()]
