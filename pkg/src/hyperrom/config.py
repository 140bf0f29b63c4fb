"""Run configuration: one declarative YAML/JSON file plus command-line overrides.

Every field has an explicit default; :func:`resolve` returns the fully
populated configuration that is echoed into each stage manifest.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .bench.pipeline import REDUCTION_METHODS
from .hyper.model import METHODS as HYPER_METHODS

SEED_ENV = "HYPERROM_SEED"


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (exit code 2)."""


@dataclass
class InclusionConfig:
    center: list = field(default_factory=lambda: [2.0, 2.0, 2.0])
    radius: float = 1.5
    material: int = 1


@dataclass
class MeshConfig:
    edge_length: float = 6.0
    divisions: int = 6
    inclusions: list = field(default_factory=lambda: [
        InclusionConfig([2.0, 2.0, 2.0], 1.5, 1), InclusionConfig([4.0, 4.0, 4.0], 1.5, 1)])
    matrix_material: int = 0


@dataclass
class PhaseConfig:
    E: float = 1000.0
    nu: float = 0.2
    variant: str = "stabilized"


@dataclass
class CampaignConfig:
    paths: int = 50
    train_paths: int = 20
    steps: int = 10
    dlp: float = 0.03
    dls: float = 0.015


@dataclass
class ReductionSection:
    method: str = "lle"
    d: int = 15
    d_bar: int | None = None
    k: int | None = None
    N: int | None = None
    n_clusters: int = 4
    overlap: int = 2
    d_tilde: int | None = None
    pm_iters: int = 10
    pm_reg: float = 1e-4
    lle_reg: float = 1e-3


@dataclass
class HyperSection:
    method: str = "lehm"
    m: int = 100
    eps: float | None = None
    xi_tol: float = 1e-10
    lspg_paper_sign: bool = False


@dataclass
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 25


@dataclass
class SweepConfig:
    methods: list = field(default_factory=lambda: ["pod", "lpod", "pm", "lle"])
    hypers: list = field(default_factory=lambda: ["deim", "lehm", "lspg"])
    d: list = field(default_factory=lambda: [9, 15, 30])
    m: list = field(default_factory=lambda: [50, 100])


@dataclass
class RunConfig:
    seed: int = 0
    threads: int | None = None  # None: number of available cores
    output: str = "hyperrom_out"
    divergence_budget: int = 0  # diverged states tolerated before exit code 4
    mesh: MeshConfig = field(default_factory=MeshConfig)
    materials: dict = field(default_factory=lambda: {0: PhaseConfig(1000.0, 0.2), 1: PhaseConfig(3000.0, 0.2)})
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    reduction: ReductionSection = field(default_factory=ReductionSection)
    hyper: HyperSection = field(default_factory=HyperSection)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["materials"] = {str(k): v for k, v in d["materials"].items()}
        return d

    def section(self, name: str) -> dict:
        return self.to_dict()[name]


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    default = cls()
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        value = data[name]
        current = getattr(default, name)
        sub = f"{path}.{name}" if path else name
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, sub)
        elif name == "inclusions":
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list")
            kwargs[name] = [_build(InclusionConfig, v, f"{sub}[{i}]") for i, v in enumerate(value)]
        elif name == "materials":
            if not isinstance(value, dict) or not value:
                raise ConfigError(f"{sub}: expected a non-empty mapping of phase id to E, nu")
            try:
                kwargs[name] = {int(k): _build(PhaseConfig, v, f"{sub}.{k}") for k, v in value.items()}
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"{sub}: phase ids must be integers") from None
        else:
            kwargs[name] = _coerce(value, current, sub)
    return cls(**kwargs)


def _coerce(value, default, path):
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return value
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string")
    return value


def validate(cfg: RunConfig) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.mesh.divisions >= 1, "mesh.divisions must be >= 1")
    need(cfg.mesh.edge_length > 0, "mesh.edge_length must be positive")
    used = {cfg.mesh.matrix_material} | {inc.material for inc in cfg.mesh.inclusions}
    missing = used - set(cfg.materials)
    need(not missing, f"materials missing for phase id(s) {sorted(missing)}")
    for k, ph in cfg.materials.items():
        need(ph.E > 0 and 0 < ph.nu < 0.5, f"materials.{k}: need E > 0 and 0 < nu < 0.5")
        need(ph.variant in ("stabilized", "literal"), f"materials.{k}.variant: unknown {ph.variant!r}")
    c = cfg.campaign
    need(c.paths >= 1 and c.steps >= 1, "campaign.paths and campaign.steps must be >= 1")
    need(1 <= c.train_paths <= c.paths, "campaign.train_paths must lie in [1, paths]")
    need(c.dlp >= 0 and c.dls >= 0, "campaign step sizes must be nonnegative")
    need(cfg.reduction.method in REDUCTION_METHODS,
         f"reduction.method must be one of {REDUCTION_METHODS}")
    need(cfg.reduction.d >= 1, "reduction.d must be >= 1")
    for name in ("d_bar", "k", "N", "d_tilde"):
        v = getattr(cfg.reduction, name)
        need(v is None or (isinstance(v, int) and not isinstance(v, bool) and v >= 1),
             f"reduction.{name} must be a positive integer or null")
    need(cfg.hyper.eps is None or (isinstance(cfg.hyper.eps, (int, float)) and cfg.hyper.eps >= 0),
         "hyper.eps must be a nonnegative number or null")
    need(cfg.hyper.method in HYPER_METHODS, f"hyper.method must be one of {HYPER_METHODS}")
    need(cfg.hyper.m >= 1, "hyper.m must be >= 1")
    need(cfg.solver.tol > 0 and cfg.solver.max_iter >= 1, "solver settings out of range")
    need(cfg.threads is None or cfg.threads >= 1, "threads must be >= 1")
    need(cfg.divergence_budget >= 0, "divergence_budget must be >= 0")
    for mth in cfg.sweep.methods:
        need(mth in REDUCTION_METHODS, f"sweep.methods: unknown {mth!r}")
    for h in cfg.sweep.hypers:
        need(h in HYPER_METHODS, f"sweep.hypers: unknown {h!r}")
    need(all(isinstance(x, int) and x >= 1 for x in cfg.sweep.d + cfg.sweep.m),
         "sweep.d and sweep.m must be positive integers")


def from_dict(data: dict) -> RunConfig:
    """Strictly parse a (possibly partial) configuration mapping."""
    cfg = _build(RunConfig, data, "")
    validate(cfg)
    return cfg


def read_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse ({exc})") from None
    return data or {}


def _set_dotted(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = data
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"override {dotted}: {k} is not a section")
    cur[keys[-1]] = value


def resolve(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Defaults <- file <- overrides (dotted keys) <- $HYPERROM_SEED."""
    env = os.environ if env is None else env
    data = read_file(path) if path else {}
    for k, v in (overrides or {}).items():
        if v is not None:
            _set_dotted(data, k, v)
    if env.get(SEED_ENV) not in (None, ""):
        try:
            data["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    cfg = _build(RunConfig, data, "")
    if cfg.threads is None:
        cfg.threads = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    validate(cfg)
    return cfg


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
