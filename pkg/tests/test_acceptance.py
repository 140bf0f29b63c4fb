"""Acceptance criteria 1-9. Each test prints one ``CRITERION k: PASS|FAIL`` line
and fails when the criterion is not met; tolerances are the stated ones."""

import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from conftest import ACCEPTANCE_LINES, random_F
from hyperrom import artifacts, config, store
from hyperrom.bench.paths import gen_load_paths
from hyperrom.bench.pipeline import (HyperConfig, ReductionConfig, build_space, hyper_validation,
                                     record_residuals, run_fom_campaign, summarize, train_hyper)
from hyperrom.cli import main
from hyperrom.fem import FullState, assemble, homogenize, newton_solve, voigt_matrix
from hyperrom.galerkin import reduced_homogenize
from hyperrom.hyper import (build_hyper_model, deim_indices, deim_matrix, hyper_newton,
                            hyper_newton_step_deimlike, hyper_newton_step_lspg, lehm_matrix,
                            reduced_domain)
from hyperrom.material import MaterialParams, stress_tangent
from hyperrom.mesh import MeshSpec, build_rve_mesh, paper_spec
from hyperrom.fem import RVEProblem
from hyperrom.reduce import PodSpace, lle_fit, local_chart, pm_fit, pod_fit, reconstruction_weights
from hyperrom.reduce.lle import knn
from test_fem import fd_Abar, fd_jacobian
from test_hyper import _volumetric_xi
from test_material import fd_stress, fd_tangent
from test_reduce import _pm_data

pytestmark = pytest.mark.slow

THREADS = "1"
SEED = "0"


def verdict(capsys, k: int, ok: bool, detail: str):
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


# -- 1-4: oracles ------------------------------------------------------------------


def test_criterion_1_material_fem_consistency(capsys, problem2):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_P = worst_A = 0.0
    for variant in ("stabilized", "literal"):
        m = MaterialParams(416.67, 555.56, variant)
        for _ in range(50):
            F = random_F(rng)
            P, A = stress_tangent(m, F)
            worst_P = max(worst_P, rel(fd_stress(m, F), P))
            worst_A = max(worst_A, rel(fd_tangent(m, F), A))
    worst_K = 0.0
    for _ in range(3):
        state = FullState(1e-2 * rng.standard_normal(problem2.D), random_F(rng, 0.1))
        K = assemble(problem2, state).K.toarray()
        worst_K = max(worst_K, float(np.max(np.abs(K - fd_jacobian(problem2, state))) / np.max(np.abs(K))))
    wall = time.perf_counter() - t0
    ok = worst_P < 1e-6 and worst_A < 1e-6 and worst_K < 1e-5 and wall < 30
    verdict(capsys, 1, ok, f"P~dW/dF {worst_P:.1e}, A~dP/dF {worst_A:.1e} (<1e-6, 2x50 states); "
                           f"K~dg/du {worst_K:.1e} (<1e-5, divisions=2); {wall:.1f}s (<30s)")


def test_criterion_2_homogenization_consistency(capsys, two_phase, homogeneous):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    problem = RVEProblem(build_rve_mesh(paper_spec(4)), two_phase)
    assert len(np.unique(problem.mesh.element_material)) == 2
    worst = 0.0
    for _ in range(3):
        res = newton_solve(problem, random_F(rng, 0.1), tol=1e-10)
        h = homogenize(problem, res.state)
        worst = max(worst, rel(h.Abar, fd_Abar(problem, res.state)))
    hom = RVEProblem(build_rve_mesh(MeshSpec(6.0, 4)), homogeneous)
    worst_h = 0.0
    for _ in range(3):
        Fbar = random_F(rng, 0.1)
        h = homogenize(hom, newton_solve(hom, Fbar).state)
        P, A = stress_tangent(homogeneous[0], Fbar)
        worst_h = max(worst_h, float(np.max(np.abs(h.Pbar - P)) / np.abs(P).max()),
                      float(np.max(np.abs(h.Abar - voigt_matrix(A.reshape(9, 9)))) / np.abs(A).max()))
    wall = time.perf_counter() - t0
    ok = worst < 1e-4 and worst_h <= 1e-8 and wall < 300
    verdict(capsys, 2, ok, f"Abar vs FD {worst:.1e} (<1e-4, divisions=4, 3 states); "
                           f"homogeneous RVE {worst_h:.1e} (<=1e-8); {wall:.1f}s (<300s)")


def test_criterion_3_reduction_oracles(capsys):
    rng = np.random.default_rng(303)
    # POD error equals the SVD tail
    U = rng.standard_normal((50, 20))
    pod_err = 0.0
    for d in (1, 5, 12):
        b = pod_fit(U, d)
        err = np.linalg.norm(U - b.psi @ (b.psi.T @ U))
        tail = np.sqrt(np.sum(np.linalg.svd(U, compute_uv=False)[d:] ** 2))
        pod_err = max(pod_err, abs(err - tail) / np.linalg.norm(U))
    # LLE weights reproduce affine data exactly
    X = (rng.standard_normal((8, 3)) @ rng.standard_normal((3, 30)) + rng.standard_normal((8, 1))).T
    W = reconstruction_weights(X, knn(X, 4), reg=0.0)
    lle_err = float(np.max(np.abs(X - W @ X)) / np.max(np.abs(X)))
    # chart normal equations and two-stage equivalence at d_bar = s
    Us = np.cumsum(rng.standard_normal((40, 20)), axis=1)
    params = np.eye(3) + 0.05 * rng.standard_normal((20, 3, 3))
    model = lle_fit(Us, params, k=6, d=3)
    chart_res, two_stage = 0.0, 0.0
    for i in (0, 4, 13):
        ch = local_chart(model, params[i], N=8)
        chart_res = max(chart_res, ch.normal_residual)
        ids = ch.neighbor_ids
        UN, YN = Us[:, ids], model.Y[:, ids]
        WN = np.eye(8) - np.ones((8, 8)) / 8
        direct = UN @ WN @ YN.T @ np.linalg.inv(YN @ WN @ YN.T)
        two_stage = max(two_stage, rel(ch.phi, direct))
    # polynomial manifold recovers synthetic quadratic data
    Upm = _pm_data(rng)
    pm = pm_fit(Upm, 3, 3, max_iters=10)
    R = np.column_stack([pm.reconstruct(pm.Y[:, i]) for i in range(Upm.shape[1])])
    pm_err = rel(R, Upm)
    ok = pod_err < 1e-10 and lle_err < 1e-10 and chart_res <= 1e-10 and two_stage < 1e-9 and pm_err < 1e-8
    verdict(capsys, 3, ok, f"POD tail {pod_err:.1e} (<1e-10); LLE affine {lle_err:.1e} (<1e-10); "
                           f"chart residual {chart_res:.1e} (<=1e-10); two-stage {two_stage:.1e} (<1e-9); "
                           f"PM recovery {pm_err:.1e} (<1e-8)")


def test_criterion_4_hyperreduction_oracles(capsys, problem2, problem3):
    rng = np.random.default_rng(404)
    Omega = np.linalg.qr(rng.standard_normal((40, 6)))[0]
    idx = deim_indices(Omega)
    M = deim_matrix(Omega, idx)
    deim = max(float(np.max(np.abs((M @ g)[idx] - g)) / np.abs(g).max())
               for g in rng.standard_normal((5, 6)))
    G = rng.standard_normal((20, 8))
    sel = np.array([3, 11, 17])
    oracle = np.linalg.lstsq(G[sel].T, G.T, rcond=None)[0].T
    lehm = float(np.linalg.norm(lehm_matrix(G, sel, eps=0.0) - oracle))
    A = rng.standard_normal((12, 4))
    g = rng.standard_normal(12)
    lspg = float(np.linalg.norm(hyper_newton_step_lspg(g, A) - np.linalg.solve(A.T @ A, -A.T @ g)))
    # m = D: the hyperreduced Newton step is the Galerkin step
    D = problem2.D
    Om = np.linalg.qr(rng.standard_normal((D, D)))[0]
    mp = reduced_domain(problem2, deim_indices(Om))
    phibar = np.linalg.qr(rng.standard_normal((D, 5)))[0]
    hm = build_hyper_model(problem2, "deim", mp, phibar, None, Om, _volumetric_xi(problem2))
    Fbar = random_F(rng, 0.1)
    ubar = 0.01 * rng.standard_normal(5)
    g_m, Kphi = hm.kernel.evaluate(Fbar, hm.phibar_m @ ubar, hm.phibar_m)
    dy, _, _ = hyper_newton_step_deimlike(hm.left, g_m, Kphi, np.eye(5))
    sys_ = assemble(problem2, FullState(phibar @ ubar, Fbar))
    dy_gal = np.linalg.solve(phibar.T @ sys_.K @ phibar, -phibar.T @ sys_.g)
    step = float(np.max(np.abs(dy - dy_gal)) / max(1.0, np.abs(dy_gal).max()))
    # E_m = E: hyperreduced homogenization equals Galerkin homogenization
    D3 = problem3.D
    Om3 = np.linalg.qr(rng.standard_normal((D3, D3)))[0]
    mp3 = reduced_domain(problem3, deim_indices(Om3))
    phi3 = np.linalg.qr(rng.standard_normal((D3, 6)))[0]
    hm3 = build_hyper_model(problem3, "deim", mp3, phi3, None, Om3, _volumetric_xi(problem3))
    F3 = random_F(rng, 0.1)
    r = hyper_newton(hm3, PodSpace(phi3), F3, tol=1e-10)
    ref = reduced_homogenize(phi3, problem3, phi3 @ r.state.ubar, F3)
    hom = max(float(np.max(np.abs(r.response.Pbar - ref.Pbar)) / np.abs(ref.Pbar).max()),
              float(np.max(np.abs(r.response.Abar - ref.Abar)) / np.abs(ref.Abar).max()))
    ok = (deim <= 1e-12 and lehm < 1e-9 and lspg < 1e-9 and step <= 1e-10 and hom <= 1e-9
          and r.converged)
    verdict(capsys, 4, ok, f"DEIM identity {deim:.1e} (1e-12); LEHM vs lstsq {lehm:.1e} (1e-9); "
                           f"LSPG vs normal eqs {lspg:.1e} (1e-9); m=D step {step:.1e} (1e-10); "
                           f"E_m=E homogenization {hom:.1e} (1e-9)")


# -- 6, 7, 9: desk-scale campaign through the CLI ---------------------------------------

CAMPAIGN_FLAGS = ["--paths", "50", "--train-paths", "20", "--steps", "10"]


def _cli(out: Path, *argv) -> int:
    return main([*argv, "--out", str(out), "--threads", THREADS, "--seed", SEED])


def run_campaign(root: Path) -> dict:
    """LLE-LEHM and POD-DEIM at (d=15, m=100) on the divisions=6 campaign."""
    codes = {}
    lle, pod = root / "lle", root / "pod"
    t0 = time.perf_counter()
    assert _cli(lle, "mesh", "--divisions", "6") == 0
    codes["fom"] = _cli(lle, "fom", "run", *CAMPAIGN_FLAGS)
    t_fom = time.perf_counter() - t0
    assert _cli(lle, "train", "reduce", "--method", "lle", "--d", "15") == 0
    assert _cli(lle, "rom", "run", "--galerkin", "--record-residuals") == 0
    assert _cli(lle, "train", "hyper", "--method", "lehm", "--m", "100") == 0
    codes["lle"] = _cli(lle, "rom", "run", "--hyper")
    pod.mkdir(parents=True)
    for item in ("mesh", "fom"):
        shutil.copytree(lle / item, pod / item)
    shutil.copy(lle / "config.yaml", pod / "config.yaml")
    assert _cli(pod, "train", "reduce", "--method", "pod", "--d", "15") == 0
    assert _cli(pod, "rom", "run", "--galerkin", "--record-residuals") == 0
    assert _cli(pod, "train", "hyper", "--method", "deim", "--m", "100") == 0
    codes["pod"] = _cli(pod, "rom", "run", "--hyper")
    return {"root": root, "codes": codes, "wall": time.perf_counter() - t0, "fom_wall": t_fom}


@pytest.fixture(scope="session")
def campaign_a(tmp_path_factory):
    return run_campaign(tmp_path_factory.mktemp("campaign_a"))


def _report(root: Path, chain: str) -> dict:
    return json.loads((root / chain / "rom" / "report.json").read_text())


def _runtime(root: Path, chain: str) -> dict:
    return json.loads((root / chain / "rom" / "runtime.json").read_text())


def _fmt(x):
    return "undefined" if x is None else f"{x:.3f}%"


def test_criterion_6_desk_scale_accuracy(capsys, campaign_a):
    root = campaign_a["root"]
    assert campaign_a["codes"]["fom"] == 0, "FOM campaign diverged"
    lle, pod = _report(root, "lle"), _report(root, "pod")
    lle_ok = (lle["n_diverged"] == 0 and lle["n_states"] == 500 and lle["error_u"] < 1.0
              and lle["error_P"] < 1.0)
    pod_ok = pod["n_diverged"] == 0 and pod["error_u"] is not None and pod["error_u"] < 2.0
    wall = campaign_a["wall"]
    ok = lle_ok and pod_ok and wall < 7200
    verdict(capsys, 6, ok,
            f"LLE-LEHM(15,100) u {_fmt(lle['error_u'])} P {_fmt(lle['error_P'])} "
            f"div {lle['n_diverged']}/{lle['n_states']} (<1%, <1%, 0); "
            f"POD-DEIM(15,100) u {_fmt(pod['error_u'])} div {pod['n_diverged']} (<2%, 0); {wall:.0f}s")


def test_criterion_9_determinism(capsys, campaign_a, tmp_path_factory):
    a = campaign_a["root"]
    b = run_campaign(tmp_path_factory.mktemp("campaign_b"))["root"]
    compared, differing = 0, []
    for chain in ("lle", "pod"):
        for fa in sorted((a / chain).rglob("*")):
            if fa.name not in ("manifest.json", "report.json") and fa.suffix != ".hrmb":
                continue
            fb = b / fa.relative_to(a)
            compared += 1
            if not fb.exists() or fa.read_bytes() != fb.read_bytes():
                differing.append(str(fa.relative_to(a)))
    ok = compared > 0 and not differing
    verdict(capsys, 9, ok, f"{compared} manifests/reports/blocks compared across two runs, "
                           f"{len(differing)} differ {differing[:3]}")


# -- 5, 7: mesh-size studies ----------------------------------------------------------


@pytest.fixture(scope="session")
def mesh_studies(campaign_a):
    """20-path training campaigns at divisions 4, 6, 8 (6 is reused from the CLI run)."""
    out = {}
    for n in (4, 6, 8):
        cfg = config.resolve(None, {"mesh.divisions": n, "threads": 1}, env={})
        problem = artifacts.build_problem(cfg)
        if n == 6:
            man = store.read_manifest(campaign_a["root"] / "lle" / "fom")
            times = json.loads((man.root / "runtime.json").read_text())["path_times"]
            camp = artifacts.load_campaign(man, times).subset(range(20))
        else:
            Fbars = np.stack([p.Fbars() for p in gen_load_paths(0, 20, 10)])
            with threadpool_limits(1):
                camp = run_fom_campaign(problem, Fbars)
        out[n] = (problem, camp)
    return out


def _online(problem, camp, method, d, hyper, m, repeats=1):
    space, _ = build_space(ReductionConfig(method, d=d), camp.U, camp.params)
    rs, _ = record_residuals(space, problem, camp.Fbars)
    hm = train_hyper(problem, space, rs, camp, HyperConfig(hyper, m=m))
    best = None
    for _ in range(repeats):
        with threadpool_limits(1):
            rom = hyper_validation(hm, space, camp.Fbars)
        s = summarize(space, rom, camp)
        if best is None or s.rom_time < best[0].rom_time:
            best = (s, hm)
    return best


def _per_iteration(s):
    loop = sum(s.timings[c] for c in ("reconstruct", "assemble", "project", "solve"))
    return loop / s.iterations


def test_criterion_5_complexity_independence(capsys, mesh_studies):
    t0 = time.perf_counter()
    rom_it, fom_it, sizes = {}, {}, {}
    for n, (problem, camp) in mesh_studies.items():
        s, hm = _online(problem, camp, "lle", 9, "lehm", 50, repeats=3)
        rom_it[n] = _per_iteration(s)
        fom_it[n] = sum(p.time for p in camp.paths) / sum(int(p.iterations.sum()) for p in camp.paths)
        sizes[n] = (problem.D, len(hm.magic.elements), len(hm.magic.dofs))
    change = max(rom_it.values()) / min(rom_it.values()) - 1.0
    fom_growth = fom_it[8] / fom_it[4]
    wall = time.perf_counter() - t0
    ok = change < 0.20 and fom_growth >= 2.0 and wall < 1200
    detail = ", ".join(f"n={n}: {1e3 * rom_it[n]:.3f}ms (D={sizes[n][0]}, |E_m|={sizes[n][1]}, "
                       f"|I_m|={sizes[n][2]})" for n in sorted(rom_it))
    verdict(capsys, 5, ok, f"online per-iteration {detail}; change {100 * change:.0f}% (<20%); "
                           f"FOM per-iteration growth 4->8 {fom_growth:.1f}x (>=2x); {wall:.0f}s")


def test_criterion_7_speedup(capsys, campaign_a, mesh_studies):
    sp6 = _runtime(campaign_a["root"], "lle")["speedup"]
    problem, camp = mesh_studies[8]
    s8, _ = _online(problem, camp, "lle", 15, "lehm", 100)
    sp8 = s8.speedup
    ok = sp6 >= 5.0 and sp8 >= 15.0 and s8.n_diverged == 0
    verdict(capsys, 7, ok, f"LLE-LEHM(15,100) speedup divisions=6 {sp6:.1f}x (>=5x), "
                           f"divisions=8 {sp8:.1f}x (>=15x, error_u {_fmt(s8.error_u)})")


# -- 8: sweep trends ----------------------------------------------------------------------


def test_criterion_8_sweep_trends(capsys, campaign_a):
    root = campaign_a["root"] / "sweep"
    root.mkdir()
    for item in ("mesh", "fom"):
        shutil.copytree(campaign_a["root"] / "lle" / item, root / item)
    shutil.copy(campaign_a["root"] / "lle" / "config.yaml", root / "config.yaml")
    with capsys.disabled():
        code = _cli(root, "sweep", "--method", "pod,lpod,pm,lle", "--hyper", "deim,lehm,lspg",
                    "--d", "9,15,30", "--m", "50,100")
    assert code == 0
    rows = json.loads((root / "sweep" / "report.json").read_text())["cells"]
    cells = {(r["method"], r["hyper"], r["d"], r["m"]): r for r in rows}

    def err(r):
        return np.inf if r["failure"] or r["n_diverged"] or r["error_u"] is None else r["error_u"]

    bad, summary = [], []
    for method in ("pod", "lpod", "pm", "lle"):
        for hyper in ("deim", "lehm", "lspg"):
            lo, hi = cells[(method, hyper, 9, 50)], cells[(method, hyper, 30, 100)]
            e_lo, e_hi = err(lo), err(hi)
            good = np.isfinite(e_hi) and e_hi <= e_lo
            summary.append(f"{method}-{hyper} {e_lo:.3g}->{e_hi:.3g}")
            if not good:
                bad.append(f"{method}-{hyper}")
    n_div = sum(r["n_diverged"] for r in rows)
    tables = (root / "sweep" / "tables.txt").read_text()
    assert tables.count("error_u [%]") == 12
    ok = not bad and len(rows) == 72
    verdict(capsys, 8, ok, f"error_u(9,50)->(30,100): {'; '.join(summary)}; "
                           f"violations {bad or 'none'}; {n_div} diverged states across 72 cells "
                           f"(tables in sweep/tables.txt)")
