import numpy as np
import pytest
from numpy.testing import assert_allclose

from hyperrom.bench.metrics import correlation_dimension, eig_decay, error_metric
from hyperrom.bench.paths import LoadPathError, gen_load_paths
from hyperrom.bench.pipeline import (HyperConfig, ReductionConfig, build_space,
                                     galerkin_validation, hyper_validation, record_residuals,
                                     run_fom_campaign, summarize, train_hyper)
from hyperrom.bench.sweep import (TIMING_CATEGORIES, CellKey, CellResult, SweepReport, _pareto,
                                  parse_grid, sweep)
from hyperrom.galerkin import reduced_path

# -- load paths ---------------------------------------------------------------------


def test_paths_deterministic():
    a = gen_load_paths(7, 3, 5)
    b = gen_load_paths(7, 3, 5)
    for p, q in zip(a, b):
        assert p.Fbars().tobytes() == q.Fbars().tobytes()
    assert gen_load_paths(8, 1, 5)[0].Fbars().tobytes() != a[0].Fbars().tobytes()


def test_paths_unit_directions_and_det():
    for p in gen_load_paths(3, 10, 10):
        assert_allclose(np.linalg.norm(p.N_LP), 1.0, atol=1e-14)
        assert_allclose(np.linalg.norm(p.N_LS, axis=(1, 2)), 1.0, atol=1e-14)
        assert np.all(np.linalg.det(p.Fbars()) > 0)


def test_paths_straight_line_without_perturbation():
    p = gen_load_paths(1, 1, 6, dlp=0.03, dls=0.0)[0]
    k = np.arange(1, 7)[:, None, None]
    assert_allclose(p.Fbars(), np.eye(3) + k * 0.03 * p.N_LP, atol=1e-15)


def test_campaign_shape():
    paths = gen_load_paths(0, 20, 10)
    assert sum(p.n_steps for p in paths) == 200
    assert np.stack([p.Fbars() for p in gen_load_paths(0, 50, 10)]).reshape(-1, 3, 3).shape[0] == 500


def test_paths_resampling_budget():
    # a pure random walk with huge steps flips det sign almost surely
    with pytest.raises(LoadPathError):
        gen_load_paths(0, 1, 50, dlp=0.0, dls=100.0, max_attempts=3)
    with pytest.raises(ValueError):
        gen_load_paths(0, 0, 5)


# -- error metric ---------------------------------------------------------------------


def test_error_identical_is_zero(rng):
    U = [rng.standard_normal(5) for _ in range(4)]
    assert error_metric(U, U).percent == 0.0


def test_error_uniform_scaling(rng):
    U = [rng.standard_normal(7) for _ in range(6)]
    assert_allclose(error_metric([1.01 * u for u in U], U).percent, 1.0, rtol=1e-12)


def test_error_hand_example():
    fom = [np.array([3.0, 4.0]), np.array([1.0, 0.0]), np.array([0.0, 2.0])]
    rom = [np.array([3.0, 4.5]), np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    # 0.5/5, 0, 1/2 -> mean 0.2
    assert_allclose(error_metric(rom, fom).percent, 20.0, rtol=1e-14)


def test_error_undefined_with_divergence():
    fom = [np.ones(2)] * 3
    r = error_metric(fom, fom, diverged=[False, True, True])
    assert r.percent is None and r.n_diverged == 2 and r.n_states == 3
    with pytest.raises(ValueError):
        error_metric(fom[:2], fom)


# -- manifold diagnostics ---------------------------------------------------------------


def test_eig_decay_rank_two(rng):
    U = rng.standard_normal((30, 2)) @ rng.standard_normal((2, 12))
    ev = eig_decay(U)
    assert len(ev) == 12 and np.all(np.diff(ev) <= 1e-12 * ev[0])
    assert np.all(ev[2:] <= 1e-10 * ev[0])
    with pytest.raises(ValueError):
        eig_decay(U[:, :2])


def test_correlation_dimension_sphere():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((3, 500))
    X /= np.linalg.norm(X, axis=0)
    Q, _ = np.linalg.qr(rng.standard_normal((10, 10)))
    U = Q[:, :3] @ X
    curve = correlation_dimension(U, np.geomspace(0.15, 1.0, 12))
    assert np.all(np.abs(curve.slope - 2.0) < 0.3)


def test_correlation_dimension_skips_empty_radii():
    U = np.array([[0.0, 1.0, 3.0]])
    curve = correlation_dimension(U, [0.5, 1.5, 2.5, 3.5])
    assert_allclose(curve.r, [1.5, 2.5, 3.5])
    assert_allclose(curve.C, [1 / 3, 2 / 3, 1.0])


# -- sweeps ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def campaign(problem3):
    Fbars = np.stack([p.Fbars() for p in gen_load_paths(11, 3, 4)])
    return run_fom_campaign(problem3, Fbars)


def test_single_cell_sweep(problem3, campaign):
    train = campaign.subset([0, 1])
    rep = sweep(problem3, train, campaign, ["lle"], ["lehm"], [4], [20])
    assert len(rep.cells) == 1
    c = rep.cell("lle", "lehm", 4, 20)
    assert c.failure is None and c.n_states == 12 and c.error_u is not None
    assert c.ok and c.speedup > 0
    assert len(rep.report_rows()) == 1 and len(rep.runtime_rows()) == 1


def test_sweep_records_failures(problem3, campaign):
    train = campaign.subset([0, 1])
    rep = sweep(problem3, train, campaign, ["pod"], ["deim", "lspg"], [3, 10_000], [15])
    assert len(rep.cells) == 4
    bad = [c for c in rep.cells if c.key.d == 10_000]
    assert all(c.failure and c.failure.startswith("reduce") for c in bad)
    assert all(c.failure is None for c in rep.cells if c.key.d == 3)
    assert "fail" in rep.table("pod", "deim")
    with pytest.raises(ValueError):
        sweep(problem3, train, campaign, ["svd"], ["deim"], [3], [15])


def test_runtime_categories_cover_wall_time(problem3, campaign):
    train = campaign.subset([0, 1])
    space, _ = build_space(ReductionConfig("pod", d=5), train.U, train.params)
    rs, _ = record_residuals(space, problem3, train.Fbars)
    hm = train_hyper(problem3, space, rs, train, HyperConfig("lehm", m=20))
    rom = hyper_validation(hm, space, campaign.Fbars)
    s = summarize(space, rom, campaign)
    total = sum(s.timings[c] for c in TIMING_CATEGORIES)
    assert abs(total - s.rom_time) <= 0.02 * s.rom_time


def test_table_format_and_pareto():
    k = lambda d, m: CellKey("pod", "deim", d, m)  # noqa: E731
    cells = [CellResult(k(9, 50), error_u=1.5, error_P=0.5, n_states=10, rom_time=1.0, fom_time=10.0),
             CellResult(k(9, 100), n_diverged=3, n_states=10, rom_time=1.0, fom_time=10.0),
             CellResult(k(15, 50), error_u=0.5, error_P=0.7, n_states=10, rom_time=2.0, fom_time=10.0),
             CellResult(k(15, 100), failure="magic: rank")]
    rep = SweepReport(cells[::-1])
    assert [c.key for c in rep.cells] == [c.key for c in cells]
    lines = rep.table("pod", "deim").splitlines()
    assert lines[0] == "POD-DEIM error_u [%]"
    assert lines[2].split() == ["9", "1.5000", "x(3)"]
    assert lines[3].split() == ["15", "0.5000", "fail"]
    rows = rep.pareto_rows()
    assert [(r["d"], r["pareto_u"], r["pareto_P"]) for r in rows] == [(9, 1, 1), (15, 1, 0)]
    assert _pareto([(1, 1), (2, 2), (1, 2)]) == [True, False, False]
    assert parse_grid("9, 15,30") == [9, 15, 30]


def test_report_write_deterministic(tmp_path):
    cells = [CellResult(CellKey("lle", "lehm", 9, 50), error_u=0.25, error_P=0.01, n_states=4,
                        rom_time=0.1, fom_time=1.0, iterations=8,
                        timings={c: 0.01 for c in TIMING_CATEGORIES})]
    SweepReport(cells).write(tmp_path / "a", {"grid": 1}, {"seed": 0})
    cells[0].rom_time = 0.2  # wall-clock data stay out of the hashed files
    SweepReport(cells).write(tmp_path / "b", {"grid": 1}, {"seed": 0})
    for f in ("manifest.json", "report.csv", "report.json", "tables.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a" / "runtime.csv").read_bytes() != (tmp_path / "b" / "runtime.csv").read_bytes()


def test_pod_training_replay_monotone_in_d(problem3, campaign):
    train = campaign.subset([0, 1])
    errs = []
    for d in (2, 4, 6, 8):
        space, _ = build_space(ReductionConfig("pod", d=d), train.U, train.params)
        rom = galerkin_validation(space, problem3, train.Fbars)
        errs.append(summarize(space, rom, train).error_u)
    for a, b in zip(errs, errs[1:]):
        assert b <= 1.05 * a
    assert errs[-1] < errs[0]


def test_galerkin_validation_matches_reduced_path(problem3, campaign):
    train = campaign.subset([0])
    space, _ = build_space(ReductionConfig("pod", d=4), train.U, train.params)
    rom = galerkin_validation(space, problem3, train.Fbars)
    ref = reduced_path(space, problem3, train.Fbars[0])
    assert_allclose(rom[0].ubar, np.column_stack([s.state.ubar for s in ref.steps]), rtol=0, atol=0)
    assert np.all(np.isfinite(rom[0].Pbar))
