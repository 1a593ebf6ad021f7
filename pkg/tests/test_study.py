import csv
import json
import math

import numpy as np
import pytest

from lodwave.leapfrog import Trajectory
from lodwave.mesh import build_mesh
from lodwave.study import (CoarseStage, ExperimentConfig, convergence_slope, error_norm,
                           make_problem, reference_solution, reference_timing, run_row,
                           run_convergence_study)


def _small(tmp_path, **kw):
    base = dict(example="synthetic_ex1", coarse_levels=[1, 2], fine_level=4, ell=[1],
                epsilon=1 / 16, methods=["lod", "lod_simplified"],
                output_dir=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(autouse=True)
def _cache(tmp_path, monkeypatch):
    monkeypatch.setenv("LODWAVE_CACHE_DIR", str(tmp_path / "cache"))


@pytest.mark.parametrize("kw", [
    dict(fine_level=2),
    dict(example="example2", fine_level=5),
    dict(example="nope"),
    dict(coarse_levels=[]),
    dict(T=0.0),
    dict(methods=["bogus"]),
])
def test_config_validation(tmp_path, kw):
    with pytest.raises(ValueError):
        _small(tmp_path, **kw)


def test_config_json_roundtrip(tmp_path):
    cfg = _small(tmp_path)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_json(p) == cfg
    p.write_text(json.dumps({"example": "example2", "colour": 1}))
    with pytest.raises(ValueError):
        ExperimentConfig.from_json(p)


def test_config_scalar_ell(tmp_path):
    assert _small(tmp_path, ell=3).ell == [3]


def _ones_traj(n, dt, N, scale=1.0):
    return Trajectory(dt, np.arange(N + 1), scale * np.ones((N + 1, n)))


def test_error_norm_properties():
    m = build_mesh(3)
    setup = make_problem(ExperimentConfig(example="synthetic_ex1", coarse_levels=[1],
                                          fine_level=3, epsilon=1 / 8))
    n = setup.M.shape[0]
    rng = np.random.default_rng(0)
    states = rng.standard_normal((11, n))
    a = Trajectory(0.1, np.arange(11), states)
    assert error_norm(a, a, setup.M, setup.K1) == 0.0
    zero = Trajectory(0.1, np.arange(11), np.zeros((11, n)))
    v = _ones_traj(n, 0.1, 10)
    h1 = math.sqrt(np.ones(n) @ setup.M @ np.ones(n) + np.ones(n) @ setup.K1 @ np.ones(n))
    assert error_norm(v, zero, setup.M, setup.K1) == pytest.approx(h1, rel=1e-12)
    assert error_norm(_ones_traj(n, 0.1, 10, 2.0), zero, setup.M, setup.K1) == \
        pytest.approx(2 * h1, rel=1e-12)
    assert m.n_verts > n


def test_error_norm_misaligned():
    n = 3
    a = Trajectory(0.1, np.arange(11), np.zeros((11, n)))
    ref = Trajectory(0.3, np.arange(4), np.zeros((4, n)))
    with pytest.raises(ValueError):
        error_norm(a, ref, np.eye(n), np.eye(n))


def test_zero_data_zero_reference(tmp_path):
    cfg = _small(tmp_path, zero_source=True)
    setup = make_problem(cfg)
    ref = reference_solution(setup, cfg.coarse_levels, use_cache=False)
    assert np.abs(np.asarray(ref.states)).max() == 0


def test_reference_timing_aligned(tmp_path):
    cfg = _small(tmp_path, coarse_levels=[1, 2, 3], fine_level=5)
    setup = make_problem(cfg)
    dt, stride, n = reference_timing(setup, cfg.coarse_levels)
    from lodwave.study import coarse_timestep
    for L in cfg.coarse_levels:
        r = coarse_timestep(setup, L) / dt
        assert abs(r - round(r)) < 1e-9
    assert stride == round(coarse_timestep(setup, 3) / dt)
    assert n * dt >= 1.0 - 1e-12


def test_reference_cache_reproduces(tmp_path):
    cfg = _small(tmp_path)
    setup = make_problem(cfg)
    a = reference_solution(setup, cfg.coarse_levels, use_cache=True)
    b = reference_solution(setup, cfg.coarse_levels, use_cache=True)
    c = reference_solution(setup, cfg.coarse_levels, use_cache=False)
    np.testing.assert_array_equal(np.asarray(a.states), np.asarray(b.states))
    np.testing.assert_array_equal(np.asarray(a.states), np.asarray(c.states))
    assert len(list((tmp_path / "cache").glob("reference-*.npy"))) == 1


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_study_outputs(tmp_path):
    cfg = _small(tmp_path)
    table = run_convergence_study(cfg)
    out = tmp_path / "out"
    rows = _read_csv(out / "errors.csv")
    assert list(rows[0]) == ["H", "ell", "variant", "error", "order", "seconds"]
    assert len(rows) == 4
    for series in table.series().values():
        H = [r.H for r in series]
        assert all(a > b for a, b in zip(H, H[1:]))
        assert math.isnan(series[0].order) and series[1].order > 0
    meta = json.loads((out / "results.json").read_text())
    assert meta["config"]["example"] == "synthetic_ex1"
    assert "numpy" in meta["environment"]
    gp = (out / "errors.gp").read_text()
    assert "errors.csv" in gp and "lod_simplified" in gp


def test_study_deterministic(tmp_path):
    a = run_convergence_study(_small(tmp_path, output_dir=str(tmp_path / "a")))
    b = run_convergence_study(_small(tmp_path, output_dir=str(tmp_path / "b"), use_cache=False))
    ra, rb = (_read_csv(tmp_path / d / "errors.csv") for d in "ab")
    strip = lambda rows: [{k: v for k, v in r.items() if k != "seconds"} for r in rows]
    assert strip(ra) == strip(rb)
    assert len(a.rows) == len(b.rows)


def test_cached_row_matches_fresh(tmp_path):
    cfg = _small(tmp_path, coarse_levels=[2])
    setup = make_problem(cfg)
    ref = reference_solution(setup, cfg.coarse_levels)
    stage = CoarseStage(setup, 2)
    fresh = run_row(setup, ref, stage, "lod", 1, use_cache=False)
    run_row(setup, ref, stage, "lod", 1, use_cache=True)
    cached = run_row(setup, ref, stage, "lod", 1, use_cache=True)
    assert abs(fresh.error - cached.error) <= 1e-12


def test_failed_row_recorded(tmp_path):
    cfg = _small(tmp_path, coarse_levels=[1, 2], fine_level=3, ell=[0], methods=["lod"],
                 epsilon=1 / 8)
    table = run_convergence_study(cfg)
    bad = table.lookup("lod", 0, 2)
    assert bad.status.startswith("NumericError") and math.isnan(bad.error)


def test_parallel_rows_match_serial(tmp_path):
    a = run_convergence_study(_small(tmp_path, jobs=1), write=False)
    b = run_convergence_study(_small(tmp_path, jobs=2), write=False)
    assert [r.error for r in a.rows] == [r.error for r in b.rows]


def test_fem_variant_row(tmp_path):
    table = run_convergence_study(_small(tmp_path, methods=["fem", "lod"]), write=False)
    assert table.lookup("fem", 0, 2).error > 0


def test_example2_smoke(tmp_path):
    cfg = ExperimentConfig(example="example2", coarse_levels=[1, 2], fine_level=6, ell=[1],
                           output_dir=str(tmp_path / "e2"))
    table = run_convergence_study(cfg)
    errs = [r.error for r in table.series()[("lod", 1)]]
    assert errs[1] < errs[0]


def test_convergence_slope():
    H = np.array([0.4, 0.2, 0.1])
    assert convergence_slope(H, 3 * H**1.5) == pytest.approx(1.5)
