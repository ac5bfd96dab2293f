import numpy as np
import pytest
from scipy.spatial import cKDTree

import fluoinv as fv
from fluoinv.presets import trig_forcing
from fluoinv.stochastic import (
    LadderPoint,
    NoiseModel,
    observe,
    sample_points,
    trial_seed,
)


def test_sample_points_basic():
    one = sample_points(2, 1, seed=0)
    assert one.shape == (1, 2)
    assert (one > 0).all() and (one < 1).all()
    again = sample_points(2, 1, seed=0)
    assert np.array_equal(one, again)
    assert not np.array_equal(sample_points(2, 5, seed=0), sample_points(2, 5, seed=1))


def test_sample_points_quasi_uniformity():
    # frozen regression constant: the largest nearest-neighbor gap of the
    # generated set stays within 4 n^(-1/2)
    pts = sample_points(2, 10**4, seed=0)
    d, _ = cKDTree(pts).query(pts, k=2)
    assert d[:, 1].max() <= 4.0 * 10**4 ** -0.5


def test_sample_points_strictly_inside():
    pts = sample_points(2, 1000, seed=5)
    assert pts.min() >= 1e-3 - 1e-15
    assert pts.max() <= 1 - 1e-3 + 1e-15
    grid_pts = sample_points(2, 100, seed=0, layout="grid")
    assert (grid_pts > 0).all() and (grid_pts < 1).all()


def test_observe_noise_free_exact(grid16):
    u = trig_forcing(grid16)
    pts = sample_points(2, 300, seed=1)
    meas = observe(u, pts, NoiseModel("zero", 0.0, 0))
    assert np.array_equal(meas.values, fv.point_evaluation(grid16, pts).apply(u))


def test_observe_reproducible(grid16):
    u = trig_forcing(grid16)
    pts = sample_points(2, 100, seed=2)
    a = observe(u, pts, NoiseModel("gaussian", 0.1, 42))
    b = observe(u, pts, NoiseModel("gaussian", 0.1, 42))
    assert np.array_equal(a.values, b.values)


def test_noise_moments():
    # CLT bound at five sigma on the empirical mean; variance by construction
    n = 10**5
    for kind in ("gaussian", "uniform"):
        e = NoiseModel(kind, 0.3, 7).draw(n)
        assert abs(e.mean()) <= 5 * 0.3 / np.sqrt(n)
        assert e.var() <= 0.3**2 * 1.02
    assert np.abs(NoiseModel("zero", 0.0, 0).draw(10)).max() == 0.0
    with pytest.raises(ValueError):
        NoiseModel("cauchy", 1.0, 0)


def test_trial_seeds_distinct():
    states = {tuple(trial_seed(1, i, t).generate_state(2))
              for i in range(3) for t in range(5)}
    assert len(states) == 15


def test_fit_rate_exact_power_law():
    lams = np.logspace(-8, -4, 6)
    rf = fv.fit_rate(list(zip(lams, lams**0.5)))
    assert rf.slope == pytest.approx(0.5, abs=1e-12)
    assert rf.r_squared == pytest.approx(1.0, abs=1e-12)
    flat = fv.fit_rate(list(zip(lams, np.full(6, 2.0))))
    assert flat.slope == pytest.approx(0.0, abs=1e-12)


def test_fit_rate_noisy_power_law():
    rng = np.random.default_rng(11)
    lams = np.logspace(-9, -3, 12)
    errs = 2.0 * lams**0.25 * (1.0 + 0.01 * rng.standard_normal(12))
    rf = fv.fit_rate(list(zip(lams, errs)))
    assert rf.slope == pytest.approx(0.25, abs=0.01)


def test_fit_rate_validation():
    with pytest.raises(ValueError):
        fv.fit_rate([(1e-6, 1.0), (1e-5, 2.0)])
    with pytest.raises(ValueError):
        fv.fit_rate([(1e-6, 1.0), (1e-5, -2.0), (1e-4, 1.0)])


@pytest.fixture(scope="module")
def small_pipeline(grid16):
    f_true = trig_forcing(grid16)
    sf_true = fv.elliptic_solve(grid16, 1.0, f_true)
    return fv.InversionPipeline(grid=grid16, beta=1.0, s=0,
                                f_true=f_true, sf_true=sf_true)


def test_zero_noise_single_trial_is_deterministic(small_pipeline, grid16):
    from fluoinv.fit import FitConfig

    ladder = [LadderPoint(n=200, sigma=0.0, lam=1e-7)]
    pipeline = fv.InversionPipeline(**{**small_pipeline.__dict__, "lam_policy": "fixed",
                                       "noise_kind": "zero"})
    rec = fv.expectation_experiment(pipeline, ladder, trials=1, base_seed=3)[0]
    pts = sample_points(2, 200, seed=int(np.random.SeedSequence(entropy=3, spawn_key=(0,))
                                         .generate_state(1)[0]))
    meas = observe(small_pipeline.sf_true, pts, NoiseModel("zero", 0.0, 0))
    direct = fv.solve_data_fit(grid16, 1.0, meas, FitConfig(s=0, lam=1e-7))
    direct_err1 = (fv.empirical_norm(fv.point_evaluation(grid16, pts).apply(direct.sf - small_pipeline.sf_true))
                   / fv.empirical_norm(fv.point_evaluation(grid16, pts).apply(small_pipeline.sf_true)))
    assert rec.mean_errors()["err1"] == pytest.approx(direct_err1, abs=1e-14)


def test_experiment_deterministic_across_threads(small_pipeline):
    ladder = [LadderPoint(n=150, sigma=0.005), LadderPoint(n=400, sigma=0.005)]
    a = fv.expectation_experiment(small_pipeline, ladder, trials=4, base_seed=9, threads=1)
    b = fv.expectation_experiment(small_pipeline, ladder, trials=4, base_seed=9, threads=3)
    for ra, rb in zip(a, b):
        assert ra.sf_errors_n == rb.sf_errors_n
        assert ra.mean_errors() == rb.mean_errors()
        assert ra.rho0 == rb.rho0


def test_mean_error_decreases_with_noise(small_pipeline):
    high = fv.expectation_experiment(small_pipeline, [LadderPoint(n=300, sigma=0.01)],
                                     trials=5, base_seed=1)[0]
    low = fv.expectation_experiment(small_pipeline, [LadderPoint(n=300, sigma=0.001)],
                                    trials=5, base_seed=1)[0]
    assert low.mean_errors()["err1"] < high.mean_errors()["err1"]
    assert low.rho0 < high.rho0


def test_tail_histogram(small_pipeline):
    rec = fv.expectation_experiment(small_pipeline, [LadderPoint(n=200, sigma=0.01)],
                                    trials=60, base_seed=5)[0]
    scale = np.sqrt(rec.lam) * rec.rho0
    z_max = max(rec.sf_errors_n) / scale
    z = np.linspace(0.0, 1.01 * z_max, 21)
    curve = fv.tail_histogram(rec, z)
    assert curve.exceedance[0] == 1.0
    assert curve.exceedance[-1] == 0.0  # beyond the largest observed ratio
    assert all(b <= a for a, b in zip(curve.exceedance, curve.exceedance[1:]))
    with pytest.raises(ValueError):
        fv.tail_histogram(rec, z, min_trials=100)
