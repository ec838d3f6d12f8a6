import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepboot.benchmark import make_target
from deepboot.bootstrap import (BootstrapConfig, BootstrapError, ConstantSampler, DiffusionSampler,
                                assemble_result, confidence_interval, confidence_intervals,
                                empirical_cdf, estimate_fhat, make_bootstrap_dataset, quantile,
                                read_points_csv, read_replicates_csv, replicate_seeds, run_bootstrap,
                                run_replicate, write_points_csv, write_replicates_csv)
from deepboot.data import RegressionDataset
from deepboot.diagnostics import AnalyticGaussianScore
from deepboot.diffusion import TrainConfig, build_schedule
from deepboot.errors import ConfigError, DomainError, ShapeError, TrainingError


class InjectedSampler:
    """Returns a fixed list of draws, cycling over it."""

    d_y = 1

    def __init__(self, draws):
        self.draws = np.asarray(draws, dtype=np.float64)

    def sample(self, X, count, seed):
        P = np.atleast_2d(X).shape[0]
        vals = np.resize(self.draws, count)
        return np.broadcast_to(vals[None, :, None], (P, count, 1)).copy()


def constant_fit(c):
    def fit(data, config, seed, init=None):
        return ConstantSampler(c)
    return fit


def mean_fit(data, config, seed, init=None):
    """Toy model: N(mean(Y), 1) regardless of x, drawn with the given seed."""
    mu = float(data.Y.mean())

    class S:
        d_y = 1

        def sample(self, X, count, seed):
            P = np.atleast_2d(X).shape[0]
            return mu + np.random.default_rng(seed).standard_normal((P, count, 1))

    return S()


# ---------------------------------------------------------------- empirical CDF and quantile

def test_cdf_example():
    assert empirical_cdf([1, 2, 3, 4], 2.5) == 0.5


def test_cdf_boundaries():
    v = [3.0, -1.0, 7.0]
    assert empirical_cdf(v, -1.5) == 0.0
    assert empirical_cdf(v, 7.0) == 1.0
    assert empirical_cdf(v, 100.0) == 1.0


def test_cdf_at_median_draw():
    v = np.random.default_rng(0).uniform(size=100)
    r = np.sort(v)[49]
    assert empirical_cdf(v, r) == 0.5


def test_cdf_right_continuous():
    assert empirical_cdf([1, 2, 2, 3], 2.0) == 0.75
    assert empirical_cdf([1, 2, 2, 3], np.nextafter(2.0, -np.inf)) == 0.25


def test_cdf_empty():
    with pytest.raises(DomainError):
        empirical_cdf([], 0.0)


def test_quantile_examples():
    v = [-2, -1, 1, 2]
    assert quantile(v, 0.75) == 1
    assert quantile(v, 0.25) == -2
    assert quantile(v, 0.5) == -1
    assert quantile(v, 0.51) == 1


@pytest.mark.parametrize("q", [0.01, 0.3, 0.99])
def test_quantile_constant(q):
    assert quantile([4.5] * 7, q) == 4.5


@pytest.mark.parametrize("q", [0.0, 1.0, -0.2, 1.5])
def test_quantile_domain(q):
    with pytest.raises(DomainError):
        quantile([1.0, 2.0], q)


def test_quantile_order_index_float_guard():
    # 0.975 * 40 = 39.0 exactly in decimal but 39.00000000000001 in binary
    v = np.arange(1.0, 41.0)
    assert quantile(v, 0.975) == 39.0
    assert quantile(v, 0.025) == 1.0


# ---------------------------------------------------------------- intervals

def test_interval_zero_centered():
    assert confidence_interval(3.25, [0.0] * 10, 0.05) == (3.25, 3.25)


def test_interval_example():
    assert confidence_interval(0.0, [-2, -1, 1, 2], 0.5) == (-1.0, 2.0)


def test_interval_alpha_domain():
    with pytest.raises(DomainError):
        confidence_interval(0.0, [1.0, 2.0], 1.0)


def test_interval_symmetric_samples():
    rng = np.random.default_rng(5)
    for _ in range(50):
        half = rng.normal(size=19)
        c = np.concatenate([half, [0.0], -half])
        lo, hi = confidence_interval(1.0, c, 0.1)
        # B = 39: indices ceil(37.05) = 38 and ceil(1.95) = 2 sum to B + 1, mirror images
        assert 1.0 - lo == pytest.approx(hi - 1.0, abs=1e-12)


def test_vectorized_intervals_match_scalar():
    rng = np.random.default_rng(1)
    f_hat, centered = rng.normal(size=7), rng.normal(size=(31, 7))
    lo, hi = confidence_intervals(f_hat, centered, 0.1)
    for p in range(7):
        assert (lo[p], hi[p]) == confidence_interval(f_hat[p], centered[:, p], 0.1)


values_st = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=60)


@settings(max_examples=1000, deadline=None)
@given(values_st, st.data())
def test_quantile_cdf_duality(values, data):
    B = len(values)
    k = data.draw(st.integers(1, B))
    q = k / B
    if q >= 1.0:
        q = np.nextafter(1.0, 0.0)
    r = quantile(values, q)
    assert empirical_cdf(values, r) >= q - 1e-12
    smaller = [v for v in values if v < r]
    # minimality: every strictly smaller value has CDF below q
    assert all(empirical_cdf(values, v) < q for v in smaller)


@settings(max_examples=1000, deadline=None)
@given(values_st, st.floats(-10, 10), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_interval_order_and_alpha_monotone(centered, f_hat, a1, a2):
    big, small = max(a1, a2), min(a1, a2)
    lo_b, hi_b = confidence_interval(f_hat, centered, big)
    lo_s, hi_s = confidence_interval(f_hat, centered, small)
    assert lo_b <= hi_b
    assert lo_s <= lo_b and hi_b <= hi_s


@settings(max_examples=1000, deadline=None)
@given(st.integers(2, 30), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_centering_identity_and_permutation(B, P, seed):
    rng = np.random.default_rng(seed)
    f_hat = rng.normal(size=P)
    reps = f_hat + rng.normal(size=(B, P))
    res = assemble_result(np.zeros((P, 1)), f_hat, reps, 0.1)
    assert np.allclose(res.centered_stats, reps - f_hat, atol=1e-12, rtol=0)
    assert np.all(res.ci_lo <= res.ci_hi)
    perm = rng.permutation(B)
    res2 = assemble_result(np.zeros((P, 1)), f_hat, reps[perm], 0.1)
    assert np.array_equal(res.ci_lo, res2.ci_lo) and np.array_equal(res.ci_hi, res2.ci_hi)


def test_interval_equality_iff_order_stats_coincide():
    lo, hi = confidence_interval(0.0, [1.0, 1.0, 1.0, 5.0], 0.5)
    assert lo == hi == -1.0
    lo, hi = confidence_interval(0.0, [0.0, 1.0, 1.0, 5.0], 0.5)
    assert lo < hi


# ---------------------------------------------------------------- estimator and resampling

def test_estimate_fhat_constant():
    assert estimate_fhat(ConstantSampler(2.75), [0.1, 0.2], 17, 0)[0] == 2.75


def test_estimate_fhat_injected_mean():
    assert estimate_fhat(InjectedSampler([1.0, 2.0, 3.0]), [0.0], 3, 0)[0] == 2.0


def test_estimate_fhat_rejects_zero_j():
    with pytest.raises(ConfigError):
        estimate_fhat(ConstantSampler(1.0), [0.0], 0, 0)


def test_estimate_fhat_analytic_clt():
    target = make_target("D5-I")
    x = np.full(5, 0.5)
    sampler = DiffusionSampler(AnalyticGaussianScore(target.f0), build_schedule(0.001, 200))
    got = estimate_fhat(sampler, x, 10_000, 3)[0]
    assert abs(got - target.f0(x[None])[0]) < 4 / np.sqrt(10_000)


def test_bootstrap_dataset_constant_and_identity_on_x():
    X = np.random.default_rng(0).normal(size=(9, 3))
    d = make_bootstrap_dataset(ConstantSampler(-1.5), X, 0)
    assert np.array_equal(d.X, X)
    assert (d.Y == -1.5).all() and d.n == 9


def test_bootstrap_dataset_empty():
    with pytest.raises(ConfigError):
        make_bootstrap_dataset(ConstantSampler(0.0), np.zeros((0, 2)), 0)


def test_bootstrap_dataset_analytic_residuals():
    target = make_target("D5-I")
    X = target.sample_covariates(2000, np.random.default_rng(2))
    sampler = DiffusionSampler(AnalyticGaussianScore(target.f0), build_schedule(0.001, 200))
    d = make_bootstrap_dataset(sampler, X, 4)
    assert np.array_equal(d.X, X)
    assert abs(np.mean(d.Y[:, 0] - target.f0(X))) < 4 / np.sqrt(2000)


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("kw", [{"B": 1}, {"alpha": 0.0}, {"alpha": 1.0}, {"J": 0}])
def test_bootstrap_config_rejects(kw):
    with pytest.raises(ConfigError):
        BootstrapConfig(**kw)


def test_replicate_seeds_distinct():
    seeds = [replicate_seeds(0, b) for b in range(20)]
    flat = [v for s in seeds for v in s.values()]
    assert len(set(flat)) == len(flat)
    assert replicate_seeds(0, 3) == replicate_seeds(0, 3)


# ---------------------------------------------------------------- driver

def _tiny(n=12, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 2))
    return RegressionDataset(X, X.sum(axis=1) + rng.standard_normal(n))


def test_run_bootstrap_structure_with_real_training():
    data = _tiny()
    sch = build_schedule(0.01, 10)
    res = run_bootstrap(data, TrainConfig(epochs=1, batch_size=4), BootstrapConfig(B=2, J=8, seed=1),
                        sch, data.X[:3], hidden=[4])
    assert res.replicate_estimates.shape == (2, 3)
    assert np.allclose(res.centered_stats, res.replicate_estimates - res.f_hat, atol=1e-12, rtol=0)
    assert np.all(res.ci_lo <= res.ci_hi)
    assert res.B == 2 and res.failures == []


def test_run_bootstrap_constant_pipeline():
    data = _tiny()
    res = run_bootstrap(data, TrainConfig(epochs=1), BootstrapConfig(B=5, J=3), build_schedule(0.01, 10),
                        data.X, fit=constant_fit(4.0))
    assert (res.ci_lo == 4.0).all() and (res.ci_hi == 4.0).all()
    covered = (res.ci_lo <= 4.0) & (4.0 <= res.ci_hi)
    assert covered.mean() == 1.0


def test_run_bootstrap_requires_scalar_response():
    data = RegressionDataset(np.zeros((3, 1)), np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        run_bootstrap(data, TrainConfig(epochs=1), BootstrapConfig(B=2), build_schedule(0.01, 10),
                      data.X, fit=constant_fit([0.0, 0.0]))


def test_replicate_reproducible_in_isolation():
    data = _tiny(30)
    train, boot = TrainConfig(epochs=1), BootstrapConfig(B=6, J=20, seed=9)
    sch = build_schedule(0.01, 10)
    res = run_bootstrap(data, train, boot, sch, data.X[:4], fit=mean_fit)
    base = mean_fit(data, train, 0)
    # the toy fit ignores its seed, so the base sampler can be rebuilt exactly
    for b in (0, 4):
        alone = run_replicate(b, base, data, train, boot, data.X[:4], mean_fit, 20)
        assert np.array_equal(alone, res.replicate_estimates[b])


def test_thread_count_does_not_change_numbers():
    data = _tiny(20)
    sch = build_schedule(0.01, 10)
    args = (data, TrainConfig(epochs=2, batch_size=8), BootstrapConfig(B=6, J=10, seed=2), sch, data.X[:5])
    r1 = run_bootstrap(*args, hidden=[6], threads=1)
    r4 = run_bootstrap(*args, hidden=[6], threads=4)
    assert np.array_equal(r1.replicate_estimates, r4.replicate_estimates)
    assert np.array_equal(r1.ci_lo, r4.ci_lo) and np.array_equal(r1.ci_hi, r4.ci_hi)


def _failing_fit(bad):
    calls = {"n": 0}

    def fit(data, config, seed, init=None):
        calls["n"] += 1
        if calls["n"] > 1 and (calls["n"] - 2) in bad:
            raise TrainingError("diverged", epoch=1)
        return ConstantSampler(1.0)
    return fit


def test_failed_replicates_dropped_and_recorded():
    data = _tiny()
    res = run_bootstrap(data, TrainConfig(epochs=1), BootstrapConfig(B=20, J=2), build_schedule(0.01, 10),
                        data.X[:2], fit=_failing_fit({3, 11}))
    assert res.B == 18
    assert [b for b, _ in res.failures] == [3, 11]
    assert 3 not in res.replicate_ids.tolist()


def test_too_many_failures_abort():
    data = _tiny()
    with pytest.raises(BootstrapError):
        run_bootstrap(data, TrainConfig(epochs=1), BootstrapConfig(B=10, J=2), build_schedule(0.01, 10),
                      data.X[:2], fit=_failing_fit({0, 1}))


def test_mean_model_coverage_monte_carlo():
    """Resampling N(mean, 1) around the sample mean: the basic interval covers near 1 - alpha."""
    hits, runs, n = 0, 400, 50
    for s in range(runs):
        rng = np.random.default_rng(1000 + s)
        data = RegressionDataset(np.zeros((n, 1)), rng.standard_normal(n))
        base = mean_fit(data, None, 0)
        reps = np.array([make_bootstrap_dataset(base, data.X, replicate_seeds(s, b)["data"]).Y.mean()
                         for b in range(99)])
        f_hat = float(data.Y.mean())
        lo, hi = confidence_interval(f_hat, reps - f_hat, 0.1)
        hits += lo <= 0.0 <= hi
    assert abs(hits / runs - 0.9) < 4 * math.sqrt(0.9 * 0.1 / runs)


# ---------------------------------------------------------------- CSV

def test_points_and_replicates_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    res = assemble_result(rng.normal(size=(4, 2)), rng.normal(size=4), rng.normal(size=(5, 4)), 0.2)
    f0 = rng.normal(size=4)
    write_points_csv(tmp_path / "p.csv", res, f0)
    write_replicates_csv(tmp_path / "r.csv", res)
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header == "x1,x2,f0,f_hat,ci_lo,ci_hi,covered"
    back = read_points_csv(tmp_path / "p.csv")
    assert np.array_equal(back["f_hat"], res.f_hat) and np.array_equal(back["ci_lo"], res.ci_lo)
    assert np.array_equal(back["covered"], ((res.ci_lo <= f0) & (f0 <= res.ci_hi)).astype(float))
    ids, mat = read_replicates_csv(tmp_path / "r.csv")
    assert ids.tolist() == list(range(5)) and np.array_equal(mat, res.replicate_estimates)
