"""Acceptance criteria, one test each.

Every test records a one-line detail and the conftest prints a PASS/FAIL line
per criterion at the end of the run. Criteria 5 to 7 train hundreds of
networks and take most of the suite's wall time.
"""

import time

import numpy as np
import pytest

from deepboot.benchmark import TARGET_IDS, make_target, profile, run_experiment
from deepboot.bootstrap import (assemble_result, confidence_interval, empirical_cdf, quantile)
from deepboot.cli import main
from deepboot.data import RegressionDataset
from deepboot.diagnostics import TrendConfig, convergence_trend, coverage_trend, probe_points, sampler_oracle_report
from deepboot.diffusion import build_schedule, dsm_loss_strict
from deepboot.mlp import backward, init_net

from test_diffusion import brute_force_loss
from test_mlp import fd_gradients, max_rel_err


@pytest.mark.criterion(1, "gradient suite")
def test_gradient_suite(record_property):
    t0 = time.time()
    rng = np.random.default_rng(2024)
    worst, count = 0.0, 0
    while count < 24:
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(2, 9)) for _ in range(depth + 2)]
        net = init_net(sizes, rng)
        if net.n_params > 1000:
            continue
        for b in net.biases:
            b[...] = rng.normal(size=b.shape) * 0.1
        x = rng.normal(size=(4, sizes[0]))
        g = rng.normal(size=(4, sizes[-1]))
        worst = max(worst, max_rel_err(backward(net, x, g).params(), fd_gradients(net, x, g)))
        count += 1
    elapsed = time.time() - t0
    record_property("detail", f"{count} nets, max rel err {worst:.2e}, {elapsed:.1f} s")
    assert worst < 1e-5 and elapsed < 10


@pytest.mark.criterion(2, "loss oracle equivalence")
def test_loss_oracle(record_property):
    t0 = time.time()
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(50):
        d_x, d_y, n, m = (int(v) for v in rng.integers(1, 4, size=4))
        net = init_net([1 + d_y + d_x, int(rng.integers(2, 7)), d_y], rng)
        X, Y = rng.normal(size=(n, d_x)), rng.normal(size=(n, d_y))
        times, noises = rng.uniform(0.01, 0.99, size=m), rng.normal(size=(m, d_y))
        got = dsm_loss_strict(net, RegressionDataset(X, Y), times, noises, T=0.01)
        ref = brute_force_loss(net, X, Y, times, noises)
        worst = max(worst, abs(got - ref) / max(1.0, abs(ref)))
    elapsed = time.time() - t0
    record_property("detail", f"50 instances, max rel diff {worst:.2e}, {elapsed:.2f} s")
    assert worst < 1e-12 and elapsed < 5


@pytest.mark.criterion(3, "sampler oracle")
def test_sampler_oracle(record_property):
    t0 = time.time()
    schedule = build_schedule(1e-3, 200)
    worst = {"mean": 0.0, "var": 0.0, "w1": 0.0}
    for tid in TARGET_IDS:
        target = make_target(tid)
        rep = sampler_oracle_report(target, schedule, probe_points(target, 5), 10_000, 0)
        worst["mean"] = max(worst["mean"], rep.mean_error.max())
        worst["var"] = max(worst["var"], rep.var_error.max())
        worst["w1"] = max(worst["w1"], rep.w1.max())
    elapsed = time.time() - t0
    record_property("detail", f"max |mean err| {worst['mean']:.4f}, max |var-1| {worst['var']:.4f}, "
                              f"max W1 {worst['w1']:.4f}, {elapsed:.1f} s")
    assert worst["mean"] < 0.05 and worst["var"] < 0.1 and worst["w1"] < 0.05 and elapsed < 120


@pytest.mark.criterion(4, "quantile/CDF/CI suite")
def test_quantile_suite(record_property):
    t0 = time.time()
    # worked examples
    assert empirical_cdf([1, 2, 3, 4], 2.5) == 0.5
    assert empirical_cdf([1, 2, 3], 0.0) == 0.0 and empirical_cdf([1, 2, 3], 3.0) == 1.0
    u = np.random.default_rng(0).uniform(size=100)
    assert empirical_cdf(u, np.sort(u)[49]) == 0.5
    assert quantile([-2, -1, 1, 2], 0.75) == 1 and quantile([-2, -1, 1, 2], 0.25) == -2
    assert quantile([3.5] * 9, 0.4) == 3.5
    assert confidence_interval(1.5, [0.0] * 8, 0.05) == (1.5, 1.5)
    assert confidence_interval(0.0, [-2, -1, 1, 2], 0.5) == (-1.0, 2.0)
    # properties over random instances
    rng = np.random.default_rng(4)
    instances = 1000
    for _ in range(instances):
        B = int(rng.integers(2, 80))
        vals = np.round(rng.normal(size=B), int(rng.integers(0, 3)))  # rounding creates ties
        for k in range(1, B):
            r = quantile(vals, k / B)
            assert empirical_cdf(vals, r) >= k / B
            below = vals[vals < r]
            # the CDF is monotone, so minimality only needs the largest smaller value
            assert below.size == 0 or empirical_cdf(vals, below.max()) < k / B
        a1, a2 = np.sort(rng.uniform(0.01, 0.99, size=2))
        f_hat = float(rng.normal())
        lo2, hi2 = confidence_interval(f_hat, vals, a2)
        lo1, hi1 = confidence_interval(f_hat, vals, a1)
        assert lo2 <= hi2 and lo1 <= lo2 and hi2 <= hi1
        P = int(rng.integers(1, 4))
        fh = rng.normal(size=P)
        reps = fh + rng.normal(size=(B, P))
        res = assemble_result(np.zeros((P, 1)), fh, reps, a2)
        assert np.max(np.abs(res.centered_stats - (reps - fh))) <= 1e-12
        perm = assemble_result(np.zeros((P, 1)), fh, reps[rng.permutation(B)], a2)
        assert np.array_equal(perm.ci_lo, res.ci_lo) and np.array_equal(perm.ci_hi, res.ci_hi)
    elapsed = time.time() - t0
    record_property("detail", f"examples plus {instances} random instances, {elapsed:.1f} s")
    assert elapsed < 10


@pytest.mark.slow
@pytest.mark.criterion(5, "desk-scale coverage D5-I")
def test_desk_coverage(record_property):
    t0 = time.time()
    cfg = profile("desk", "D5-I")
    assert (cfg.n_train, cfg.test_size, cfg.B, cfg.J, cfg.alpha) == (2000, 200, 50, 500, 0.05)
    m = run_experiment(cfg).metrics
    elapsed = time.time() - t0
    record_property("detail", f"CP {m.cp:.3f}, median length {m.median_length:.3f}, MSE_org {m.mse_org:.4f}, "
                              f"MSE_b {m.mse_b:.4f}, {elapsed / 60:.1f} min")
    assert 0.87 <= m.cp <= 1.0 and m.median_length < 1.0


@pytest.mark.slow
@pytest.mark.criterion(6, "convergence trend D5-II")
def test_convergence_trend(record_property):
    t0 = time.time()
    cfg = TrendConfig(hidden=[56, 56], epochs=3000, sample_count=2000, probe_count=5)
    rows = convergence_trend(make_target("D5-II"), [250, 1000, 4000], [0, 1, 2, 3, 4], cfg)
    meds = [r.median for r in rows]
    elapsed = time.time() - t0
    record_property("detail", "median W1 " + ", ".join(f"n={r.n}: {r.median:.4f}" for r in rows)
                    + f", {elapsed / 60:.1f} min")
    assert all(b < a for a, b in zip(meds, meds[1:]))


@pytest.mark.slow
@pytest.mark.criterion(7, "coverage trend")
def test_coverage_trend(record_property):
    t0 = time.time()
    base = profile("desk", "D5-I").replace(test_size=100, J=200, epochs=1500)
    rows = coverage_trend("D5-I", [500, 2000], 0.05, [0, 1, 2, 3, 4], base)
    gaps = [abs(r.median - 0.95) for r in rows]
    elapsed = time.time() - t0
    record_property("detail", "median CP " + ", ".join(f"n={r.n}: {r.median:.3f}" for r in rows)
                    + f", {elapsed / 60:.1f} min")
    assert gaps[1] <= gaps[0]


@pytest.mark.criterion(8, "reproducibility")
def test_reproducibility(tmp_path, record_property):
    t0 = time.time()

    def files(d):
        return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}

    small = ["--set", "network.hidden=8", "--set", "diffusion.K=20", "--set", "train.epochs=2"]
    data = tmp_path / "gen" / "data.csv"
    commands = {
        "generate": ["generate", "--target", "d10-i", "--n", "80", "--seed", "3", "--out", str(data)],
        "train": ["train", "--data", str(data), "--seed", "2", *small],
        "sample": ["sample", "--oracle-target", "d5-ii", "--x", "0,0,0,0,0", "--count", "500", *small],
        "bootstrap": ["bootstrap", "--data", str(data), "--seed", "2", "--set", "bootstrap.B=4",
                      "--set", "bootstrap.J=8", *small],
        "benchmark": ["benchmark", "--profile", "dry-run", "--set", "bootstrap.B=4"],
        "diagnose": ["diagnose", "oracle", "--target", "d10-iii", "--probes", "2", "--samples", "300"],
    }
    checked = 0
    for name, argv in commands.items():
        first = data.parent if name == "generate" else tmp_path / name / "first"
        if name != "generate":
            argv = argv + ["--out", str(first)]
        assert main(argv) == 0
        again = tmp_path / name / "again"
        # generate writes a single file, so its replay target is a file path too
        target = again / "data.csv" if name == "generate" else again
        assert main(["rerun", str(first / "manifest.json"), "--out", str(target)]) == 0
        assert files(first) == files(again), name
        checked += 1
    for k in (1, 8):
        assert main(["benchmark", "--profile", "dry-run", "--set", "bootstrap.B=6", "--threads", str(k),
                     "--out", str(tmp_path / f"threads{k}")]) == 0
    same = files(tmp_path / "threads1") == files(tmp_path / "threads8")
    elapsed = time.time() - t0
    record_property("detail", f"{checked} commands replayed byte-identically, threads 1 vs 8 identical: {same}, "
                              f"{elapsed:.1f} s")
    assert same and elapsed < 300
