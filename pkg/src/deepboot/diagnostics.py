"""Closed-form oracles and distributional checks for the sampler and the bootstrap.

For ``Y | X = x ~ N(f0(x), 1)`` the noised marginal at forward time ``t`` is
``N(m_t f0(x), m_t^2 + sigma_t^2) = N(m_t f0(x), 1)``, so the exact score is
``m_t f0(x) - y``. Feeding it to the sampler isolates discretization error
from training error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .bootstrap import DiffusionSampler, confidence_intervals
from .data import RegressionDataset, fmt
from .diffusion import (DiffusionSchedule, NetScoreField, ScoreField, TrainConfig, build_schedule,
                        ei_sample_points, m_coef, train_score)
from .errors import ConfigError, DomainError
from .seeding import derive_seed, make_rng


class AnalyticGaussianScore(ScoreField):
    """Exact score of ``N(f0(x), 1)`` noised by the VP kernel. ``f0`` acts on batches."""

    def __init__(self, f0: Callable[[np.ndarray], np.ndarray]):
        self.f0 = f0
        self.d_y = 1

    def prepare(self, X):
        return np.asarray(self.f0(np.atleast_2d(X)), dtype=np.float64).reshape(-1, 1)

    def __call__(self, t, y, ctx):
        return m_coef(t) * ctx - y


class ShiftedGaussianScore(AnalyticGaussianScore):
    """Analytic score of ``N(f0(x) + shift, 1)``."""

    def __init__(self, f0, shift: float):
        super().__init__(f0)
        self.shift = float(shift)

    def prepare(self, X):
        return super().prepare(X) + self.shift


def analytic_score(oracle: AnalyticGaussianScore, t: float, y, x) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t={t} outside [0, 1]")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    ctx = oracle.prepare(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
    return oracle(t, y[None, :], ctx[None, :])[0]


# --------------------------------------------------------------------------
# 1-D Wasserstein distances


def _quantile_pairs(a, b) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise DomainError("empty sample")
    if a.size == b.size:
        return a, b, np.full(a.size, 1.0 / a.size)
    # unequal sizes: integrate |F^-1 - G^-1|^p over the merged quantile breakpoints
    cuts = np.union1d(np.arange(1, a.size + 1) / a.size, np.arange(1, b.size + 1) / b.size)
    widths = np.diff(np.concatenate([[0.0], cuts]))
    mid = cuts - widths / 2
    ia = np.minimum((mid * a.size).astype(int), a.size - 1)
    ib = np.minimum((mid * b.size).astype(int), b.size - 1)
    return a[ia], b[ib], widths


def wasserstein1_1d(a, b) -> float:
    """Exact W1 between two empirical laws on the line (sort and pair)."""
    qa, qb, w = _quantile_pairs(a, b)
    return float(np.sum(w * np.abs(qa - qb)))


def wasserstein2_1d(a, b) -> float:
    qa, qb, w = _quantile_pairs(a, b)
    return float(np.sqrt(np.sum(w * (qa - qb) ** 2)))


# --------------------------------------------------------------------------
# sampler oracle


@dataclass
class OracleReport:
    probes: np.ndarray
    f0: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    w1: np.ndarray
    sample_count: int
    flag_threshold: float = 0.2

    @property
    def mean_error(self) -> np.ndarray:
        return np.abs(self.mean - self.f0)

    @property
    def var_error(self) -> np.ndarray:
        return np.abs(self.var - 1.0)

    @property
    def degraded(self) -> bool:
        return bool((self.w1 > self.flag_threshold).any())

    def rows(self) -> list[dict[str, float]]:
        return [dict(probe=i, f0=self.f0[i], mean=self.mean[i], var=self.var[i],
                     mean_error=self.mean_error[i], var_error=self.var_error[i], w1=self.w1[i])
                for i in range(self.f0.size)]


def sampler_oracle_report(target, schedule: DiffusionSchedule, probe_points, sample_count: int,
                          seed: int) -> OracleReport:
    """Run the sampler with the exact score and compare to exact ``N(f0(x), 1)`` draws."""
    probes = np.atleast_2d(np.asarray(probe_points, dtype=np.float64))
    f0 = target.f0(probes)
    score = AnalyticGaussianScore(target.f0)
    S = ei_sample_points(score, probes, sample_count, schedule, make_rng(seed, "oracle-sampler"))[:, :, 0]
    exact = f0[:, None] + make_rng(seed, "oracle-exact").standard_normal((probes.shape[0], sample_count))
    w1 = np.array([wasserstein1_1d(S[p], exact[p]) for p in range(probes.shape[0])])
    return OracleReport(probes, f0, S.mean(axis=1), S.var(axis=1, ddof=1), w1, sample_count)


def probe_points(target, count: int = 5, seed: int = 0) -> np.ndarray:
    """Fixed probe covariates drawn from the target's covariate law."""
    return target.sample_covariates(count, make_rng(seed, f"probes-{target.id}"))


# --------------------------------------------------------------------------
# oracle fitters for the bootstrap


def oracle_shift_fit(target, schedule: DiffusionSchedule, clip_bound: float | None = None):
    """Fitter that knows ``f0`` up to an additive constant.

    On data ``D`` the fitted law is ``N(f0(x) + c, 1)`` with ``c`` the mean of
    ``Y_i - f0(X_i)``. The bootstrap replicate spread of ``c`` then matches its
    true sampling law, so coverage isolates the interval construction.
    """

    def fit(data: RegressionDataset, config: TrainConfig, seed: int, init=None):
        shift = float(np.mean(data.Y[:, 0] - target.f0(data.X)))
        return DiffusionSampler(ShiftedGaussianScore(target.f0, shift), schedule, clip_bound)

    return fit


def injected_truth_coverage(alpha: float, B: int, trials: int, seed: int = 0) -> float:
    """Coverage when the replicate statistics are exact copies of the estimator's error law.

    Both the estimation error and the ``B`` centered statistics are i.i.d.
    standard normal; the basic interval then covers with probability
    ``(k_hi - k_lo) / (B + 1)`` for the order-statistic indices it uses.
    """
    rng = make_rng(seed, "injected-truth")
    err = rng.standard_normal(trials)
    centered = rng.standard_normal((B, trials))
    f0 = np.zeros(trials)
    lo, hi = confidence_intervals(f0 + err, centered, alpha)
    return float(np.mean((lo <= f0) & (f0 <= hi)))


def injected_truth_exact(alpha: float, B: int) -> float:
    """Closed-form coverage of :func:`injected_truth_coverage` for continuous errors."""
    from .bootstrap import _order_index
    k_lo = _order_index(alpha / 2.0, B) + 1
    k_hi = _order_index(1.0 - alpha / 2.0, B) + 1
    return (k_hi - k_lo) / (B + 1)


# --------------------------------------------------------------------------
# trends


@dataclass
class TrendConfig:
    hidden: list[int] = field(default_factory=lambda: [56, 56])
    epochs: int = 3000
    batch_size: int = 256
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    T: float = 0.002
    K: int = 200
    probe_count: int = 5
    sample_count: int = 2000
    score: str = "net"  # "oracle" substitutes the exact score for training

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           lr_schedule=self.lr_schedule, seed=seed)


@dataclass
class TrendRow:
    n: int
    values: list[float]

    @property
    def median(self) -> float:
        return float(np.median(self.values))

    @property
    def iqr(self) -> float:
        q1, q3 = np.percentile(self.values, [25, 75])
        return float(q3 - q1)


def learned_w1(target, n: int, seed: int, cfg: TrendConfig) -> float:
    """Mean over probe covariates of W1(model samples, exact conditional draws)."""
    from .benchmark import generate_dataset
    schedule = build_schedule(cfg.T, cfg.K)
    probes = probe_points(target, cfg.probe_count)
    if cfg.score == "oracle":
        score: ScoreField = AnalyticGaussianScore(target.f0)
    else:
        data = generate_dataset(target, n, make_rng(seed, f"trend-data-{n}"))
        res = train_score(data, cfg.train_config(derive_seed(seed, "trend-train", n)), schedule, cfg.hidden)
        score = NetScoreField.from_train(res)
    S = ei_sample_points(score, probes, cfg.sample_count, schedule,
                         make_rng(seed, "trend-sample", n))[:, :, 0]
    f0 = target.f0(probes)
    exact = f0[:, None] + make_rng(seed, "trend-exact", n).standard_normal(S.shape)
    return float(np.mean([wasserstein1_1d(S[p], exact[p]) for p in range(len(f0))]))


def convergence_trend(target, n_grid: list[int], seeds: list[int], cfg: TrendConfig) -> list[TrendRow]:
    if len(n_grid) < 3 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ConfigError("n_grid must be increasing with at least 3 entries")
    return [TrendRow(n, [learned_w1(target, n, s, cfg) for s in seeds]) for n in n_grid]


def coverage_trend(target_id: str, n_grid: list[int], alpha: float, seeds: list[int],
                   base_config, threads: int = 1) -> list[TrendRow]:
    """Per-``n`` coverage over seeds; ``base_config`` is an ExperimentConfig template."""
    from .benchmark import run_experiment
    rows = []
    for n in n_grid:
        cps = []
        for s in seeds:
            cfg = base_config.replace(target=target_id, train_size=n, alpha=alpha, seed=s)
            cps.append(run_experiment(cfg, threads=threads).metrics.cp)
        rows.append(TrendRow(n, cps))
    return rows


def write_w1_trend(path: str | Path, rows: list[TrendRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "median_w1", "iqr_w1"])
        for r in rows:
            w.writerow([r.n, fmt(r.median), fmt(r.iqr)])


def write_cp_trend(path: str | Path, rows: list[TrendRow], alpha: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "cp", "abs_gap"])
        for r in rows:
            w.writerow([r.n, fmt(r.median), fmt(abs(r.median - (1.0 - alpha)))])
