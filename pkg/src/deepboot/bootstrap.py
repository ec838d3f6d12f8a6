"""Deep bootstrap: conditional-mean estimator, synthetic resampling and intervals.

The base model is fitted to the observed data and ``f_hat(x)`` is the mean of
``J`` generated responses at ``x``. Each replicate draws a fresh response at
every original covariate from the base model, refits from scratch on that
synthetic set, and re-estimates the conditional mean. The interval uses the
centered replicates ``R_b = f*_b - f_hat`` (basic bootstrap):
``[f_hat - Q(1 - alpha/2), f_hat - Q(alpha/2)]``.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .data import RegressionDataset, fmt
from .diffusion import (DiffusionSchedule, NetScoreField, ScoreField, TrainConfig,
                        ei_sample_points, train_score)
from .errors import ConfigError, DeepBootError, DomainError, SamplingError, ShapeError, TrainingError
from .seeding import derive_seed

log = logging.getLogger(__name__)


class BootstrapError(DeepBootError, RuntimeError):
    pass


class ConditionalSampler(Protocol):
    d_y: int

    def sample(self, X: np.ndarray, count: int, seed: int) -> np.ndarray:
        """Return ``(P, count, d_y)`` draws from the fitted conditional law."""
        ...


class DiffusionSampler:
    def __init__(self, score: ScoreField, schedule: DiffusionSchedule,
                 clip_bound: float | None = None):
        self.score = score
        self.schedule = schedule
        self.clip_bound = clip_bound
        self.d_y = score.d_y

    def sample(self, X, count, seed):
        return ei_sample_points(self.score, X, count, self.schedule, seed, self.clip_bound)


class ConstantSampler:
    """Degenerate model whose every draw equals ``value``."""

    def __init__(self, value: float | Sequence[float]):
        self.value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        self.d_y = self.value.size

    def sample(self, X, count, seed):
        P = np.atleast_2d(X).shape[0]
        return np.broadcast_to(self.value, (P, count, self.d_y)).copy()


FitFn = Callable[..., ConditionalSampler]
"""``fit(data, train_config, seed, init=None) -> ConditionalSampler``; ``init`` is the
base model when warm-starting replicates."""


def diffusion_fit(schedule: DiffusionSchedule, hidden: list[int],
                  clip_bound: float | None = None) -> FitFn:
    """Fit function that trains a score net and wraps it in an EI sampler."""

    def fit(data: RegressionDataset, config: TrainConfig, seed: int,
            init: ConditionalSampler | None = None) -> ConditionalSampler:
        cfg = TrainConfig(**{**config.__dict__, "seed": seed})
        warm = getattr(getattr(init, "score", None), "net", None)
        res = train_score(data, cfg, schedule, hidden, init=warm)
        return DiffusionSampler(NetScoreField.from_train(res), schedule, clip_bound)

    return fit


# --------------------------------------------------------------------------
# estimator and resampling


def estimate_fhat_points(sampler: ConditionalSampler, X, J: int, seed: int) -> np.ndarray:
    if J < 1:
        raise ConfigError("J must be at least 1")
    return sampler.sample(np.atleast_2d(X), J, seed).mean(axis=1)


def estimate_fhat(sampler: ConditionalSampler, x, J: int, seed: int) -> np.ndarray:
    """Sample mean of ``J`` generated responses at a single covariate vector."""
    return estimate_fhat_points(sampler, np.asarray(x, dtype=np.float64).reshape(1, -1), J, seed)[0]


def make_bootstrap_dataset(sampler: ConditionalSampler, X, seed: int) -> RegressionDataset:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ConfigError("covariate matrix is empty")
    Y = sampler.sample(X, 1, seed)[:, 0, :]
    return RegressionDataset(X, Y)


# --------------------------------------------------------------------------
# empirical CDF, quantile, interval


def _values(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise DomainError("empty value list")
    return v


def empirical_cdf(values, r: float) -> float:
    v = _values(values)
    return float(np.count_nonzero(v <= r)) / v.size


def quantile(values, q: float) -> float:
    """Generalized inverse of the empirical CDF: sorted value at 1-based index ``ceil(q B)``."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"q={q} outside (0, 1)")
    v = np.sort(_values(values))
    return float(v[_order_index(q, v.size)])


def _order_index(q: float, B: int) -> int:
    # guard against q*B landing a hair above an integer through rounding
    k = math.ceil(round(q * B, 9))
    return min(max(k, 1), B) - 1


def confidence_interval(f_hat: float, centered, alpha: float) -> tuple[float, float]:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha={alpha} outside (0, 1)")
    lo = f_hat - quantile(centered, 1.0 - alpha / 2.0)
    hi = f_hat - quantile(centered, alpha / 2.0)
    return lo, hi


def confidence_intervals(f_hat: np.ndarray, centered: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise intervals: ``centered`` is ``(B, P)``, ``f_hat`` is ``(P,)``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha={alpha} outside (0, 1)")
    c = np.sort(np.asarray(centered, dtype=np.float64), axis=0)
    B = c.shape[0]
    if B == 0:
        raise DomainError("no replicates")
    lo = f_hat - c[_order_index(1.0 - alpha / 2.0, B)]
    hi = f_hat - c[_order_index(alpha / 2.0, B)]
    return lo, hi


# --------------------------------------------------------------------------
# Algorithm driver


@dataclass
class BootstrapConfig:
    B: int = 200
    alpha: float = 0.05
    J: int | None = None  # None: use the training-set size
    replicate_train: TrainConfig | None = None  # None: reuse the base config
    seed: int = 0
    warm_start: bool = False
    max_fail_fraction: float = 0.1

    def __post_init__(self):
        if self.B < 2:
            raise ConfigError("B must be at least 2")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.J is not None and self.J < 1:
            raise ConfigError("J must be positive")


@dataclass
class BootstrapResult:
    eval_points: np.ndarray
    f_hat: np.ndarray
    replicate_estimates: np.ndarray
    centered_stats: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    alpha: float
    replicate_ids: np.ndarray
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def B(self) -> int:
        return self.replicate_estimates.shape[0]

    def intervals(self, alpha: float) -> tuple[np.ndarray, np.ndarray]:
        """Recompute intervals at another level from the same replicates."""
        return confidence_intervals(self.f_hat, self.centered_stats, alpha)


def assemble_result(eval_points, f_hat, replicate_estimates, alpha, replicate_ids=None,
                    failures=None) -> BootstrapResult:
    f_hat = np.asarray(f_hat, dtype=np.float64).ravel()
    reps = np.atleast_2d(np.asarray(replicate_estimates, dtype=np.float64))
    if reps.shape[1] != f_hat.size:
        raise ShapeError("replicate matrix must have one column per evaluation point")
    centered = reps - f_hat
    lo, hi = confidence_intervals(f_hat, centered, alpha)
    ids = np.arange(reps.shape[0]) if replicate_ids is None else np.asarray(replicate_ids)
    return BootstrapResult(np.atleast_2d(eval_points), f_hat, reps, centered, lo, hi, alpha,
                           ids, list(failures or []))


def replicate_seeds(seed: int, b: int) -> dict[str, int]:
    return {stage: derive_seed(seed, f"replicate-{stage}", b) for stage in ("data", "train", "fhat")}


def run_replicate(b: int, base: ConditionalSampler, dataset: RegressionDataset,
                  train: TrainConfig, boot: BootstrapConfig, eval_points: np.ndarray,
                  fit: FitFn, J: int) -> np.ndarray:
    """One replicate, reproducible from ``(boot.seed, b)`` alone."""
    s = replicate_seeds(boot.seed, b)
    synthetic = make_bootstrap_dataset(base, dataset.X, s["data"])
    model = fit(synthetic, train, s["train"], init=base) if boot.warm_start else fit(synthetic, train, s["train"])
    return estimate_fhat_points(model, eval_points, J, s["fhat"])[:, 0]


def run_bootstrap(dataset: RegressionDataset, base_train: TrainConfig, boot: BootstrapConfig,
                  schedule: DiffusionSchedule, eval_points, hidden: list[int] | None = None,
                  fit: FitFn | None = None, threads: int = 1,
                  clip_bound: float | None = None) -> BootstrapResult:
    """Base fit, ``B`` refit replicates, and per-point ``1 - alpha`` intervals.

    ``fit`` overrides model fitting (the default trains a diffusion model with
    ``hidden`` widths). Replicates run on ``threads`` workers; results land in
    fixed slots so the output does not depend on the worker count.
    """
    if dataset.d_y != 1:
        raise ShapeError("bootstrap intervals are defined for a scalar response")
    if fit is None:
        if hidden is None:
            raise ConfigError("hidden widths are required for the default diffusion fit")
        fit = diffusion_fit(schedule, hidden, clip_bound)
    X_eval = np.atleast_2d(np.asarray(eval_points, dtype=np.float64))
    J = boot.J or dataset.n
    rep_train = boot.replicate_train or base_train
    base = fit(dataset, base_train, derive_seed(boot.seed, "base-train"))
    f_hat = estimate_fhat_points(base, X_eval, J, derive_seed(boot.seed, "base-fhat"))[:, 0]

    def one(b: int):
        try:
            return run_replicate(b, base, dataset, rep_train, boot, X_eval, fit, J)
        except (TrainingError, SamplingError) as exc:
            log.warning("replicate %d failed: %s", b, exc)
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            slots = list(pool.map(one, range(boot.B)))
    else:
        slots = [one(b) for b in range(boot.B)]

    failures = [(b, str(r)) for b, r in enumerate(slots) if isinstance(r, Exception)]
    if len(failures) > boot.max_fail_fraction * boot.B:
        raise BootstrapError(f"{len(failures)} of {boot.B} replicates failed")
    ok = [b for b, r in enumerate(slots) if not isinstance(r, Exception)]
    if len(ok) < 2:
        raise BootstrapError("fewer than two replicates succeeded")
    reps = np.stack([slots[b] for b in ok])
    return assemble_result(X_eval, f_hat, reps, boot.alpha, ok, failures)


# --------------------------------------------------------------------------
# CSV output


def write_points_csv(path: str | Path, result: BootstrapResult, f0=None) -> None:
    """One row per evaluation point: ``x1..xd, [f0], f_hat, ci_lo, ci_hi, [covered]``."""
    d = result.eval_points.shape[1]
    header = [f"x{j + 1}" for j in range(d)]
    header += (["f0"] if f0 is not None else []) + ["f_hat", "ci_lo", "ci_hi"]
    header += ["covered"] if f0 is not None else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p in range(result.f_hat.size):
            row = [fmt(v) for v in result.eval_points[p]]
            if f0 is not None:
                row.append(fmt(f0[p]))
            row += [fmt(result.f_hat[p]), fmt(result.ci_lo[p]), fmt(result.ci_hi[p])]
            if f0 is not None:
                row.append(str(int(result.ci_lo[p] <= f0[p] <= result.ci_hi[p])))
            w.writerow(row)


def write_replicates_csv(path: str | Path, result: BootstrapResult) -> None:
    """Sidecar: one row per replicate, ``replicate, p1..pP`` holding ``f*_b`` per point."""
    P = result.f_hat.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate"] + [f"p{p + 1}" for p in range(P)])
        for b, row in zip(result.replicate_ids, result.replicate_estimates):
            w.writerow([str(int(b))] + [fmt(v) for v in row])


def read_points_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
    return {h: body[:, i] if body.size else np.empty(0) for i, h in enumerate(header)}


def read_replicates_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    return body[:, 0].astype(int), body[:, 1:]
