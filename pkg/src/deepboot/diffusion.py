"""Variance-preserving conditional diffusion: loss, trainer and sampler.

Forward process on ``t in [0, 1]``: ``y_t = m_t y_0 + sigma_t z`` with
``m_t = 1 - t`` and ``sigma_t = sqrt(t (2 - t))``, so ``m_t^2 + sigma_t^2 = 1``.
The score network ``b(t, y, x)`` is trained in forward time. The sampler runs
the time-reversed SDE in the substituted clock ``s = 1 - t`` and therefore
queries the network at ``1 - t_i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import mlp
from .data import RegressionDataset
from .errors import ConfigError, DomainError, SamplingError, ShapeError, TrainingError
from .seeding import make_rng

log = logging.getLogger(__name__)

SAMPLE_CHUNK_ROWS = 1 << 16


def m_coef(t):
    return 1.0 - np.asarray(t, dtype=np.float64)


def sigma_coef(t):
    t = np.asarray(t, dtype=np.float64)
    return np.sqrt(t * (2.0 - t))


def forward_perturb(y0, t: float, z) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t={t} outside [0, 1]")
    y0 = np.asarray(y0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if y0.shape != z.shape:
        raise ShapeError(f"y0 shape {y0.shape} != z shape {z.shape}")
    return m_coef(t) * y0 + sigma_coef(t) * z


# --------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class DiffusionSchedule:
    T: float
    K: int
    grid: np.ndarray
    steps: np.ndarray
    kind: str = "uniform"

    @property
    def ratios(self) -> np.ndarray:
        return self.grid[1:] / self.grid[:-1]

    def lint(self) -> list[str]:
        bad = np.flatnonzero(self.ratios > 2.0)
        if bad.size == 0:
            return []
        return [f"t[{i + 1}]/t[{i}] = {self.ratios[i]:.4g} exceeds 2" for i in bad]


def _geometric_grid(T: float, K: int) -> np.ndarray:
    end = 1.0 - T
    for g in range(K):
        tg = T * 2.0 ** g
        if tg >= end:
            break
        h = (end - tg) / (K - g)
        if h <= tg:
            head = T * 2.0 ** np.arange(g)
            tail = tg + h * np.arange(K - g + 1)
            tail[-1] = end
            return np.concatenate([head, tail])
    need = int(np.ceil(np.log2(end / T)))
    raise DomainError(f"K={K} too small for a ratio-bounded grid with T={T}; need K >= {need}")


def build_schedule(T: float, K: int, grid_kind: str = "uniform") -> DiffusionSchedule:
    """Time grid ``T = t_0 < ... < t_K = 1 - T``.

    ``uniform`` uses the constant step ``(1 - 2T) / K``. ``geometric`` doubles
    from ``T`` until an evenly spaced remainder keeps every ratio
    ``t_{i+1}/t_i <= 2``, then spaces the remaining steps evenly.
    """
    if not 0.0 < T < 0.5:
        raise DomainError(f"T={T} must lie in (0, 0.5)")
    if int(K) != K or K < 1:
        raise ConfigError(f"K={K} must be a positive integer")
    K = int(K)
    if grid_kind == "uniform":
        h = (1.0 - 2.0 * T) / K
        grid = T + h * np.arange(K + 1)
        grid[-1] = 1.0 - T
        steps = np.full(K, h)
    elif grid_kind == "geometric":
        grid = _geometric_grid(T, K)
        steps = np.diff(grid)
    else:
        raise ConfigError(f"unknown grid kind {grid_kind!r}")
    sched = DiffusionSchedule(float(T), K, grid, steps, grid_kind)
    for msg in sched.lint():
        log.debug("schedule lint: %s", msg)
    return sched


# --------------------------------------------------------------------------
# standardization


@dataclass
class StandardizationState:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    def __post_init__(self):
        for name in ("x_mean", "x_std", "y_mean", "y_std"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).ravel())
        if (self.x_std <= 0).any() or (self.y_std <= 0).any():
            raise ConfigError("standard deviations must be strictly positive")

    @classmethod
    def fit(cls, data: RegressionDataset) -> StandardizationState:
        def safe_std(a):
            s = a.std(axis=0)
            return np.where(s > 0, s, 1.0)
        return cls(data.X.mean(axis=0), safe_std(data.X), data.Y.mean(axis=0), safe_std(data.Y))

    @classmethod
    def identity(cls, d_x: int, d_y: int) -> StandardizationState:
        return cls(np.zeros(d_x), np.ones(d_x), np.zeros(d_y), np.ones(d_y))

    def x_forward(self, X):
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_std

    def y_forward(self, Y):
        return (np.asarray(Y, dtype=np.float64) - self.y_mean) / self.y_std

    def y_inverse(self, Ys):
        return np.asarray(Ys, dtype=np.float64) * self.y_std + self.y_mean

    def x_inverse(self, Xs):
        return np.asarray(Xs, dtype=np.float64) * self.x_std + self.x_mean

    def apply(self, data: RegressionDataset) -> RegressionDataset:
        return RegressionDataset(self.x_forward(data.X), self.y_forward(data.Y))

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("x_mean", "x_std", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, d: dict) -> StandardizationState:
        return cls(d["x_mean"], d["x_std"], d["y_mean"], d["y_std"])


# --------------------------------------------------------------------------
# configs

TRAIN_MODES = ("stochastic", "strict-erm")
LR_SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    epochs: int = 400
    batch_size: int = 256
    mode: str = "stochastic"
    m: int = 1
    lr: float = 1e-3
    seed: int = 0
    standardize: bool = True
    early_stop: bool = False
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.m < 1:
            raise ConfigError("epochs, batch_size and m must be positive")
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.lr < 0:
            raise ConfigError("learning rate must be nonnegative")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")


@dataclass
class SamplerConfig:
    sample_count: int = 1
    clip_bound: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.sample_count < 0:
            raise ConfigError("sample_count must be nonnegative")
        if self.clip_bound is not None and not (np.isfinite(self.clip_bound) and self.clip_bound >= 0):
            raise ConfigError("clip_bound must be finite and nonnegative")


# --------------------------------------------------------------------------
# denoising score matching


def net_input(t, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Rows ``[t, y, x]``; ``t`` may be a scalar or one time per row."""
    t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (y.shape[0], 1))
    return np.concatenate([t, y, x], axis=1)


def _check_times(times: np.ndarray, T: float | None) -> None:
    lo, hi = (T, 1.0 - T) if T is not None else (0.0, 1.0)
    bad = (times < lo) | (times > hi) | ((times <= 0.0) | (times >= 1.0))
    if bad.any():
        raise DomainError(f"diffusion times must lie in [{lo}, {hi}] strictly inside (0, 1)")


def _dsm_rows(net, X, Y, t, z):
    """Per-row weight, prediction and target residual for one draw per row."""
    sig = sigma_coef(t)[:, None]
    yt = m_coef(t)[:, None] * Y + sig * z
    inp = net_input(t, yt, X)
    out, acts = mlp.forward_cached(net, inp)
    resid = out + z / sig
    w = 1.0 / (1.0 - t)
    return w, resid, acts


def dsm_loss_strict(net: mlp.MlpScoreNet, dataset: RegressionDataset, times, noises,
                    T: float | None = None) -> float:
    """The full double-sum empirical risk over ``n`` data pairs and ``m`` (t, z) draws.

    ``(1/mn) sum_j sum_i (1/(1-t_j)) ||b(t_j, m y_i + sigma z_j, x_i) + z_j/sigma||^2``
    """
    times = np.asarray(times, dtype=np.float64).ravel()
    noises = np.asarray(noises, dtype=np.float64).reshape(times.size, -1)
    if noises.shape[1] != dataset.d_y:
        raise ShapeError("noise dimension must match the response dimension")
    _check_times(times, T)
    n, m = dataset.n, times.size
    # row (j, i) in j-major order
    t = np.repeat(times, n)
    z = np.repeat(noises, n, axis=0)
    X = np.tile(dataset.X, (m, 1))
    Y = np.tile(dataset.Y, (m, 1))
    w, resid, _ = _dsm_rows(net, X, Y, t, z)
    return float(np.sum(w * np.sum(resid * resid, axis=1)) / (n * m))


def dsm_loss_stochastic_batch(net: mlp.MlpScoreNet, X: np.ndarray, Y: np.ndarray,
                              rng: np.random.Generator | None, T: float,
                              times=None, noises=None) -> tuple[float, mlp.Gradients]:
    """Minibatch loss with one fresh ``(t, z)`` per row, plus parameter gradients.

    Frozen ``times``/``noises`` bypass the generator.
    """
    n = X.shape[0]
    if times is None:
        times = rng.uniform(T, 1.0 - T, size=n)
    if noises is None:
        noises = rng.standard_normal(Y.shape)
    t = np.asarray(times, dtype=np.float64).ravel()
    z = np.asarray(noises, dtype=np.float64).reshape(Y.shape)
    _check_times(t, T)
    w, resid, acts = _dsm_rows(net, X, Y, t, z)
    loss = float(np.sum(w * np.sum(resid * resid, axis=1)) / n)
    grads = mlp.backward_cached(net, acts, (2.0 / n) * w[:, None] * resid)
    return loss, grads


class TrainResult(NamedTuple):
    net: mlp.MlpScoreNet
    standardization: StandardizationState
    loss_trace: list[float]


def _early_stop(trace: list[float], window: int = 5, tol: float = 0.01) -> bool:
    if len(trace) < 2 * window:
        return False
    prev = np.mean(trace[-2 * window:-window])
    last = np.mean(trace[-window:])
    return (prev - last) < tol * abs(prev)


def train_score(dataset: RegressionDataset, config: TrainConfig, schedule: DiffusionSchedule,
                hidden: list[int], init: mlp.MlpScoreNet | None = None,
                on_epoch: Callable[[int, mlp.MlpScoreNet, float], None] | None = None) -> TrainResult:
    """Fit the conditional score network by denoising score matching with Adam.

    ``init`` warm-starts from an existing net (copied, never mutated).
    """
    if dataset.n < 1:
        raise ConfigError("cannot train on an empty dataset")
    std = (StandardizationState.fit(dataset) if config.standardize
           else StandardizationState.identity(dataset.d_x, dataset.d_y))
    data = std.apply(dataset)
    sizes = [1 + data.d_y + data.d_x, *hidden, data.d_y]
    if init is not None:
        if list(init.layer_sizes) != sizes:
            raise ShapeError(f"warm-start net has sizes {init.layer_sizes}, expected {sizes}")
        net = init.copy()
    else:
        net = mlp.init_net(sizes, make_rng(config.seed, "init"))
    adam = mlp.AdamState.for_net(net, lr=config.lr)
    rng = make_rng(config.seed, "train")
    T = schedule.T
    n = data.n
    bs = min(config.batch_size, n * (config.m if config.mode == "strict-erm" else 1))

    if config.mode == "strict-erm":
        times = rng.uniform(T, 1.0 - T, size=config.m)
        noises = rng.standard_normal((config.m, data.d_y))
        total = n * config.m

    trace: list[float] = []
    for epoch in range(1, config.epochs + 1):
        if config.lr_schedule == "cosine":
            adam.lr = config.lr * 0.5 * (1.0 + np.cos(np.pi * (epoch - 1) / config.epochs))
        if config.mode == "stochastic":
            order = rng.permutation(n)
            total = n
        else:
            order = rng.permutation(total)
        epoch_loss = 0.0
        for start in range(0, total, bs):
            idx = order[start:start + bs]
            if config.mode == "stochastic":
                loss, grads = dsm_loss_stochastic_batch(net, data.X[idx], data.Y[idx], rng, T)
            else:
                j, i = np.divmod(idx, n)
                loss, grads = dsm_loss_stochastic_batch(
                    net, data.X[i], data.Y[i], None, T, times=times[j], noises=noises[j])
            if not np.isfinite(loss):
                raise TrainingError("non-finite training loss", epoch)
            try:
                mlp.adam_step(net, grads, adam)
            except TrainingError as exc:
                raise TrainingError(str(exc), epoch) from None
            epoch_loss += loss * idx.size
        trace.append(epoch_loss / total)
        if on_epoch is not None:
            on_epoch(epoch, net, trace[-1])
        if config.early_stop and _early_stop(trace):
            log.info("early stop at epoch %d", epoch)
            break
    return TrainResult(net, std, trace)


# --------------------------------------------------------------------------
# score fields and the exponential-integrator sampler


class ScoreField:
    """Score of the noised conditional law, queried in forward time.

    ``prepare`` maps raw covariates to whatever per-row context ``__call__``
    needs; ``to_response`` maps the sampler's terminal state back to the
    original response scale.
    """

    d_y: int = 1

    def prepare(self, X: np.ndarray) -> np.ndarray:
        return X

    def __call__(self, t: float, y: np.ndarray, ctx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_response(self, y: np.ndarray) -> np.ndarray:
        return y


class NetScoreField(ScoreField):
    def __init__(self, net: mlp.MlpScoreNet, standardization: StandardizationState):
        self.net = net
        self.std = standardization
        self.d_y = net.layer_sizes[-1]

    @classmethod
    def from_train(cls, result: TrainResult) -> NetScoreField:
        return cls(result.net, result.standardization)

    def prepare(self, X):
        return self.std.x_forward(X)

    def __call__(self, t, y, ctx):
        out, _ = mlp.forward_cached(self.net, net_input(t, y, ctx))
        return out

    def to_response(self, y):
        return self.std.y_inverse(y)


class FunctionScoreField(ScoreField):
    """Wrap a plain ``f(t, y, x) -> score`` callable on the original scale."""

    def __init__(self, fn: Callable[[float, np.ndarray, np.ndarray], np.ndarray], d_y: int = 1):
        self.fn = fn
        self.d_y = d_y

    def __call__(self, t, y, ctx):
        return self.fn(t, y, ctx)


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _clip(samples: np.ndarray, bound: float | None) -> np.ndarray:
    if bound is None:
        return samples
    out = samples.copy()
    out[np.abs(samples).max(axis=-1) > bound] = 0.0
    return out


def _ei_chain(score: ScoreField, ctx: np.ndarray, schedule: DiffusionSchedule,
              rng: np.random.Generator, y0: np.ndarray | None = None,
              eps: np.ndarray | None = None) -> np.ndarray:
    rows = ctx.shape[0]
    y = rng.standard_normal((rows, score.d_y)) if y0 is None else np.array(y0, dtype=np.float64)
    grid = schedule.grid
    noise_scale = np.sqrt(2.0 * np.log(grid[1:] / grid[:-1]))
    for i in range(schedule.K):
        ti = grid[i]
        drift = (y + 2.0 * score(1.0 - ti, y, ctx)) / ti
        e = rng.standard_normal(y.shape) if eps is None else eps[i]
        y = y + schedule.steps[i] * drift + noise_scale[i] * e
        if not np.isfinite(y).all():
            raise SamplingError("non-finite state in reverse chain", i + 1)
    return y


def ei_sample_points(score: ScoreField, X: np.ndarray, count: int, schedule: DiffusionSchedule,
                     seed: int | np.random.Generator = 0,
                     clip_bound: float | None = None) -> np.ndarray:
    """Draw ``count`` responses at every covariate row. Returns ``(P, count, d_y)``.

    Trajectories are processed in fixed-size chunks in row order, so the random
    stream consumed per trajectory depends only on the seed and the shapes.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    P = X.shape[0]
    rng = _as_rng(seed)
    out = np.empty((P * count, score.d_y))
    if count == 0:
        return out.reshape(P, 0, score.d_y)
    ctx_all = score.prepare(X)
    total = P * count
    for start in range(0, total, SAMPLE_CHUNK_ROWS):
        stop = min(start + SAMPLE_CHUNK_ROWS, total)
        ctx = ctx_all[np.arange(start, stop) // count]
        out[start:stop] = score.to_response(_ei_chain(score, ctx, schedule, rng))
    return _clip(out.reshape(P, count, score.d_y), clip_bound)


def ei_sample(score: ScoreField, x, schedule: DiffusionSchedule,
              config: SamplerConfig) -> np.ndarray:
    """``config.sample_count`` independent reverse-chain endpoints at one covariate vector."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return ei_sample_points(score, x, config.sample_count, schedule,
                            config.seed, config.clip_bound)[0]
