"""Synthetic regression benchmarks, interval metrics and the experiment driver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .bootstrap import (BootstrapConfig, BootstrapResult, FitFn, run_bootstrap,
                        write_points_csv, write_replicates_csv)
from .data import RegressionDataset, fmt
from .diffusion import TrainConfig, build_schedule
from .errors import ConfigError, DomainError, ShapeError
from .seeding import make_rng

log = logging.getLogger(__name__)

TARGET_IDS = ("D5-I", "D5-II", "D10-I", "D10-II", "D10-III")


def normalize_target_id(name: str) -> str:
    key = name.strip().upper()
    if key not in TARGET_IDS:
        raise ConfigError(f"unknown target {name!r}; expected one of {', '.join(TARGET_IDS)}")
    return key


@dataclass
class SyntheticTarget:
    id: str
    d_x: int
    covariate_law: str
    W: np.ndarray | None = None
    b: float | None = None
    weight_seed: int | None = None

    def f0(self, X) -> np.ndarray:
        """Regression function on a batch ``(N, d_x)``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.d_x:
            raise ShapeError(f"{self.id} expects {self.d_x} covariates, got {X.shape[1]}")
        x = [X[:, j] for j in range(self.d_x)]
        if self.id == "D5-I":
            return (2 * x[0] - x[1] + 1) ** 2 + np.abs(x[2] - 5) + np.exp(x[3] + x[4] / 2)
        if self.id == "D5-II":
            return (2 * x[0] - 1) ** 2 - x[1] ** 3 + np.exp((x[2] + x[3] + x[4]) / 10)
        if self.id == "D10-I":
            return X @ self.W + self.b
        if self.id == "D10-II":
            return (3 * x[0] + 4 * (x[1] - 0.5) ** 2 - x[2] ** 2
                    + 2 * np.sin(np.pi * (x[3] + 2 * x[4])) - 5 * np.abs(x[5] - 0.5)
                    + np.exp((x[6] + x[7] + x[8] + x[9]) / 10))
        if self.id == "D10-III":
            total = 0.0
            for i in range(2):
                a, b_, c, d, e = x[5 * i:5 * i + 5]
                total = total + np.sin(2 * a + b_) + 0.5 * (np.cos(c) + d ** 2) * e
            return 0.5 * total
        raise ConfigError(f"unknown target {self.id}")

    def sample_covariates(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.covariate_law == "uniform":
            return rng.uniform(0.0, 1.0, size=(n, self.d_x))
        return rng.standard_normal((n, self.d_x))

    def describe(self) -> dict[str, str]:
        out = {"target": self.id, "target_d_x": str(self.d_x), "target_covariates": self.covariate_law}
        if self.W is not None:
            out["target_W"] = " ".join(fmt(w) for w in self.W)
            out["target_b"] = fmt(self.b)
            out["target_weight_seed"] = str(self.weight_seed)
        return out


def make_target(name: str, seed: int = 0) -> SyntheticTarget:
    """Build a benchmark target; D10-I draws its ``(W, b)`` from U[-1, 1] with ``seed``."""
    tid = normalize_target_id(name)
    d_x = 5 if tid.startswith("D5") else 10
    law = "uniform" if tid in ("D5-I", "D10-II") else "normal"
    if tid == "D10-I":
        rng = make_rng(seed, "d10-i-weights")
        W = rng.uniform(-1.0, 1.0, size=d_x)
        b = float(rng.uniform(-1.0, 1.0))
        return SyntheticTarget(tid, d_x, law, W, b, seed)
    return SyntheticTarget(tid, d_x, law)


def eval_f0(target: SyntheticTarget, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != target.d_x:
        raise ShapeError(f"{target.id} expects a covariate vector of length {target.d_x}")
    return float(target.f0(x[None, :])[0])


def generate_dataset(target: SyntheticTarget, n: int, seed: int | np.random.Generator) -> RegressionDataset:
    """``Y = f0(X) + eps`` with standard normal noise."""
    if n < 1:
        raise ConfigError("n must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, f"dataset-{target.id}")
    X = target.sample_covariates(n, rng)
    Y = target.f0(X) + rng.standard_normal(n)
    return RegressionDataset(X, Y)


# --------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    cp: float
    mse_org: float
    mse_b: float
    interval_length: float
    n_test: int
    median_length: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def compute_metrics(result: BootstrapResult, f0_values) -> MetricsReport:
    f0 = np.asarray(f0_values, dtype=np.float64).ravel()
    if f0.size != result.f_hat.size:
        raise ShapeError(f"{f0.size} truth values for {result.f_hat.size} evaluation points")
    covered = (result.ci_lo <= f0) & (f0 <= result.ci_hi)
    length = result.ci_hi - result.ci_lo
    return MetricsReport(
        cp=float(np.count_nonzero(covered)) / f0.size,
        mse_org=float(np.mean((result.f_hat - f0) ** 2)),
        mse_b=float(np.mean(np.mean(result.centered_stats ** 2, axis=0))),
        interval_length=float(np.mean(length)),
        n_test=int(f0.size),
        median_length=float(np.median(length)),
    )


def aggregate_metrics(reports: list[MetricsReport]) -> dict[str, float]:
    """Mean and median of each metric over independent runs (e.g. seeds)."""
    out: dict[str, float] = {"runs": float(len(reports))}
    for name in ("cp", "mse_org", "mse_b", "interval_length", "median_length"):
        vals = np.array([getattr(r, name) for r in reports])
        out[f"{name}_mean"] = float(vals.mean())
        out[f"{name}_median"] = float(np.median(vals))
    return out


# --------------------------------------------------------------------------
# experiment configuration


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_optional(parse):
    def inner(s: str):
        return None if s.strip().lower() in ("", "none") else parse(s)
    return inner


def _parse_widths(s: str) -> list[int]:
    s = s.strip().strip("[]")
    try:
        return [int(v) for v in s.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"hidden widths must be integers, got {s!r}") from None


def _show(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return fmt(v)
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return str(v)


# config key -> (attribute, parser)
CONFIG_KEYS: dict[str, tuple[str, object]] = {
    "experiment.target": ("target", normalize_target_id),
    "experiment.seed": ("seed", int),
    "experiment.test_size": ("test_size", int),
    "experiment.test_ratio": ("test_ratio", float),
    "experiment.train_size": ("train_size", _parse_optional(int)),
    "experiment.score": ("score", str),
    "network.hidden": ("hidden", _parse_widths),
    "diffusion.T": ("T", float),
    "diffusion.K": ("K", int),
    "diffusion.grid": ("grid", str),
    "sampler.clip_bound": ("clip_bound", _parse_optional(float)),
    "train.epochs": ("epochs", int),
    "train.batch_size": ("batch_size", int),
    "train.mode": ("mode", str),
    "train.m": ("m", int),
    "train.lr": ("lr", float),
    "train.lr_schedule": ("lr_schedule", str),
    "train.early_stop": ("early_stop", _parse_bool),
    "train.standardize": ("standardize", _parse_bool),
    "bootstrap.B": ("B", int),
    "bootstrap.alpha": ("alpha", float),
    "bootstrap.J": ("J", _parse_optional(int)),
    "bootstrap.replicate_epochs": ("replicate_epochs", _parse_optional(int)),
    "bootstrap.warm_start": ("warm_start", _parse_bool),
}

SCORE_KINDS = ("net", "oracle")


@dataclass
class ExperimentConfig:
    target: str = "D5-I"
    seed: int = 0
    test_size: int = 2500
    test_ratio: float = 0.02
    train_size: int | None = None
    score: str = "net"
    hidden: list[int] = field(default_factory=lambda: [48, 48])
    T: float = 0.002
    K: int = 200
    grid: str = "uniform"
    clip_bound: float | None = None
    epochs: int = 3000
    batch_size: int = 256
    mode: str = "stochastic"
    m: int = 1
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    early_stop: bool = False
    standardize: bool = True
    B: int = 200
    alpha: float = 0.05
    J: int | None = None
    replicate_epochs: int | None = None
    warm_start: bool = False

    def __post_init__(self):
        self.target = normalize_target_id(self.target)
        if self.score not in SCORE_KINDS:
            raise ConfigError(f"experiment.score must be one of {SCORE_KINDS}")
        if self.test_size < 1:
            raise ConfigError("test_size must be positive")
        if self.train_size is None and not 0.0 < self.test_ratio < 1.0:
            raise ConfigError("test_ratio must lie in (0, 1)")
        if self.n_train < 1:
            raise ConfigError("derived train size must be positive")
        if not self.hidden or any(w < 1 for w in self.hidden):
            raise ConfigError("hidden widths must be positive")
        # validate sub-configs eagerly
        try:
            self.train_config()
            self.boot_config()
            self.schedule()
        except DomainError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def n_train(self) -> int:
        if self.train_size is not None:
            return self.train_size
        return int(round(self.test_size * (1.0 - self.test_ratio) / self.test_ratio))

    def train_config(self, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(epochs=epochs or self.epochs, batch_size=self.batch_size, mode=self.mode,
                           m=self.m, lr=self.lr, seed=self.seed, standardize=self.standardize,
                           early_stop=self.early_stop, lr_schedule=self.lr_schedule)

    def boot_config(self) -> BootstrapConfig:
        rep = self.train_config(self.replicate_epochs) if self.replicate_epochs else None
        return BootstrapConfig(B=self.B, alpha=self.alpha, J=self.J, replicate_train=rep,
                               seed=self.seed, warm_start=self.warm_start)

    def schedule(self):
        return build_schedule(self.T, self.K, self.grid)

    def to_items(self) -> list[tuple[str, str]]:
        return [(key, _show(getattr(self, attr))) for key, (attr, _) in CONFIG_KEYS.items()]

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_items())

    def replace(self, **changes) -> ExperimentConfig:
        return ExperimentConfig(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **changes})


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse flat ``section.key = value`` lines; ``#`` starts a comment.

    Every unknown key is reported at once.
    """
    values: dict[str, object] = {}
    unknown, bad = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            bad.append(f"line {lineno}: expected 'key = value'")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            unknown.append(key)
            continue
        attr, parse = CONFIG_KEYS[key]
        try:
            values[attr] = parse(val)  # type: ignore[operator]
        except (ValueError, ConfigError) as exc:
            bad.append(f"{key}: {exc}")
    if unknown:
        bad.insert(0, "unknown config keys: " + ", ".join(unknown))
    if bad:
        raise ConfigError("; ".join(bad))
    return (base or ExperimentConfig()).replace(**values)


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(), base)


TABLE5 = {
    # target: (test ratio, hidden widths)
    "D5-I": (0.02, [48, 48]),
    "D5-II": (0.02, [56, 56]),
    "D10-I": (0.025, [48, 48]),
    "D10-II": (0.0125, [56, 56]),
    "D10-III": (0.0125, [64, 64]),
}


def profile(name: str, target: str = "D5-I") -> ExperimentConfig:
    """Named presets.

    ``table``: the published configuration (test 2500, B 200, alpha 0.05,
    the per-target ratio and widths). ``desk``: scaled-down run (train 2000,
    test 200, B 50, J 500). ``dry-run``: structural smoke test.
    """
    tid = normalize_target_id(target)
    ratio, hidden = TABLE5[tid]
    base = ExperimentConfig(target=tid, test_ratio=ratio, hidden=hidden)
    if name == "table":
        return base
    if name == "desk":
        return base.replace(train_size=2000, test_size=200, B=50, J=500)
    if name == "dry-run":
        return base.replace(train_size=200, test_size=20, B=2, J=50, epochs=1, K=20)
    raise ConfigError(f"unknown profile {name!r}; expected table, desk or dry-run")


# --------------------------------------------------------------------------
# experiment driver


@dataclass
class ExperimentOutput:
    metrics: MetricsReport
    result: BootstrapResult
    target: SyntheticTarget
    f0_test: np.ndarray
    files: dict[str, Path] = field(default_factory=dict)


def summary_items(config: ExperimentConfig, target: SyntheticTarget,
                  metrics: MetricsReport, result: BootstrapResult) -> list[tuple[str, str]]:
    items = [(k, fmt(v) if isinstance(v, float) else str(v)) for k, v in metrics.as_dict().items()]
    items += [("B_effective", str(result.B)), ("replicate_failures", str(len(result.failures))),
              ("n_train", str(config.n_train)), ("alpha", fmt(config.alpha))]
    items += list(target.describe().items())
    return items


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None,
                   threads: int = 1, fit: FitFn | None = None) -> ExperimentOutput:
    """Generate train/test data, run the bootstrap at every test covariate, score it.

    With ``out_dir`` set, writes ``summary.txt``, ``points.csv``,
    ``replicates.csv`` and ``config.snapshot``.
    """
    target = make_target(config.target, config.seed)
    schedule = config.schedule()
    train = generate_dataset(target, config.n_train, make_rng(config.seed, "train-data"))
    X_test = target.sample_covariates(config.test_size, make_rng(config.seed, "test-data"))
    f0_test = target.f0(X_test)
    if fit is None and config.score == "oracle":
        from .diagnostics import oracle_shift_fit
        fit = oracle_shift_fit(target, schedule, config.clip_bound)
    log.info("experiment %s: n_train=%d n_test=%d B=%d", config.target, train.n,
             config.test_size, config.B)
    result = run_bootstrap(train, config.train_config(), config.boot_config(), schedule, X_test,
                           hidden=config.hidden, fit=fit, threads=threads,
                           clip_bound=config.clip_bound)
    metrics = compute_metrics(result, f0_test)
    out = ExperimentOutput(metrics, result, target, f0_test)
    if out_dir is not None:
        out.files = write_experiment(out_dir, config, out)
    return out


def write_experiment(out_dir: str | Path, config: ExperimentConfig, out: ExperimentOutput) -> dict[str, Path]:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    files = {name: d / name for name in ("summary.txt", "points.csv", "replicates.csv", "config.snapshot")}
    files["summary.txt"].write_text(
        "".join(f"{k}={v}\n" for k, v in summary_items(config, out.target, out.metrics, out.result)))
    write_points_csv(files["points.csv"], out.result, out.f0_test)
    write_replicates_csv(files["replicates.csv"], out.result)
    files["config.snapshot"].write_text(config.to_text())
    return files


def read_summary(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k] = v
    return out
