"""Command-line entry point: ``deepboot <command> [options]``.

Commands: generate, train, sample, bootstrap, benchmark, diagnose, rerun.
Every run writes ``manifest.json`` next to its outputs; ``deepboot rerun
MANIFEST --out DIR`` replays it. Numerical outputs never depend on
``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import (ExperimentConfig, generate_dataset, load_config, make_target,
                        parse_config_text, profile, run_experiment, write_experiment)
from .bootstrap import run_bootstrap, write_points_csv, write_replicates_csv
from .data import fmt, read_dataset, write_dataset
from .diagnostics import (AnalyticGaussianScore, TrendConfig, convergence_trend, coverage_trend,
                          probe_points, sampler_oracle_report, write_cp_trend, write_w1_trend)
from .diffusion import NetScoreField, ei_sample_points, train_score
from .errors import DeepBootError
from .mlp import load_checkpoint, save_checkpoint
from .seeding import derive_seed

log = logging.getLogger("deepboot")


def build_id() -> str:
    return f"deepboot-{__version__} python-{platform.python_version()} numpy-{np.__version__}"


# --------------------------------------------------------------------------
# helpers


def resolve_config(args) -> ExperimentConfig:
    base = profile(args.profile, args.target or "D5-I") if getattr(args, "profile", None) else None
    if base is None and getattr(args, "target", None):
        base = ExperimentConfig(target=args.target)
    cfg = load_config(args.config, base) if args.config else (base or ExperimentConfig())
    if args.set:
        cfg = parse_config_text("\n".join(args.set), cfg)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def out_path(args, default_name: str) -> tuple[Path, Path]:
    """``--out`` may name a file (has a suffix) or a directory."""
    out = Path(args.out or ".")
    if out.suffix:
        out.parent.mkdir(parents=True, exist_ok=True)
        return out.parent, out
    out.mkdir(parents=True, exist_ok=True)
    return out, out / default_name


def parse_vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.replace(",", " ").split()], dtype=np.float64)


def read_covariates(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = [i for i, h in enumerate(rows[0]) if h.startswith("x")]
    return np.array([[float(r[i]) for i in cols] for r in rows[1:]], dtype=np.float64)


def write_manifest(out_dir: Path, argv: list[str], command: str, start: float,
                   config: ExperimentConfig | None, seeds: dict[str, int], status: str) -> None:
    manifest = {
        "command": command,
        "argv": argv,
        "build": build_id(),
        "master_seed": config.seed if config else None,
        "config": dict(config.to_items()) if config else None,
        "stage_seeds": {k: str(v) for k, v in seeds.items()},
        "started": start,
        "finished": time.time(),
        "status": status,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


# --------------------------------------------------------------------------
# commands; each returns (out_dir, config, stage seeds)


def cmd_generate(args):
    target = make_target(args.target, args.seed or 0)
    seed = args.seed or 0
    out_dir, path = out_path(args, "dataset.csv")
    write_dataset(path, generate_dataset(target, args.n, seed))
    return out_dir, None, {"dataset": seed}


def cmd_train(args):
    cfg = resolve_config(args)
    data = read_dataset(args.data)
    out_dir, ckpt = out_path(args, "checkpoint.net")
    (out_dir / "config.snapshot").write_text(cfg.to_text())
    seed = derive_seed(cfg.seed, "cli-train")
    res = train_score(data, dataclasses.replace(cfg.train_config(), seed=seed), cfg.schedule(), cfg.hidden)
    save_checkpoint(ckpt, res.net, {"standardization": res.standardization.to_dict(),
                                    "diffusion": {"T": cfg.T, "K": cfg.K, "grid": cfg.grid}})
    with open(out_dir / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, v in enumerate(res.loss_trace, 1):
            w.writerow([e, fmt(v)])
    return out_dir, cfg, {"train": seed}


def cmd_sample(args):
    cfg = resolve_config(args)
    x = parse_vector(args.x)
    if args.oracle_target:
        target = make_target(args.oracle_target, cfg.seed)
        score = AnalyticGaussianScore(target.f0)
    elif args.checkpoint:
        from .diffusion import StandardizationState
        net, extra = load_checkpoint(args.checkpoint)
        score = NetScoreField(net, StandardizationState.from_dict(extra["standardization"]))
    else:
        raise DeepBootError("sample needs --checkpoint or --oracle-target")
    seed = derive_seed(cfg.seed, "cli-sample")
    S = ei_sample_points(score, x[None, :], args.count, cfg.schedule(), seed, cfg.clip_bound)[0]
    out_dir, path = out_path(args, "samples.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] if S.shape[1] == 1 else [f"y{k + 1}" for k in range(S.shape[1])])
        for row in S:
            w.writerow([fmt(v) for v in row])
    return out_dir, cfg, {"sample": seed}


def cmd_bootstrap(args):
    cfg = resolve_config(args)
    data = read_dataset(args.data)
    X_eval = read_covariates(args.eval) if args.eval else data.X
    out_dir, _ = out_path(args, "points.csv")
    (out_dir / "config.snapshot").write_text(cfg.to_text())
    res = run_bootstrap(data, cfg.train_config(), cfg.boot_config(), cfg.schedule(), X_eval,
                        hidden=cfg.hidden, threads=args.threads, clip_bound=cfg.clip_bound)
    write_points_csv(out_dir / "points.csv", res)
    write_replicates_csv(out_dir / "replicates.csv", res)
    lengths = res.ci_hi - res.ci_lo
    (out_dir / "summary.txt").write_text(
        f"n_eval={res.f_hat.size}\nB_effective={res.B}\nreplicate_failures={len(res.failures)}\n"
        f"interval_length={fmt(lengths.mean())}\nmedian_length={fmt(np.median(lengths))}\n")
    return out_dir, cfg, {"base-train": derive_seed(cfg.seed, "base-train"),
                          "base-fhat": derive_seed(cfg.seed, "base-fhat")}


def cmd_benchmark(args):
    cfg = resolve_config(args)
    out_dir, _ = out_path(args, "summary.txt")
    (out_dir / "config.snapshot").write_text(cfg.to_text())
    out = run_experiment(cfg, threads=args.threads)
    write_experiment(out_dir, cfg, out)
    m = out.metrics
    print(f"{cfg.target}: CP={m.cp:.4f} MSE_org={m.mse_org:.4g} MSE_b={m.mse_b:.4g} "
          f"length={m.interval_length:.4g}")
    return out_dir, cfg, {"base-train": derive_seed(cfg.seed, "base-train")}


def cmd_diagnose(args):
    cfg = resolve_config(args)
    out_dir, _ = out_path(args, "report.csv")
    target = make_target(cfg.target, cfg.seed)
    if args.kind == "oracle":
        rep = sampler_oracle_report(target, cfg.schedule(), probe_points(target, args.probes),
                                    args.samples, cfg.seed)
        with open(out_dir / "oracle.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            rows = rep.rows()
            w.writerow(list(rows[0]))
            for r in rows:
                w.writerow([fmt(v) if isinstance(v, float) else v for v in r.values()])
    elif args.kind == "convergence":
        tc = TrendConfig(hidden=cfg.hidden, epochs=cfg.epochs, batch_size=cfg.batch_size,
                         lr=cfg.lr, lr_schedule=cfg.lr_schedule, T=cfg.T, K=cfg.K,
                         probe_count=args.probes, sample_count=args.samples)
        rows = convergence_trend(target, args.n_grid, list(range(args.seeds)), tc)
        write_w1_trend(out_dir / "convergence.csv", rows)
    else:
        rows = coverage_trend(cfg.target, args.n_grid, cfg.alpha,
                              [cfg.seed + s for s in range(args.seeds)], cfg, threads=args.threads)
        write_cp_trend(out_dir / "coverage.csv", rows, cfg.alpha)
    return out_dir, cfg, {}


def cmd_rerun(args):
    manifest = json.loads(Path(args.manifest).read_text())
    argv = list(manifest["argv"])
    if "--out" in argv:
        i = argv.index("--out")
        del argv[i:i + 2]
    argv += ["--out", args.out or "."]
    if args.threads != 1:
        argv += ["--threads", str(args.threads)]
    return main(argv)


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--seed", type=int, help="master seed (overrides experiment.seed)")
    common.add_argument("--out", help="output directory (or file for single-file outputs)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; never changes numbers")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="deepboot", description="Deep bootstrap via conditional diffusion models")
    p.add_argument("--version", action="version", version=build_id())
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic benchmark dataset")
    g.add_argument("--target", required=True)
    g.add_argument("--n", type=int, required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="fit a score network to a dataset CSV")
    t.add_argument("--data", required=True)
    t.add_argument("--target", help=argparse.SUPPRESS)
    t.add_argument("--lr", type=float, help="shorthand for --set train.lr=...")
    t.add_argument("--epochs", type=int, help="shorthand for --set train.epochs=...")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", parents=[common], help="draw responses at one covariate vector")
    s.add_argument("--checkpoint")
    s.add_argument("--oracle-target", help="sample with the exact score of this benchmark target")
    s.add_argument("--x", required=True, help="comma-separated covariates")
    s.add_argument("--count", type=int, required=True)
    s.set_defaults(func=cmd_sample, target=None)

    b = sub.add_parser("bootstrap", parents=[common], help="bootstrap intervals for a dataset CSV")
    b.add_argument("--data", required=True)
    b.add_argument("--eval", help="CSV of evaluation covariates (default: training covariates)")
    b.set_defaults(func=cmd_bootstrap, target=None)

    bm = sub.add_parser("benchmark", parents=[common], help="synthetic coverage experiment")
    bm.add_argument("--profile", choices=["table", "desk", "dry-run"])
    bm.add_argument("--target", help="D5-I, D5-II, D10-I, D10-II or D10-III")
    bm.set_defaults(func=cmd_benchmark)

    d = sub.add_parser("diagnose", parents=[common], help="sampler oracle and trend probes")
    d.add_argument("kind", choices=["oracle", "convergence", "coverage"])
    d.add_argument("--target")
    d.add_argument("--profile", choices=["table", "desk", "dry-run"])
    d.add_argument("--n-grid", type=lambda s: [int(v) for v in s.split(",")], default=[250, 1000, 4000])
    d.add_argument("--seeds", type=int, default=5)
    d.add_argument("--probes", type=int, default=5)
    d.add_argument("--samples", type=int, default=10000)
    d.set_defaults(func=cmd_diagnose)

    r = sub.add_parser("rerun", parents=[common], help="replay a run from its manifest.json")
    r.add_argument("manifest")
    r.set_defaults(func=cmd_rerun)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train":
        extra = [f"train.lr={args.lr}"] * (args.lr is not None) + [f"train.epochs={args.epochs}"] * (args.epochs is not None)
        args.set = (args.set or []) + extra
    if args.command == "rerun":
        return cmd_rerun(args)
    start = time.time()
    out_dir = Path(args.out or ".")
    if out_dir.suffix:
        out_dir = out_dir.parent
    try:
        out_dir, cfg, seeds = args.func(args)
    except DeepBootError as exc:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
        write_manifest(out_dir, argv, args.command, start, None, {}, "failed")
        print(f"deepboot {args.command}: {exc}", file=sys.stderr)
        return 1
    write_manifest(out_dir, argv, args.command, start, cfg, seeds, "ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
