"""Command-line entry point.

Subcommands: train, sweep-beta, sweep-interval, accountant, spectral-fit,
probe-sensitivity. Exit codes: 0 success, 1 validation error, 2 runtime
failure. SMADP_OUTDIR overrides the default output directory when neither the
config file nor an override sets out_dir.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

import numpy as np

from .data import Dataset, poisson_sample
from .errors import ConfigError, ParameterError
from .memory import ReleaseHistory, ReleaseRecord
from .model import init_model
from .numerics import RandomStream
from .optimizer import OptimizerConfig, adjacency_probe
from .runner import (
    RunConfig,
    format_value,
    run_accountant,
    run_sweep_beta,
    run_sweep_interval,
    run_train,
    write_csv,
)
from .spectral import (
    SpectralInterval,
    build_report,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    """argparse that exits with code 1 on usage/validation problems."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _build_parser() -> _Parser:
    parser = _Parser(prog="smadp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_args(p):
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="config overrides; they win over the file")

    p_train = sub.add_parser("train", help="run one private training run")
    add_run_args(p_train)

    p_beta = sub.add_parser("sweep-beta", help="sweep the mixing coefficient")
    add_run_args(p_beta)
    p_beta.add_argument("--betas", required=True,
                        help="comma-separated beta values, e.g. 1.0,0.9,0.7,0.5")

    p_interval = sub.add_parser("sweep-interval", help="sweep the spectral interval")
    add_run_args(p_interval)
    p_interval.add_argument(
        "--intervals", required=True,
        help="semicolon-separated lo,hi pairs, e.g. '1,3;2,6;5,7'",
    )

    p_acc = sub.add_parser("accountant", help="privacy accounting curves")
    p_acc.add_argument("--q", type=float, required=True)
    p_acc.add_argument("--sigma", type=float, default=None, help="shared noise multiplier")
    p_acc.add_argument("--sigmas", default=None, help="comma-separated per-group multipliers")
    p_acc.add_argument("--beta", type=float, required=True)
    p_acc.add_argument("--groups", type=int, default=1)
    p_acc.add_argument("--steps", type=int, required=True)
    p_acc.add_argument("--delta", type=float, default=1e-5)
    p_acc.add_argument("--max-order", type=int, default=64)
    p_acc.add_argument("--out", default=None, help="output directory")
    p_acc.add_argument("--no-figures", action="store_true")

    p_fit = sub.add_parser("spectral-fit", help="tail-exponent fit of a matrix file")
    p_fit.add_argument("matrix", help="whitespace-delimited weight matrix file")
    p_fit.add_argument("--rho-min", type=float, default=2.0)
    p_fit.add_argument("--rho-max", type=float, default=6.0)
    p_fit.add_argument("--c-lambda", type=float, default=1.0)
    p_fit.add_argument("--min-tail", type=int, default=8)

    p_probe = sub.add_parser("probe-sensitivity",
                             help="brute-force adjacency sensitivity probe")
    p_probe.add_argument("--instances", type=int, default=100)
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.add_argument("--out", default=None, help="output directory")
    return parser


def _out_dir(flag_value) -> Path:
    if flag_value:
        return Path(flag_value)
    return Path(os.environ.get("SMADP_OUTDIR", "runs"))


def _load_run_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"out_dir={args.out}")
    return RunConfig.from_sources(config_path=args.config, overrides=overrides)


def _cmd_train(args) -> int:
    report = run_train(_load_run_config(args))
    print(f"run '{report.label}' ({report.mode}) finished: "
          f"accuracy={report.summary['final_accuracy']:.4f} "
          f"epsilon_joint={report.summary['final_epsilon_joint']:.4f} "
          f"-> {report.run_dir}")
    return EXIT_OK


def _cmd_sweep_beta(args) -> int:
    try:
        betas = [float(b) for b in args.betas.split(",") if b.strip()]
    except ValueError as exc:
        print(f"error: bad --betas value: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if any(not 0.0 < b <= 1.0 for b in betas):
        print("error: every beta must lie in (0, 1]", file=sys.stderr)
        return EXIT_VALIDATION
    config = _load_run_config(args)
    reports = run_sweep_beta(config, betas)
    print(f"sweep over {len(betas)} beta value(s) wrote "
          f"{Path(config.out_dir) / config.label}")
    return EXIT_OK if len(reports) == len(betas) else EXIT_RUNTIME


def _cmd_sweep_interval(args) -> int:
    intervals = []
    try:
        for chunk in args.intervals.split(";"):
            if not chunk.strip():
                continue
            lo, hi = (float(v) for v in chunk.split(","))
            SpectralInterval(lo, hi)
            intervals.append((lo, hi))
    except (ValueError, ParameterError) as exc:
        print(f"error: bad --intervals value: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    config = _load_run_config(args)
    rows = run_sweep_interval(config, intervals)
    failed = [row for row in rows if row["status"] != "ok"]
    print(f"interval sweep wrote {Path(config.out_dir) / config.label} "
          f"({len(rows) - len(failed)}/{len(rows)} arms ok)")
    return EXIT_OK if not failed else EXIT_RUNTIME


def _cmd_accountant(args) -> int:
    problems = []
    if not 0.0 <= args.q <= 1.0:
        problems.append(f"--q must lie in [0, 1], got {args.q}")
    if not 0.0 < args.beta <= 1.0:
        problems.append(f"--beta must lie in (0, 1], got {args.beta}")
    if args.steps < 1:
        problems.append(f"--steps must be >= 1, got {args.steps}")
    if not 0.0 < args.delta < 1.0:
        problems.append(f"--delta must lie in (0, 1), got {args.delta}")
    if args.sigmas is not None:
        try:
            sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
        except ValueError:
            problems.append(f"--sigmas must be comma-separated floats, got {args.sigmas!r}")
            sigmas = []
    elif args.sigma is not None:
        if args.groups < 1:
            problems.append(f"--groups must be >= 1, got {args.groups}")
        sigmas = [args.sigma] * max(args.groups, 1)
    else:
        problems.append("one of --sigma or --sigmas is required")
        sigmas = []
    if sigmas and any(s <= 0 for s in sigmas):
        problems.append("noise multipliers must be > 0")
    if problems:
        for problem in problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_VALIDATION

    out_dir = _out_dir(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "accountant.csv"
    rows = run_accountant(args.q, sigmas, args.beta, args.steps, args.delta,
                          max_order=args.max_order, out_path=out_path)
    if not args.no_figures:
        from . import figures

        figures.render_accountant_figure(out_dir, rows)
    last = rows[-1]
    print(f"after {args.steps} steps: epsilon_joint={last['epsilon_joint']:.6g} "
          f"epsilon_marginal={last['epsilon_marginal']:.6g} [{last['tag']}] -> {out_path}")
    return EXIT_OK


def _cmd_spectral_fit(args) -> int:
    try:
        matrix = np.loadtxt(args.matrix, ndmin=2)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: cannot parse matrix file: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        interval = SpectralInterval(args.rho_min, args.rho_max)
        report = build_report(matrix, interval, args.c_lambda, args.min_tail,
                              group_id=0, step=0)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["rho", "deviation", "tempering", "tail_size", "valid"])
    writer.writerow([
        format_value(report.exponent),
        format_value(report.deviation),
        format_value(report.tempering),
        report.tail_size,
        format_value(report.valid),
    ])
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _random_probe_instance(rng: np.random.Generator, seed: int):
    """One randomized tiny instance: model, data, fixed mask, random histories."""
    arch = "mlp1" if rng.random() < 0.5 else "logreg"
    n = int(rng.integers(2, 13))
    dim = int(rng.integers(2, 6))
    classes = int(rng.integers(2, 4))
    hidden = int(rng.integers(2, 6))
    beta = float(rng.choice([0.3, 0.7, 1.0]))
    window = int(rng.integers(1, 6))
    t = int(rng.integers(0, 7))
    stream = RandomStream(seed)
    model = init_model(stream, arch, dim, hidden, classes,
                       clip_norms=float(rng.uniform(0.3, 2.0)),
                       noise_multipliers=1.0)
    features = rng.normal(size=(n, dim)) * 3.0
    labels = rng.integers(0, classes, size=n)
    data = Dataset(features, labels, num_classes=classes, name="probe")
    config = OptimizerConfig(beta=beta, alpha=float(rng.uniform(0.2, 1.0)),
                             window=window, q=0.5, steps=1, seed=seed,
                             min_tail=4)
    histories = {}
    for group in model.groups:
        history = ReleaseHistory(group.group_id, capacity=window - 1, ema_coef=0.9)
        lags = min(window - 1, t)
        for step_idx in range(t - lags, t):
            query = rng.normal(size=group.size)
            noise = rng.normal(size=group.size)
            history.append(ReleaseRecord(step=step_idx, group_id=group.group_id,
                                         query=query, noise=noise,
                                         release=query + noise))
        histories[group.group_id] = history
    batch = poisson_sample(stream.at(step_index=t, group_index=0), n, 0.5)
    return data, batch, model, config, histories, t


def _cmd_probe(args) -> int:
    if args.instances < 1:
        print("error: --instances must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    rng = np.random.default_rng(args.seed)
    rows = []
    violations = 0
    for instance in range(args.instances):
        data, batch, model, config, histories, t = _random_probe_instance(
            rng, seed=args.seed + instance
        )
        for result in adjacency_probe(data, batch, model, config, histories, t):
            rows.append({
                "instance": instance,
                "step": t,
                "beta": config.beta,
                "removed_index": result.removed_index,
                "group_id": result.group_id,
                "delta": result.delta,
                "bound": result.bound,
                "satisfied": result.satisfied,
            })
            violations += 0 if result.satisfied else 1
    out_dir = _out_dir(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "probe.csv"
    write_csv(out_path, ["instance", "step", "beta", "removed_index", "group_id",
                         "delta", "bound", "satisfied"], rows)
    print(f"{len(rows)} probes over {args.instances} instances, "
          f"{violations} violation(s) -> {out_path}")
    return EXIT_OK if violations == 0 else EXIT_RUNTIME


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "sweep-beta": _cmd_sweep_beta,
        "sweep-interval": _cmd_sweep_interval,
        "accountant": _cmd_accountant,
        "spectral-fit": _cmd_spectral_fit,
        "probe-sensitivity": _cmd_probe,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failure: partial outputs already flushed
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
