"""Run orchestration: flat key=value configs, training runs, sweeps, and the
CSV files they emit.

Each run writes one file per concern into <out_dir>/<label>/:
  trace.csv        per-group mechanism transcript (norms only)
  diagnostics.csv  per-group memory diagnostics
  ledger.csv       per-step privacy accounting (joint + tagged marginal)
  report.csv       per-step training report
  summary.csv      one-row run summary
plus rendered PNG figures unless figures=false.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .accountant import (
    MARGINAL_TAG,
    PrivacyLedger,
    RdpOrderGrid,
    sigma_eff_joint,
)
from .data import Dataset, gen_synthetic, load_idx, poisson_sample
from .dpsgd import dpsgd_step
from .errors import ConfigError
from .memory import ReleaseHistory
from .model import ModelState, evaluate, init_model
from .numerics import RandomStream
from .optimizer import OptimizerConfig, step
from .spectral import SpectralInterval

TRACE_HEADER = [
    "mode", "step", "group_id", "batch_size",
    "sum_norm", "query_norm", "release_norm", "update_norm",
]
DIAGNOSTICS_HEADER = [
    "step", "group_id", "d_eff", "gate", "scale", "warmup",
    "branch_norm", "memory_ratio",
]
LEDGER_HEADER = [
    "step", "q", "sigma_eff", "epsilon_joint", "best_order_joint",
    "epsilon_marginal", "best_order_marginal", "delta", "tag",
]
SUMMARY_HEADER = [
    "label", "mode", "mean_d_eff", "mean_memory_ratio", "final_accuracy",
    "final_epsilon_joint", "final_epsilon_marginal", "mask_hash",
]

_SCHEMA = {
    "mode": (str, "sma"),
    "dataset": (str, "synthetic"),
    "n": (int, 2000),
    "dim": (int, 2),
    "classes": (int, 2),
    "arch": (str, "logreg"),
    "hidden": (int, 16),
    "images_path": (str, ""),
    "labels_path": (str, ""),
    "limit": (int, 0),
    "clip_norms": ("floats", [1.0]),
    "noise_multipliers": ("floats", [1.0]),
    "beta": (float, 0.7),
    "alpha": (float, 0.7),
    "window": (int, 4),
    "learning_rate": (float, 0.5),
    "q": (float, 0.1),
    "steps": (int, 300),
    "seed": (int, 0),
    "rho_min": (float, 2.0),
    "rho_max": (float, 6.0),
    "c_lambda": (float, 1.0),
    "ema_coef": (float, 0.9),
    "warmup_tau": (float, 5.0),
    "scale_cap": (float, 3.0),
    "eps": (float, 1e-12),
    "min_tail": (int, 8),
    "delta": (float, 1e-5),
    "max_order": (int, 64),
    "out_dir": (str, "runs"),
    "label": (str, "run"),
    "figures": (bool, True),
    "eval_every": (int, 1),
}


def _coerce(key: str, raw: str):
    kind = _SCHEMA[key][0]
    if kind is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: cannot parse boolean from {raw!r}")
    if kind == "floats":
        return [float(part) for part in raw.split(",") if part.strip() != ""]
    return kind(raw)


def parse_config_file(path) -> dict:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    entries = {}
    problems = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            problems.append(f"{path}:{lineno}: expected key=value, got {text!r}")
            continue
        key, _, raw = text.partition("=")
        key = key.strip()
        if key not in _SCHEMA:
            problems.append(f"{path}:{lineno}: unknown key {key!r}")
            continue
        try:
            entries[key] = _coerce(key, raw.strip())
        except ValueError as exc:
            problems.append(f"{path}:{lineno}: {exc}")
    if problems:
        raise ConfigError(problems)
    return entries


def parse_overrides(tokens) -> dict:
    """key=value command-line tokens; they win over the config file."""
    entries = {}
    problems = []
    for token in tokens:
        if "=" not in token:
            problems.append(f"override {token!r} is not key=value")
            continue
        key, _, raw = token.partition("=")
        key = key.strip()
        if key not in _SCHEMA:
            problems.append(f"unknown override key {key!r}")
            continue
        try:
            entries[key] = _coerce(key, raw.strip())
        except ValueError as exc:
            problems.append(str(exc))
    if problems:
        raise ConfigError(problems)
    return entries


@dataclass
class RunConfig:
    """Everything a run needs; see _SCHEMA for keys and defaults."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {key: default for key, (_, default) in _SCHEMA.items()}
        merged.update(self.values)
        self.values = merged

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError as exc:
            raise AttributeError(key) from exc

    @classmethod
    def from_sources(cls, config_path=None, overrides=(), env=None) -> "RunConfig":
        values = {}
        if config_path is not None:
            values.update(parse_config_file(config_path))
        values.update(parse_overrides(overrides))
        env = os.environ if env is None else env
        if "out_dir" not in values and env.get("SMADP_OUTDIR"):
            values["out_dir"] = env["SMADP_OUTDIR"]
        config = cls(values)
        config.validate()
        return config

    def group_count(self) -> int:
        return 1 if self.arch == "logreg" else 2

    def validate(self) -> None:
        """Collect every problem before any compute."""
        v = self.values
        problems = []
        if v["mode"] not in ("sma", "dpsgd"):
            problems.append(f"mode must be 'sma' or 'dpsgd', got {v['mode']!r}")
        if v["dataset"] not in ("synthetic", "idx"):
            problems.append(f"dataset must be 'synthetic' or 'idx', got {v['dataset']!r}")
        if v["arch"] not in ("logreg", "mlp1"):
            problems.append(f"arch must be 'logreg' or 'mlp1', got {v['arch']!r}")
        for key in ("n", "dim", "classes", "steps", "window", "min_tail", "eval_every"):
            if v[key] < 1:
                problems.append(f"{key} must be >= 1, got {v[key]}")
        if v["classes"] < 2:
            problems.append(f"classes must be >= 2, got {v['classes']}")
        if v["arch"] == "mlp1" and v["hidden"] < 1:
            problems.append(f"hidden must be >= 1 for mlp1, got {v['hidden']}")
        if not 0.0 < v["beta"] <= 1.0:
            problems.append(f"beta must lie in (0, 1], got {v['beta']}")
        if not 0.0 < v["alpha"] <= 1.0:
            problems.append(f"alpha must lie in (0, 1], got {v['alpha']}")
        if not 0.0 < v["q"] <= 1.0:
            problems.append(f"q must lie in (0, 1], got {v['q']}")
        for key in ("learning_rate", "c_lambda", "warmup_tau", "scale_cap", "eps"):
            if v[key] <= 0.0:
                problems.append(f"{key} must be > 0, got {v[key]}")
        if not 0.0 < v["ema_coef"] <= 1.0:
            problems.append(f"ema_coef must lie in (0, 1], got {v['ema_coef']}")
        if not 0.0 < v["delta"] < 1.0:
            problems.append(f"delta must lie in (0, 1), got {v['delta']}")
        if v["max_order"] < 2:
            problems.append(f"max_order must be >= 2, got {v['max_order']}")
        if not v["rho_min"] < v["rho_max"]:
            problems.append(
                f"need rho_min < rho_max, got [{v['rho_min']}, {v['rho_max']}]"
            )
        groups = 1 if v["arch"] == "logreg" else 2
        for key in ("clip_norms", "noise_multipliers"):
            vals = v[key]
            if len(vals) not in (1, groups):
                problems.append(f"{key} needs 1 or {groups} values, got {len(vals)}")
            if any(x <= 0.0 for x in vals):
                problems.append(f"{key} entries must be > 0")
        if v["dataset"] == "idx":
            for key in ("images_path", "labels_path"):
                if not v[key]:
                    problems.append(f"{key} is required for dataset=idx")
                elif not Path(v[key]).exists():
                    problems.append(f"{key}: no such file {v[key]!r}")
        if problems:
            raise ConfigError(problems)

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            beta=self.beta,
            alpha=self.alpha,
            window=self.window,
            learning_rate=self.learning_rate,
            q=self.q,
            steps=self.steps,
            seed=self.seed,
            interval=SpectralInterval(self.rho_min, self.rho_max),
            c_lambda=self.c_lambda,
            ema_coef=self.ema_coef,
            warmup_tau=self.warmup_tau,
            scale_cap=self.scale_cap,
            eps=self.eps,
            min_tail=self.min_tail,
        )

    def with_values(self, **updates) -> "RunConfig":
        values = dict(self.values)
        values.update(updates)
        config = RunConfig(values)
        config.validate()
        return config


def format_value(value) -> str:
    """CSV cell formatting: floats at 9 significant digits."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".9g")
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(row[key]) for key in header])


def read_csv(path) -> tuple[list[str], list[dict]]:
    """Round-trip reader for every CSV this package writes."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [dict(zip(header, row)) for row in reader]
    return header, rows


class _StreamingCsv:
    """Row-at-a-time CSV writer so a failed run still leaves a partial file."""

    def __init__(self, path, header):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(header)
        self._header = header

    def row(self, values: dict) -> None:
        self._writer.writerow([format_value(values[key]) for key in self._header])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def load_dataset(config: RunConfig) -> Dataset:
    if config.dataset == "synthetic":
        return gen_synthetic(
            RandomStream(config.seed), config.n, config.dim, config.classes
        )
    limit = config.limit if config.limit > 0 else None
    return load_idx(config.images_path, config.labels_path, limit=limit)


def build_model(config: RunConfig, input_dim: int, num_classes: int) -> ModelState:
    return init_model(
        RandomStream(config.seed),
        config.arch,
        input_dim,
        config.hidden,
        num_classes,
        config.clip_norms if len(config.clip_norms) > 1 else config.clip_norms[0],
        config.noise_multipliers
        if len(config.noise_multipliers) > 1
        else config.noise_multipliers[0],
    )


@dataclass
class RunReport:
    label: str
    mode: str
    rows: list[dict]
    summary: dict
    run_dir: Path


def _report_header(group_ids) -> list[str]:
    header = ["step", "epoch_equiv", "train_loss", "eval_accuracy"]
    for gid in group_ids:
        header += [f"d_eff_g{gid}", f"memory_ratio_g{gid}", f"rho_g{gid}", f"lambda_g{gid}"]
    header += ["epsilon_joint", "epsilon_marginal"]
    return header


def run_train(config: RunConfig, run_dir: Path | None = None) -> RunReport:
    """Execute one training run and write its CSV files and figures.

    A failure mid-run flushes the partial CSVs, records the failing step in
    failure.txt, and re-raises.
    """
    config.validate()
    data = load_dataset(config)
    model = build_model(config, data.dim, data.num_classes)
    opt = config.optimizer_config()
    group_ids = [g.group_id for g in model.groups]
    sigmas = [g.noise_multiplier for g in model.groups]

    run_dir = Path(run_dir) if run_dir is not None else Path(config.out_dir) / config.label
    run_dir.mkdir(parents=True, exist_ok=True)

    beta_acc = 1.0 if config.mode == "dpsgd" else config.beta
    grid = RdpOrderGrid.default(config.max_order)
    joint = PrivacyLedger(grid, mode="joint")
    marginal = PrivacyLedger(grid, mode="marginal")
    sigma_joint = sigma_eff_joint(beta_acc, sigmas)
    sigma_marginal = min(sigmas) / beta_acc

    histories = {
        gid: ReleaseHistory(gid, capacity=config.window - 1, ema_coef=config.ema_coef)
        for gid in group_ids
    }
    base_stream = RandomStream(config.seed)
    mask_hash = hashlib.sha256()

    header = _report_header(group_ids)
    trace_csv = _StreamingCsv(run_dir / "trace.csv", TRACE_HEADER)
    ledger_csv = _StreamingCsv(run_dir / "ledger.csv", LEDGER_HEADER)
    report_csv = _StreamingCsv(run_dir / "report.csv", header)
    diag_csv = (
        _StreamingCsv(run_dir / "diagnostics.csv", DIAGNOSTICS_HEADER)
        if config.mode == "sma"
        else None
    )

    rows = []
    eval_result = evaluate(model, data)
    try:
        for t in range(config.steps):
            row = {"step": t, "epoch_equiv": t * config.q}
            if config.mode == "sma":
                trace = step(model, data, opt, histories, base_stream, t)
                mask_hash.update(_mask_bytes(data, base_stream, t, config.q))
                for gt in trace.groups:
                    trace_csv.row({
                        "mode": "sma",
                        "step": t,
                        "group_id": gt.group_id,
                        "batch_size": trace.batch_size,
                        "sum_norm": float(np.linalg.norm(gt.clipped_sum)),
                        "query_norm": float(np.linalg.norm(gt.query)),
                        "release_norm": float(np.linalg.norm(gt.release)),
                        "update_norm": gt.update_norm,
                    })
                    diag_csv.row({
                        "step": t,
                        "group_id": gt.group_id,
                        "d_eff": gt.memory.depth,
                        "gate": gt.memory.gate,
                        "scale": gt.memory.scale,
                        "warmup": gt.memory.warmup,
                        "branch_norm": float(np.linalg.norm(gt.memory.branch)),
                        "memory_ratio": gt.memory_ratio,
                    })
                    row[f"d_eff_g{gt.group_id}"] = gt.memory.depth
                    row[f"memory_ratio_g{gt.group_id}"] = gt.memory_ratio
                    row[f"rho_g{gt.group_id}"] = (
                        gt.report.exponent if gt.report is not None else float("nan")
                    )
                    row[f"lambda_g{gt.group_id}"] = (
                        gt.report.tempering if gt.report is not None else 0.0
                    )
            else:
                trace = dpsgd_step(
                    model, data, config.q, config.learning_rate, base_stream, t
                )
                mask_hash.update(_mask_bytes(data, base_stream, t, config.q))
                for gid in group_ids:
                    trace_csv.row({
                        "mode": "dpsgd",
                        "step": t,
                        "group_id": gid,
                        "batch_size": trace.batch_size,
                        "sum_norm": float(np.linalg.norm(trace.sums[gid])),
                        "query_norm": float(np.linalg.norm(trace.sums[gid])),
                        "release_norm": float(np.linalg.norm(trace.releases[gid])),
                        "update_norm": trace.update_norms[gid],
                    })
                    row[f"d_eff_g{gid}"] = 0.0
                    row[f"memory_ratio_g{gid}"] = 0.0
                    row[f"rho_g{gid}"] = float("nan")
                    row[f"lambda_g{gid}"] = 0.0

            joint.compose(t, config.q, sigma_joint)
            marginal.compose(t, config.q, sigma_marginal)
            eps_joint, order_joint = joint.epsilon(config.delta)
            eps_marginal, order_marginal = marginal.epsilon(config.delta)
            ledger_csv.row({
                "step": t,
                "q": config.q,
                "sigma_eff": sigma_joint,
                "epsilon_joint": eps_joint,
                "best_order_joint": order_joint,
                "epsilon_marginal": eps_marginal,
                "best_order_marginal": order_marginal,
                "delta": config.delta,
                "tag": MARGINAL_TAG,
            })

            if t % config.eval_every == 0 or t == config.steps - 1:
                eval_result = evaluate(model, data)
            row["train_loss"] = eval_result.loss
            row["eval_accuracy"] = eval_result.accuracy
            row["epsilon_joint"] = eps_joint
            row["epsilon_marginal"] = eps_marginal
            report_csv.row(row)
            rows.append(row)
    except Exception as exc:
        failed_at = len(rows)
        (run_dir / "failure.txt").write_text(
            f"run failed at step {failed_at}: {type(exc).__name__}: {exc}\n"
        )
        raise
    finally:
        trace_csv.close()
        ledger_csv.close()
        report_csv.close()
        if diag_csv is not None:
            diag_csv.close()

    depth_cols = [row[f"d_eff_g{gid}"] for row in rows for gid in group_ids]
    ratio_cols = [row[f"memory_ratio_g{gid}"] for row in rows for gid in group_ids]
    summary = {
        "label": config.label,
        "mode": config.mode,
        "mean_d_eff": float(np.mean(depth_cols)),
        "mean_memory_ratio": float(np.mean(ratio_cols)),
        "final_accuracy": rows[-1]["eval_accuracy"],
        "final_epsilon_joint": rows[-1]["epsilon_joint"],
        "final_epsilon_marginal": rows[-1]["epsilon_marginal"],
        "mask_hash": mask_hash.hexdigest(),
    }
    write_csv(run_dir / "summary.csv", SUMMARY_HEADER, [summary])

    if config.figures:
        from . import figures

        figures.render_train_figures(run_dir, rows, config.label, group_ids)

    return RunReport(
        label=config.label, mode=config.mode, rows=rows, summary=summary, run_dir=run_dir
    )


def _mask_bytes(data: Dataset, stream: RandomStream, t: int, q: float) -> bytes:
    """Recreate the step's sampling mask for hashing; keyed streams make this
    exactly the mask the step used."""
    batch = poisson_sample(stream.at(step_index=t, group_index=0), len(data), q)
    return np.packbits(batch.mask).tobytes()


def run_sweep_beta(config: RunConfig, betas) -> list[RunReport]:
    """One run per beta with shared seed/batches; per-arm failures are isolated."""
    betas = list(betas)
    sweep_dir = Path(config.out_dir) / config.label
    sweep_dir.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    combined_rows = []
    reports = []
    if not betas:
        print("warning: empty beta list; nothing to sweep")
        write_csv(sweep_dir / "sweep_summary.csv",
                  ["beta", "status", "final_accuracy", "mask_hash"], [])
        return reports
    for beta in betas:
        arm_label = f"beta_{format_value(float(beta))}"
        status = "ok"
        try:
            arm = config.with_values(beta=float(beta), label=arm_label)
            report = run_train(arm, run_dir=sweep_dir / arm_label)
            reports.append(report)
            for row in report.rows:
                combined_rows.append({
                    "beta": float(beta),
                    "step": row["step"],
                    "epoch_equiv": row["epoch_equiv"],
                    "train_loss": row["train_loss"],
                    "eval_accuracy": row["eval_accuracy"],
                    "epsilon_joint": row["epsilon_joint"],
                    "epsilon_marginal": row["epsilon_marginal"],
                })
            summary_rows.append({
                "beta": float(beta),
                "status": status,
                "final_accuracy": report.summary["final_accuracy"],
                "mask_hash": report.summary["mask_hash"],
            })
        except Exception as exc:
            summary_rows.append({
                "beta": float(beta),
                "status": f"failed: {type(exc).__name__}: {exc}",
                "final_accuracy": float("nan"),
                "mask_hash": "",
            })
    write_csv(
        sweep_dir / "sweep_beta.csv",
        ["beta", "step", "epoch_equiv", "train_loss", "eval_accuracy",
         "epsilon_joint", "epsilon_marginal"],
        combined_rows,
    )
    write_csv(sweep_dir / "sweep_summary.csv",
              ["beta", "status", "final_accuracy", "mask_hash"], summary_rows)
    if config.figures and combined_rows:
        from . import figures

        figures.render_beta_sweep_figures(sweep_dir, combined_rows)
    return reports


def run_sweep_interval(config: RunConfig, intervals) -> list[dict]:
    """One run per spectral interval; emits a table of mean depth and ratio."""
    sweep_dir = Path(config.out_dir) / config.label
    sweep_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for interval in intervals:
        lo, hi = float(interval[0]), float(interval[1])
        arm_label = f"interval_{format_value(lo)}_{format_value(hi)}"
        try:
            arm = config.with_values(rho_min=lo, rho_max=hi, label=arm_label)
            report = run_train(arm, run_dir=sweep_dir / arm_label)
            rows.append({
                "rho_min": lo,
                "rho_max": hi,
                "mean_d_eff": report.summary["mean_d_eff"],
                "mean_memory_ratio": report.summary["mean_memory_ratio"],
                "final_accuracy": report.summary["final_accuracy"],
                "mask_hash": report.summary["mask_hash"],
                "status": "ok",
            })
        except Exception as exc:
            rows.append({
                "rho_min": lo,
                "rho_max": hi,
                "mean_d_eff": float("nan"),
                "mean_memory_ratio": float("nan"),
                "final_accuracy": float("nan"),
                "mask_hash": "",
                "status": f"failed: {type(exc).__name__}: {exc}",
            })
    write_csv(
        sweep_dir / "sweep_interval.csv",
        ["rho_min", "rho_max", "mean_d_eff", "mean_memory_ratio",
         "final_accuracy", "mask_hash", "status"],
        rows,
    )
    if config.figures and rows:
        from . import figures

        figures.render_interval_sweep_figure(sweep_dir, rows)
    return rows


def run_accountant(
    q: float,
    sigmas,
    beta: float,
    steps: int,
    delta: float,
    max_order: int = 64,
    out_path=None,
) -> list[dict]:
    """Joint and (tagged) marginal epsilon after each step, optionally as CSV."""
    grid = RdpOrderGrid.default(max_order)
    joint = PrivacyLedger(grid, mode="joint")
    marginal = PrivacyLedger(grid, mode="marginal")
    sigma_joint = sigma_eff_joint(beta, sigmas)
    sigma_marginal = min(float(s) for s in np.atleast_1d(sigmas)) / beta
    rows = []
    for t in range(steps):
        joint.compose(t, q, sigma_joint)
        marginal.compose(t, q, sigma_marginal)
        eps_joint, best_order = joint.epsilon(delta)
        eps_marginal, _ = marginal.epsilon(delta)
        rows.append({
            "step": t,
            "epsilon_joint": eps_joint,
            "epsilon_marginal": eps_marginal,
            "best_order": best_order,
            "tag": MARGINAL_TAG,
        })
    if out_path is not None:
        write_csv(out_path, ["step", "epsilon_joint", "epsilon_marginal", "best_order", "tag"], rows)
    return rows
