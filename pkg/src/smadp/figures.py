"""Figure rendering for run reports: PNG files written next to the CSVs."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_train_figures(run_dir, rows, label: str, group_ids) -> list[Path]:
    """Training curves, privacy curves, and memory diagnostics for one run."""
    run_dir = Path(run_dir)
    steps = [row["step"] for row in rows]
    written = []

    fig, ax_loss = plt.subplots(figsize=(6.0, 3.6))
    ax_loss.plot(steps, [row["train_loss"] for row in rows], color="tab:red", label="train loss")
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("train loss", color="tab:red")
    ax_acc = ax_loss.twinx()
    ax_acc.plot(steps, [row["eval_accuracy"] for row in rows], color="tab:blue", label="accuracy")
    ax_acc.set_ylabel("accuracy", color="tab:blue")
    ax_acc.set_ylim(0.0, 1.0)
    ax_loss.set_title(f"{label}: training curves")
    written.append(_save(fig, run_dir / "train_curves.png"))

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(steps, [row["epsilon_joint"] for row in rows], label="epsilon (joint)")
    ax.plot(
        steps,
        [row["epsilon_marginal"] for row in rows],
        linestyle="--",
        label="epsilon (marginal-diagnostic)",
    )
    ax.set_xlabel("step")
    ax.set_ylabel("accumulated epsilon")
    ax.set_title(f"{label}: privacy budget")
    ax.legend()
    written.append(_save(fig, run_dir / "privacy_curves.png"))

    depth_keys = [f"d_eff_g{gid}" for gid in group_ids]
    if any(key in rows[0] for key in depth_keys):
        fig, (ax_depth, ax_ratio) = plt.subplots(1, 2, figsize=(8.4, 3.4))
        for gid in group_ids:
            ax_depth.plot(steps, [row[f"d_eff_g{gid}"] for row in rows], label=f"group {gid}")
            ax_ratio.plot(steps, [row[f"memory_ratio_g{gid}"] for row in rows], label=f"group {gid}")
        ax_depth.set_xlabel("step")
        ax_depth.set_ylabel("effective memory depth")
        ax_depth.legend()
        ax_ratio.set_xlabel("step")
        ax_ratio.set_ylabel("memory ratio")
        ax_ratio.legend()
        fig.suptitle(f"{label}: memory diagnostics")
        written.append(_save(fig, run_dir / "memory_curves.png"))
    return written


def render_beta_sweep_figures(sweep_dir, combined_rows) -> list[Path]:
    """Accuracy vs marginal epsilon and accuracy vs step, one line per beta."""
    sweep_dir = Path(sweep_dir)
    betas = sorted({row["beta"] for row in combined_rows}, reverse=True)
    written = []

    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    for beta in betas:
        arm = [row for row in combined_rows if row["beta"] == beta]
        ax.plot(
            [row["epsilon_marginal"] for row in arm],
            [row["eval_accuracy"] for row in arm],
            label=f"beta={beta:g}",
        )
    ax.set_xlabel("accumulated epsilon (marginal-diagnostic)")
    ax.set_ylabel("accuracy")
    ax.set_title("accuracy vs marginal privacy cost")
    ax.legend()
    written.append(_save(fig, sweep_dir / "sweep_beta_accuracy_vs_epsilon.png"))

    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    for beta in betas:
        arm = [row for row in combined_rows if row["beta"] == beta]
        ax.plot([row["step"] for row in arm], [row["eval_accuracy"] for row in arm],
                label=f"beta={beta:g}")
    ax.set_xlabel("step")
    ax.set_ylabel("accuracy")
    ax.set_title("accuracy vs step")
    ax.legend()
    written.append(_save(fig, sweep_dir / "sweep_beta_accuracy_vs_step.png"))
    return written


def render_interval_sweep_figure(sweep_dir, rows) -> list[Path]:
    """Mean memory depth and memory ratio per spectral interval."""
    sweep_dir = Path(sweep_dir)
    labels = [f"[{row['rho_min']:g}, {row['rho_max']:g}]" for row in rows]
    depths = [row["mean_d_eff"] for row in rows]
    ratios = [row["mean_memory_ratio"] for row in rows]
    positions = range(len(rows))

    fig, (ax_depth, ax_ratio) = plt.subplots(1, 2, figsize=(8.8, 3.6))
    ax_depth.bar(positions, [0.0 if math.isnan(v) else v for v in depths], color="tab:blue")
    ax_depth.set_xticks(list(positions), labels, rotation=30)
    ax_depth.set_ylabel("mean effective memory depth")
    ax_ratio.bar(positions, [0.0 if math.isnan(v) else v for v in ratios], color="tab:orange")
    ax_ratio.set_xticks(list(positions), labels, rotation=30)
    ax_ratio.set_ylabel("mean memory ratio")
    fig.suptitle("spectral interval sensitivity")
    return [_save(fig, sweep_dir / "sweep_interval.png")]


def render_accountant_figure(out_dir, rows) -> list[Path]:
    out_dir = Path(out_dir)
    steps = [row["step"] for row in rows]
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    ax.plot(steps, [row["epsilon_joint"] for row in rows], label="epsilon (joint)")
    ax.plot(steps, [row["epsilon_marginal"] for row in rows], linestyle="--",
            label="epsilon (marginal-diagnostic)")
    ax.set_xlabel("step")
    ax.set_ylabel("accumulated epsilon")
    ax.set_title("privacy accounting")
    ax.legend()
    return [_save(fig, out_dir / "accountant_epsilon.png")]
