"""Figures and summary tables from one or more run directories.

Each run directory holds the ``metrics.csv`` / ``eval.csv`` written by
training. Runs are aggregated episode-wise (mean and std across runs), so
pass the per-seed directories of one experiment together.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import convergence_episode, read_csv  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}

SUMMARY_COLUMNS = ("run", "episodes", "final_avg_reward", "final_avg_reward_std", "final_error",
                   "final_reward", "ms_per_decision", "converge_95", "converge_99")


def load_runs(run_dirs) -> list[dict]:
    runs = []
    for d in map(Path, run_dirs):
        metrics = read_csv(d / "metrics.csv")
        evals = read_csv(d / "eval.csv") if (d / "eval.csv").exists() else []
        runs.append({"name": d.name, "metrics": metrics, "evals": evals})
    if not runs:
        raise ValueError("no run directories given")
    return runs


def _stack(rows_per_run: list[list[dict]], key: str) -> tuple[np.ndarray, np.ndarray]:
    """Episode axis and a runs x episodes array, truncated to the shortest run."""
    length = min(len(rows) for rows in rows_per_run)
    if length == 0:
        return np.zeros(0), np.zeros((len(rows_per_run), 0))
    episodes = np.array([r["episode"] for r in rows_per_run[0][:length]])
    values = np.array([[r[key] for r in rows[:length]] for rows in rows_per_run])
    return episodes, values


def summarize(runs: list[dict]) -> list[dict]:
    """One row per run plus a final ``median`` row across runs."""
    rows = []
    for run in runs:
        curve = [m["avg_step_reward"] for m in run["metrics"]]
        last = run["evals"][-1] if run["evals"] else {}
        rows.append({
            "run": run["name"],
            "episodes": len(run["metrics"]),
            "final_avg_reward": last.get("avg_reward_mean", np.nan),
            "final_avg_reward_std": last.get("avg_reward_std", np.nan),
            "final_error": last.get("final_error_mean", np.nan),
            "final_reward": last.get("final_reward_mean", np.nan),
            "ms_per_decision": last.get("ms_per_decision", np.nan),
            "converge_95": convergence_episode(curve, 0.95),
            "converge_99": convergence_episode(curve, 0.99),
        })
    median = {"run": "median"}
    for col in SUMMARY_COLUMNS[1:]:
        vals = [r[col] for r in rows if r[col] is not None]
        median[col] = float(np.median(vals)) if vals else None
    return rows + [median]


def write_summary(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(SUMMARY_COLUMNS), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def _band(ax, x, values, label, color=None):
    mean, std = values.mean(axis=0), values.std(axis=0)
    line, = ax.plot(x, mean, label=label, color=color, lw=1.4)
    if values.shape[0] > 1:
        ax.fill_between(x, mean - std, mean + std, color=line.get_color(), alpha=0.2, lw=0)


def plot_learning_curves(runs: list[dict], path: str | Path, title: str = "") -> None:
    """Training reward per episode and, where present, evaluation reward; mean and one std across runs."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x, vals = _stack([r["metrics"] for r in runs], "avg_step_reward")
        if x.size:
            _band(ax, x, vals, f"training (n={len(runs)})")
        if all(r["evals"] for r in runs):
            xe, ve = _stack([r["evals"] for r in runs], "avg_reward_mean")
            _band(ax, xe, ve, "evaluation")
        ax.set_xlabel("episode")
        ax.set_ylabel("average step reward")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_losses(runs: list[dict], path: str | Path) -> None:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.2))
        for ax, key, label in zip(axes, ("dko_loss", "td_loss"), ("Koopman model loss", "TD loss")):
            x, vals = _stack([r["metrics"] for r in runs], key)
            if x.size:
                _band(ax, x, np.log10(np.maximum(vals, 1e-300)), label)
            ax.set_xlabel("episode")
            ax.set_ylabel(f"log10 {label}")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_trajectory(path_csv: str | Path, path_png: str | Path) -> None:
    """State and input traces from a trajectory CSV written by evaluation."""
    with open(path_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path_csv} has no rows")
    t = np.array([float(r["t"]) for r in rows])
    states = sorted((k for k in rows[0] if k.startswith("x")), key=lambda k: int(k[1:]))
    inputs = sorted((k for k in rows[0] if k.startswith("u")), key=lambda k: int(k[1:]))
    with plt.rc_context(STYLE):
        fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 4.4))
        for k in states:
            top.plot(t, [float(r[k]) for r in rows], lw=1.2, label=k)
        for k in inputs:
            bottom.step(t, [float(r[k]) for r in rows], where="post", lw=1.2, label=k)
        top.set_ylabel("state")
        bottom.set_ylabel("input")
        bottom.set_xlabel("step")
        top.legend(ncol=min(len(states), 5), loc="upper right")
        bottom.legend(loc="upper right")
        fig.tight_layout()
        fig.savefig(path_png)
        plt.close(fig)


def make_report(run_dirs, out_dir: str | Path, title: str = "") -> list[Path]:
    """Write ``summary.csv`` and figures into ``out_dir``; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = load_runs(run_dirs)
    written = [out_dir / "summary.csv", out_dir / "learning_curve.png", out_dir / "losses.png"]
    write_summary(summarize(runs), written[0])
    plot_learning_curves(runs, written[1], title)
    plot_losses(runs, written[2])
    for d in map(Path, run_dirs):
        for traj in sorted(d.glob("trajectory_*.csv")):
            png = out_dir / f"{d.name}_{traj.stem}.png"
            plot_trajectory(traj, png)
            written.append(png)
    return written
