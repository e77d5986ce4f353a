"""Reporting over completed run directories.

Reads only the self-describing artifacts (manifest, trials.csv, pareto.csv,
series.json, jointnet.txt), prints text summaries, aggregates means across
several runs of different seeds, and renders matplotlib figures next to the
CSV outputs.
"""

from __future__ import annotations

import csv
import json
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .config import read_manifest


class ReportError(RuntimeError):
    pass


def load_run(run_dir: str) -> dict:
    manifest_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ReportError(f"missing manifest in {run_dir}")
    try:
        manifest = read_manifest(manifest_path)
    except json.JSONDecodeError as exc:
        raise ReportError(f"corrupt manifest in {run_dir}: {exc}") from exc
    out = {"dir": run_dir, "manifest": manifest, "trials": [], "pareto": [], "series": {}, "tabular": None}
    trials_path = os.path.join(run_dir, "trials.csv")
    if os.path.exists(trials_path):
        out["trials"] = _read_csv(trials_path)
    pareto_path = os.path.join(run_dir, "pareto.csv")
    if os.path.exists(pareto_path):
        out["pareto"] = _read_csv(pareto_path)
    series_path = os.path.join(run_dir, "series.json")
    if os.path.exists(series_path):
        with open(series_path) as f:
            out["series"] = json.load(f)
    net_path = os.path.join(run_dir, "jointnet.txt")
    if os.path.exists(net_path):
        with open(net_path) as f:
            out["tabular"] = f.read()
    return out


def _read_csv(path: str) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _best_trial(run: dict) -> dict | None:
    ok = [t for t in run["trials"] if t["status"] == "ok"]
    if not ok:
        return None
    return max(ok, key=lambda t: float(t["gain_signed"]))


def mean_series(runs: list[dict]) -> list[float]:
    """Average accuracy-after-each-task curve of each run's best trial,
    averaged across runs."""
    curves = []
    for run in runs:
        best = _best_trial(run)
        if best is None:
            continue
        curve = run["series"].get(best["trial_id"])
        if curve:
            curves.append(curve)
    if not curves:
        return []
    length = min(len(c) for c in curves)
    return np.mean([c[:length] for c in curves], axis=0).tolist()


def summarize(run_dirs: list[str], out=print) -> dict:
    runs = [load_run(d) for d in run_dirs]
    n = len(runs)
    out(f"runs aggregated: {n}")
    for run in runs:
        m = run["manifest"]
        out(f"  {run['dir']}: status={m['status']} seed={m['seed']} hash={m['config_hash']}")

    series = mean_series(runs)
    if series:
        out("avg accuracy after each task (mean over runs):")
        out("  " + ", ".join(f"{v:.4f}" for v in series))

    gains, gains_lit, accs = [], [], []
    for run in runs:
        best = _best_trial(run)
        if best:
            gains.append(float(best["gain_signed"]))
            gains_lit.append(float(best["gain_paper_literal"]))
            accs.append(float(best["avg_accuracy"]))
    summary = {}
    if gains:
        summary = {
            "mean_avg_accuracy": float(np.mean(accs)),
            "mean_gain_signed": float(np.mean(gains)),
            "mean_gain_paper_literal": float(np.mean(gains_lit)),
        }
        out(f"mean final avg accuracy: {summary['mean_avg_accuracy']:.4f}")
        out(f"mean gain (positive = better): {summary['mean_gain_signed']:.4f}")
        out(f"mean gain (literal form): {summary['mean_gain_paper_literal']:.4f}")

    if runs[0]["tabular"]:
        out("joint network (best trial of first run):")
        out(runs[0]["tabular"].rstrip())

    if runs[0]["pareto"]:
        out("pareto front (first run):")
        out("  deltas | avg_accuracy | gain_signed | param_count")
        for row in runs[0]["pareto"]:
            out(f"  {row['deltas']} | {row['avg_accuracy']} | {row['gain_signed']} | {row['param_count']}")
    summary["series"] = series
    return summary


# ---------------------------------------------------------------------------
# Figures


def render_figures(run_dirs: list[str], out_dir: str | None = None) -> list[str]:
    """Write PNG figures next to the first run's CSVs (or into out_dir)."""
    runs = [load_run(d) for d in run_dirs]
    target = out_dir or run_dirs[0]
    os.makedirs(target, exist_ok=True)
    written = []

    series = mean_series(runs)
    if series:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(range(1, len(series) + 1), series, marker="o")
        ax.set_xlabel("tasks arrived")
        ax.set_ylabel("average validation accuracy")
        ax.set_title(f"accuracy as tasks arrive (mean of {len(runs)} run(s))")
        ax.grid(alpha=0.3)
        path = os.path.join(target, "accuracy_curve.png")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    ok = [t for t in runs[0]["trials"] if t["status"] == "ok"]
    if len(ok) > 1:
        gains = [float(t["gain_signed"]) for t in ok]
        params = [int(t["param_count"]) for t in ok]
        front_ids = {t["trial_id"] for t in runs[0]["pareto"]}
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.scatter(params, gains, label="trials", alpha=0.7)
        fp = [(int(t["param_count"]), float(t["gain_signed"])) for t in ok if t["trial_id"] in front_ids]
        if fp:
            fx, fy = zip(*sorted(fp))
            ax.scatter(fx, fy, marker="s", s=70, facecolors="none", edgecolors="tab:red", label="pareto front")
        ax.set_xlabel("parameter count")
        ax.set_ylabel("average gain (positive = better)")
        ax.set_title("size vs performance trade-off")
        ax.grid(alpha=0.3)
        ax.legend()
        path = os.path.join(target, "pareto.png")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

        deltas = []
        for t in ok:
            ds = t["deltas"].split(";")
            deltas.append(float(ds[0]) if ds and ds[0] else math.nan)
        if len(set(deltas)) > 1:
            fig, ax = plt.subplots(figsize=(5, 3.2))
            order = np.argsort(deltas)
            ax.plot(np.asarray(deltas)[order], np.asarray([float(t["avg_accuracy"]) for t in ok])[order], marker="o")
            ax.set_xlabel("grow coefficient")
            ax.set_ylabel("final average accuracy")
            ax.set_title("accuracy vs grow coefficient")
            ax.grid(alpha=0.3)
            path = os.path.join(target, "accuracy_vs_delta.png")
            fig.tight_layout()
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)
    return written
