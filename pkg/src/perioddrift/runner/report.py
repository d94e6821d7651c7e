"""CSV, JSON and SVG output with byte-stable formatting."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path as FsPath

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "svg.hashsalt": "perioddrift",
    "svg.fonttype": "none",
    "figure.figsize": (6.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
})


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(v)


def write_csv(path, rows, columns=None):
    path = FsPath(path)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, obj):
    FsPath(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def sha256_file(path):
    return hashlib.sha256(FsPath(path).read_bytes()).hexdigest()


def save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return FsPath(path)


# ---------------------------------------------------------------------------
# figures


def plot_paths(paths, path):
    fig, ax = plt.subplots()
    for p in paths[:5]:
        ax.plot(p.times, p.values, lw=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_title("simulated paths")
    return save_svg(fig, path)


def plot_score_histogram(score, fisher, n, path):
    from scipy import stats

    z = np.asarray(score) / math.sqrt(fisher)
    fig, ax = plt.subplots()
    ax.hist(z, bins=30, density=True, alpha=0.6, label="standardised score")
    x = np.linspace(-4, 4, 201)
    ax.plot(x, stats.norm.pdf(x), "k-", lw=1, label="N(0,1)")
    ax.set_title(f"score at n={n:g}")
    ax.legend()
    return save_svg(fig, path)


def plot_trend(n_values, series, path, ylabel, title, loglog=True):
    fig, ax = plt.subplots()
    for label, ys in series.items():
        ax.plot(n_values, ys, "o-", label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    return save_svg(fig, path)


def plot_rates(n_values, rmse, slope, target, path):
    fig, ax = plt.subplots()
    n = np.asarray(n_values, dtype=float)
    ax.loglog(n, rmse, "o-", label=f"RMSE (slope {slope:.2f})")
    ref = rmse[0] * (n / n[0]) ** target
    ax.loglog(n, ref, "k--", lw=1, label=f"reference slope {target:g}")
    ax.set_xlabel("n")
    ax.set_ylabel("RMSE of theta estimate")
    ax.legend()
    return save_svg(fig, path)


def plot_limit_means(comp, path):
    fig, ax = plt.subplots()
    h = np.asarray(comp.H.values)
    target, _ = comp.targets()
    for n in comp.n_values:
        ax.errorbar(h, comp.mean[n], yerr=2 * comp.mean_stderr[n], fmt="o", capsize=3, label=f"n={n:g}")
    ax.plot(h, target, "k_", ms=20, label="-|h| J/2")
    ax.set_xlabel("h")
    ax.set_ylabel("mean log-likelihood")
    ax.legend()
    return save_svg(fig, path)


def plot_estimators(report, path):
    fig, ax = plt.subplots()
    bins = np.linspace(-15 / report.J, 15 / report.J, 61) + report.h_true
    ax.hist(report.mle, bins=bins, alpha=0.5, label="MLE")
    ax.hist(report.bayes, bins=bins, alpha=0.5, label="Bayes")
    ax.set_xlabel("estimate of h")
    ax.legend()
    return save_svg(fig, path)
