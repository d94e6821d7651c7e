"""Config-driven experiment dispatch and result persistence."""

from __future__ import annotations

import math
import time
from pathlib import Path as FsPath

import numpy as np

from .. import __version__
from ..lan import martingale_timechange_check, run_lan_experiment
from ..likelihood import innovations, jump_refine_points, local_experiment, log_likelihood_ratio
from ..limitexp import HSet, fd_convergence_check, mle_vs_bayes
from ..mc import mean_se, run_replicates
from ..sde import SimConfig, default_dt, signal_refine_points, simulate, write_path
from ..signal import PiecewiseSignal
from . import report
from .config import RunConfig
from .rates import rate_experiment, rmse_excluding_boundary, run_estimates


def _key(name, **idx):
    inner = ",".join(f"{k}={v:g}" for k, v in idx.items())
    return f"{name}[{inner}]" if inner else name


def check_thresholds(stats, thresholds):
    """Violations of ``{stat: {min, max}}`` bounds, including missing or NaN statistics."""
    out = []
    for name, spec in sorted(thresholds.items()):
        value = stats.get(name)
        if value is None or (isinstance(value, float) and math.isnan(value)):
            out.append({"statistic": name, "value": None, "reason": "missing"})
            continue
        if "min" in spec and not value >= spec["min"]:
            out.append({"statistic": name, "value": value, "reason": f"below min {spec['min']}"})
        if "max" in spec and not value <= spec["max"]:
            out.append({"statistic": name, "value": value, "reason": f"above max {spec['max']}"})
    return out


# ---------------------------------------------------------------------------
# kinds; each returns (statistics, list of written files)


def _run_simulate(cfg: RunConfig, out: FsPath):
    model, signal = cfg.build_model(), cfg.build_signal()
    horizon = float(cfg.get("horizon", 10.0 * cfg.theta))
    dt = cfg.dt or default_dt(horizon, [cfg.theta])
    paths, files = [], []
    for rep in range(cfg.replicates):
        p = simulate(model, signal, cfg.theta, SimConfig(horizon, dt, int(cfg.seed), replicate=rep))
        f = out / f"path_{rep:04d}.csv"
        write_path(p, f)
        files += [f, f.with_name(f.stem + ".meta.json")]
        paths.append(p)
    terminal = np.array([p.values[-1] for p in paths])
    stats = {"terminal_mean": float(terminal.mean()), "steps": int(paths[0].times.size - 1)}
    if terminal.size > 1:
        stats["terminal_var"] = float(terminal.var(ddof=1))
    files.append(report.plot_paths(paths, out / "paths.svg"))
    return stats, files


def _run_lan(cfg: RunConfig, out: FsPath):
    model, signal = cfg.build_model(), cfg.build_signal()
    n_values = cfg.get("n_values", [100])
    h_values = cfg.get("h_values", [1.0])
    rep = run_lan_experiment(model, signal, cfg.theta, n_values, h_values, cfg.replicates, int(cfg.seed),
                             dt=cfg.dt, threads=int(cfg.threads))
    files = [report.write_csv(out / "lan.csv", rep.rows(), ["n", "h", "statistic", "value"])]
    stats = {"replicates": rep.replicates, "aborted": rep.aborted, "ks_critical": 1.63 / math.sqrt(rep.replicates)}
    for n in rep.n_values:
        stats[_key("score_mean", n=n)] = rep.score_mean[n]
        stats[_key("score_mean_z", n=n)] = rep.score_mean[n] / math.sqrt(rep.score_var[n] / rep.replicates)
        stats[_key("score_var", n=n)] = rep.score_var[n]
        stats[_key("fisher", n=n)] = rep.fisher_estimates[n]
        stats[_key("score_var_ratio", n=n)] = rep.score_var[n] / rep.fisher_estimates[n]
        stats[_key("ks", n=n)] = rep.ks_statistic[n]
        stats[_key("ks_margin", n=n)] = stats["ks_critical"] - rep.ks_statistic[n]
        for h in rep.h_values:
            stats[_key("residual_median_abs", n=n, h=h)] = rep.residual_medians[(n, h)]
            stats[_key("remainder_U_median", n=n, h=h)] = rep.remainder_U[(n, h)]
    for h in rep.h_values:
        meds = [rep.residual_medians[(n, h)] for n in rep.n_values]
        stats[_key("residual_decreasing", h=h)] = int(all(b < a for a, b in zip(meds, meds[1:])))
    raw = [{"n": n, "replicate": i, "score": float(rep.raw[n]["score"][i]), "fisher": float(rep.raw[n]["fisher"][i])}
           for n in rep.n_values for i in range(rep.replicates)]
    files.append(report.write_csv(out / "scores.csv", raw))
    n_last = rep.n_values[-1]
    files.append(report.plot_score_histogram(rep.raw[n_last]["score"], rep.fisher_estimates[n_last], n_last,
                                             out / "score_hist.svg"))
    if len(rep.n_values) > 1:
        series = {f"h={h:g}": [rep.residual_medians[(n, h)] for n in rep.n_values] for h in rep.h_values}
        files.append(report.plot_trend(rep.n_values, series, out / "residuals.svg", "median |residual|",
                                       "quadratic-expansion residual"))
    t_grid = cfg.get("t_grid")
    if t_grid:
        tab = martingale_timechange_check(model, signal, cfg.theta, n_values[-1], t_grid, cfg.replicates,
                                          int(cfg.seed), dt=cfg.dt, threads=int(cfg.threads),
                                          calibration_horizon=cfg.get("calibration_horizon"))
        files.append(report.write_csv(out / "timechange.csv", tab.rows(), ["t", "variance", "stderr", "phi"]))
        stats["C_hat"] = tab.C_hat
        for t, v, p in zip(tab.t_values, tab.variance, tab.phi):
            stats[_key("martingale_var", t=t)] = v
            stats[_key("martingale_var_ratio", t=t)] = v / p if p > 0 else float("nan")
    return stats, files


def _run_limit(cfg: RunConfig, out: FsPath):
    model, signal = cfg.build_model(), cfg.build_signal()
    H = HSet.of(cfg.get("h_values", [-1.0, 1.0]))
    comp = fd_convergence_check(model, signal, cfg.theta, cfg.get("n_values", [100]), H, cfg.replicates,
                                int(cfg.seed), dt=cfg.dt, threads=int(cfg.threads), J_hat=cfg.get("J_hat"),
                                calibration_horizon=cfg.get("calibration_horizon"))
    files = [report.write_csv(out / "limit.csv", comp.rows(), ["n", "h", "stat", "value", "target", "reldev"])]
    stats = {"J_hat": comp.J_hat, "J_stderr": comp.J_stderr, "replicates": comp.replicates, "aborted": comp.aborted}
    devs = []
    for n in comp.n_values:
        devs.append(comp.max_mean_reldev(n))
        stats[_key("max_mean_reldev", n=n)] = devs[-1]
        stats[_key("max_cov_reldev", n=n)] = comp.max_cov_reldev(n)
        cross = comp.cross_sign(n)
        if cross:
            stats[_key("max_cross_cov_z", n=n)] = max(abs(c) / s for _, _, c, s in cross)
    stats["mean_reldev_decreasing"] = int(all(b < a for a, b in zip(devs, devs[1:])))
    files.append(report.plot_limit_means(comp, out / "limit_means.svg"))
    return stats, files


def _run_bayes_mle(cfg: RunConfig, out: FsPath):
    J = float(cfg.get("J", 1.0))
    h_true = float(cfg.get("h_true", 0.0))
    res = mle_vs_bayes(J, h_true, cfg.get("grid"), cfg.replicates, int(cfg.seed))
    files = [report.write_csv(out / "risks.csv", res.rows(), ["estimator", "mse", "stderr"])]
    stats = {
        "mle_mse": res.mle_mse, "bayes_mse": res.bayes_mse, "ratio": res.ratio,
        "margin_in_stderr": (res.mle_mse - res.bayes_mse) / res.pooled_stderr,
        "mle_mean_z": res.mle_mean / res.mle_mean_stderr, "bayes_mean_z": res.bayes_mean / res.bayes_mean_stderr,
    }
    files.append(report.plot_estimators(res, out / "estimators.svg"))
    return stats, files


def _estimate_stats(cfg, n_values, per_n):
    stats, rmse = {}, []
    for n, results in zip(n_values, per_n):
        th = [e.theta_hat for e in results]
        bd = [e.boundary for e in results]
        r, d, _ = rmse_excluding_boundary(th, bd, cfg.theta)
        rmse.append(r)
        stats[_key("rmse", n=n)] = r
        stats[_key("boundary_fraction", n=n)] = d
    return stats, rmse


def _run_estimate(cfg: RunConfig, out: FsPath):
    n_values, per_n, aborted = run_estimates(cfg)
    rows = [{"n": e.n, "replicate": e.replicate, "theta_hat": e.theta_hat, "boundary": int(e.boundary)}
            for results in per_n for e in results]
    files = [report.write_csv(out / "estimates.csv", rows)]
    stats, rmse = _estimate_stats(cfg, n_values, per_n)
    stats["aborted"] = aborted
    stats["rmse_decreasing"] = int(all(b < a for a, b in zip(rmse, rmse[1:])))
    if len(n_values) > 1:
        files.append(report.plot_trend(n_values, {"RMSE": rmse}, out / "rmse.svg", "RMSE", "theta estimate"))
    return stats, files


def _run_rates(cfg: RunConfig, out: FsPath):
    rep = rate_experiment(cfg)
    files = [report.write_csv(out / "rates.csv", rep.rows()),
             report.write_csv(out / "estimates.csv", rep.estimate_rows())]
    stats = {"slope": rep.slope, "ci_low": rep.ci[0], "ci_high": rep.ci[1], "target": rep.target,
             "aborted": rep.aborted}
    for n, r, d in zip(rep.n_values, rep.rmse, rep.discard_fraction):
        stats[_key("rmse", n=n)] = r
        stats[_key("boundary_fraction", n=n)] = d
    files.append(report.plot_rates(rep.n_values, rep.rmse, rep.slope, rep.target, out / "rates.svg"))
    return stats, files


def _mc_replicate(job):
    model, signal, theta, n_values, h_values, zetas, dt, seed, rep = job
    rows = []
    for i, n in enumerate(n_values):
        refine = signal_refine_points(signal, zetas, n) if zetas else ()
        if h_values and isinstance(signal, PiecewiseSignal):
            refine = np.concatenate([np.asarray(refine, dtype=float),
                                     jump_refine_points(signal, theta, h_values, n, n)])
        cfg = SimConfig(float(n), dt or default_dt(n, [theta, *zetas]), seed, tuple(refine), rep, i)
        path = simulate(model, signal, theta, cfg)
        innov = innovations(path, model, signal, theta)
        if h_values:
            le = local_experiment(path, model, signal, theta, n, h_values)
            power = -1.5 if le.rate == "n^-3/2" else -2.0
            for h, ll, res in zip(le.h_values, le.loglik, le.residuals):
                rows.append({"n": n, "replicate": rep, "h": h, "zeta": theta + h * n**power,
                             "loglik": ll, "residual": res})
        for z in zetas:
            ll = log_likelihood_ratio(path, model, signal, z, theta, innov=innov)
            rows.append({"n": n, "replicate": rep, "h": "", "zeta": z, "loglik": ll, "residual": ""})
    return rows


def _run_mc(cfg: RunConfig, out: FsPath):
    """Monte Carlo of log-likelihood ratios, at local points h and/or fixed alternatives zeta."""
    model, signal = cfg.build_model(), cfg.build_signal()
    n_values = [float(n) for n in cfg.get("n_values", [10])]
    h_values = [float(h) for h in cfg.get("h_values", [])]
    zetas = [float(z) for z in cfg.get("zeta_values", [])]
    if not h_values and not zetas:
        h_values = [1.0]
    jobs = [(model, signal, cfg.theta, n_values, h_values, zetas, cfg.dt, int(cfg.seed), rep)
            for rep in range(cfg.replicates)]
    results, aborted = run_replicates(_mc_replicate, jobs, int(cfg.threads), "mc")
    rows = [r for block in results for r in block]
    files = [report.write_csv(out / "mc.csv", rows, ["n", "replicate", "h", "zeta", "loglik", "residual"])]
    stats = {"aborted": len(aborted), "replicates": len(results)}
    for n in n_values:
        for h in h_values:
            sel = [r for r in rows if r["n"] == n and r["h"] == h]
            stats[_key("loglik_mean", n=n, h=h)] = float(np.mean([r["loglik"] for r in sel]))
            stats[_key("residual_median_abs", n=n, h=h)] = float(np.median([abs(r["residual"]) for r in sel]))
        for z in zetas:
            lik = np.exp([r["loglik"] for r in rows if r["n"] == n and r["h"] == "" and r["zeta"] == z])
            m, se = mean_se(lik)
            stats[_key("likelihood_mean", n=n, zeta=z)] = m
            stats[_key("likelihood_mean_stderr", n=n, zeta=z)] = se
            stats[_key("likelihood_mean_z", n=n, zeta=z)] = (m - 1.0) / se if se > 0 else float("nan")
    return stats, files


DISPATCH = {
    "simulate": _run_simulate,
    "lan": _run_lan,
    "limit": _run_limit,
    "bayes-mle": _run_bayes_mle,
    "estimate": _run_estimate,
    "rates": _run_rates,
    "mc": _run_mc,
}


def run(config: RunConfig):
    """Execute one experiment and write its artefacts to ``config.out``.

    Writes the data CSVs, ``summary.json`` (statistics, thresholds, violations),
    ``manifest.json`` (config digest, seed, version, file hashes) and SVG
    figures. Wall time goes to ``timing.json`` only, so every other file is
    identical across reruns. Returns ``(exit_status, summary)``; the status
    is 1 when a threshold is violated.
    """
    out = FsPath(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(config.dumps())
    start = time.perf_counter()
    stats, files = DISPATCH[config.kind](config, out)
    elapsed = time.perf_counter() - start
    violations = check_thresholds(stats, config.thresholds)
    summary = {
        "kind": config.kind,
        "statistics": stats,
        "thresholds": config.thresholds,
        "violations": violations,
        "passed": not violations,
    }
    report.write_json(out / "summary.json", summary)
    tracked = [out / "config.yaml", out / "summary.json"] + [FsPath(f) for f in files]
    manifest = {
        "config_sha256": config.digest(),
        "seed": int(config.seed),
        "version": __version__,
        "kind": config.kind,
        "files": {f.name: report.sha256_file(f) for f in sorted(tracked)},
    }
    report.write_json(out / "manifest.json", manifest)
    report.write_json(out / "timing.json", {"wall_time_seconds": elapsed})
    return (0 if not violations else 1), summary
