"""Acceptance suite: each test prints one CRITERION line and asserts it."""

import csv
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from perioddrift.ergodic import (
    closed_form_J,
    constant_weight,
    estimate_J,
    grid_point_average,
    power_weight,
    time_average_c,
    weighted_grid_average,
    weighted_time_average,
)
from perioddrift.likelihood import jump_refine_points
from perioddrift.limitexp import HSet, calibrate_J, cross_product_check, interval_sum_check, sample_limit_fields
from perioddrift.runner import RunConfig, run
from perioddrift.sde import SimConfig, default_dt, make_model, simulate
from perioddrift.signal import (
    JumpFunctional,
    PiecewiseSignal,
    box_signal,
    disjoint_threshold,
    sine_signal,
    steps_signal,
    support_intervals,
)

ACCEPTANCE = Path(__file__).resolve().parents[1] / "configs" / "acceptance"
SEED = 12345
FISHER_SIN = 2 * math.pi**2 / 3

_cache = {}


@pytest.fixture(scope="session")
def outdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def _run(name, outdir, tag="a"):
    key = (name, tag)
    if key not in _cache:
        cfg = RunConfig.load(ACCEPTANCE / f"{name}.yaml").with_overrides(out=str(outdir / f"{name}_{tag}"))
        status, summary = run(cfg)
        _cache[key] = (Path(cfg.out), summary["statistics"], status)
    return _cache[key]


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_criterion_01_fisher(outdir, criterion):
    out, st, _ = _run("lan_fisher", outdir)
    score = np.array([float(r["score"]) for r in _read_csv(out / "scores.csv")])
    var = float(np.var(score, ddof=1))
    assert var == pytest.approx(st["score_var[n=200]"], rel=1e-12)
    ratio = var / FISHER_SIN
    ok = abs(ratio - 1) <= 0.10
    criterion(1, ok, f"Var(score)={var:.4f} vs 2pi^2/3={FISHER_SIN:.4f} ratio={ratio:.4f} (tol 10%, M={score.size})")
    assert ok


def test_criterion_02_score_normality(outdir, criterion):
    out, st, _ = _run("lan_fisher", outdir)
    rows = _read_csv(out / "scores.csv")
    score = np.array([float(r["score"]) for r in rows])
    fisher = float(st["fisher[n=200]"])
    ks = stats.kstest(score / math.sqrt(fisher), "norm").statistic
    crit = 1.63 / math.sqrt(score.size)
    ok = ks < crit
    criterion(2, ok, f"KS={ks:.4f} < {crit:.4f}")
    assert ok


def test_criterion_03_residual_trend(outdir, criterion):
    _, st, _ = _run("lan_residual", outdir)
    meds = [st[f"residual_median_abs[n={n},h=1]"] for n in (50, 100, 200)]
    ok = meds[0] > meds[1] > meds[2]
    criterion(3, ok, "median |residual| at n=50,100,200: " + ", ".join(f"{m:.4g}" for m in meds))
    assert ok


@pytest.mark.parametrize("name", ["mean_one_sin", "mean_one_box"])
def test_criterion_04_mean_one(outdir, criterion, name):
    out, st, _ = _run(name, outdir)
    ll = np.array([float(r["loglik"]) for r in _read_csv(out / "mc.csv") if r["h"] == ""])
    lik = np.exp(ll)
    m, se = lik.mean(), lik.std(ddof=1) / math.sqrt(lik.size)
    ok = abs(m - 1) <= 3 * se
    criterion(4, ok, f"{name}: mean L={m:.4f} stderr={se:.4f} z={(m - 1) / se:.2f} (M={lik.size})")
    assert ok


def _random_piecewise(rng):
    k = int(rng.integers(1, 4))
    while True:
        r = np.sort(rng.uniform(0, 1, k))
        gaps = np.diff(np.concatenate((r, [r[0] + 1])))
        if gaps.min() > 0.05:
            break
    rho = rng.uniform(0.2, 2.0, k) * rng.choice([-1.0, 1.0], k)
    return steps_signal(tuple(r), tuple(rho))


def _check_config(rng):
    sig = _random_piecewise(rng)
    theta = float(rng.uniform(0.5, 2.0))
    a, b = rng.uniform(0.1, 3.0, 2)
    d = max(a, b)
    n0 = disjoint_threshold(sig, theta, d, 1.0)
    n = float(n0 + rng.integers(0, 200))
    horizon = n * 1.0
    # evaluation points: uniform draws plus every interval endpoint and its neighbours
    pts = [rng.uniform(0, horizon, 4000)]
    for h in (a, b, -a, -b):
        si = support_intervals(JumpFunctional(theta, h, n, sig), horizon)
        for e in (si.left, si.right):
            pts += [e, np.nextafter(e, 0), np.nextafter(e, np.inf)]
    s = np.concatenate(pts)
    s = s[(s >= 0) & (s <= horizon)]
    fails = []
    for sgn in (-1.0, 1.0):
        h1, h2 = sgn * a, sgn * b
        j1, j2 = JumpFunctional(theta, h1, n, sig), JumpFunctional(theta, h2, n, sig)
        jt = JumpFunctional(theta, sgn * min(a, b), n, sig)
        if not np.array_equal(j1(s) * j2(s), jt(s) ** 2):
            fails.append("product")
        small, big = (j1, j2) if a < b else (j2, j1)
        si_s, si_b = support_intervals(small, horizon), support_intervals(big, horizon)
        if si_s.overlap or si_b.overlap:
            fails.append("overlap")
        nested = (len(si_s) == len(si_b) and np.array_equal(si_s.jump_index, si_b.jump_index)
                  and np.all(si_s.left >= si_b.left) and np.all(si_s.right <= si_b.right))
        if not nested:
            fails.append("nesting")
    jm, jp = JumpFunctional(theta, -a, n, sig), JumpFunctional(theta, b, n, sig)
    if not np.all(jm(s) * jp(s) == 0.0):
        fails.append("orthogonality")
    return fails


def test_criterion_05_jump_functional_suite(criterion):
    rng = np.random.default_rng(SEED)
    failures = {}
    for i in range(50):
        f = _check_config(rng)
        if f:
            failures[i] = f
    ok = not failures
    criterion(5, ok, f"50 random configurations, failures: {failures or 'none'}")
    assert ok


def test_criterion_06_limit_moments(outdir, criterion):
    _, st, _ = _run("limit_box", outdir)
    devs = [st[f"max_mean_reldev[n={n}]"] for n in (50, 100, 200)]
    cross = st["max_cross_cov_z[n=200]"]
    within = devs[-1] <= 0.15
    cross_ok = cross <= 3
    mono = devs[0] > devs[1] > devs[2]
    ok = within and cross_ok and mono
    criterion(6, ok, f"J_hat={st['J_hat']:.4g}; max mean rel. dev n=50,100,200: "
              + ", ".join(f"{d:.3f}" for d in devs)
              + f" (<=0.15 at 200: {within}; monotone: {mono}); cross-cov |z| at 200={cross:.2f} (<=3: {cross_ok})")
    assert ok


def test_criterion_07_cross_product_and_interval_sums(criterion):
    model = make_model("ou-sinvol")
    sig = box_signal(0.25, 0.75)
    J_hat, J_se = calibrate_J(model, sig, 1.0, 2000.0, seed=SEED)
    n = 200
    pairs = [(-1.0, -2.0), (1.0, 2.0), (-0.5, -1.5)]
    refine = jump_refine_points(sig, 1.0, sorted({h for p in pairs for h in p}), n, n)
    path = simulate(model, sig, 1.0, SimConfig(float(n), default_dt(n, [1.0]), SEED, tuple(refine)))
    ratios = [cross_product_check(path, model, sig, 1.0, n, a, b) / (min(abs(a), abs(b)) * J_hat) for a, b in pairs]
    cross_ok = all(abs(q - 1) <= 0.10 for q in ratios)

    one = PiecewiseSignal((0.5,), (1.0,))
    meds = []
    for i, m in enumerate((50, 100, 200)):
        d = []
        for rep in range(100):
            ref = jump_refine_points(one, 1.0, [1.0], m, m)
            p = simulate(model, one, 1.0, SimConfig(float(m), default_dt(m, [1.0]), SEED, tuple(ref), rep, i))
            lhs, rhs = interval_sum_check(p, model, 1.0, 0.5, 1.0, m, m - 1)
            d.append(abs(lhs - rhs))
        meds.append(float(np.median(d)))
    trend_ok = meds[0] > meds[1] > meds[2]
    ok = cross_ok and trend_ok
    criterion(7, ok, "cross-product / (min|h| t^2 J_hat) at n=200: " + ", ".join(f"{q:.3f}" for q in ratios)
              + f" (J_hat={J_hat:.4f}+-{J_se:.4f}); interval-sum median discrepancy n=50,100,200: "
              + ", ".join(f"{v:.4g}" for v in meds))
    assert ok


def test_criterion_08_limit_sampler(criterion):
    N = 100_000
    details, ok = [], True
    for k, (h, J) in enumerate([(1.0, 1.0), (-1.0, 1.0), (2.0, 0.5)]):
        x = sample_limit_fields(HSet((h,)), J, N, SEED + k).loglik[:, 0]
        lik = np.exp(x)
        se = lik.std(ddof=1) / math.sqrt(N)
        v = np.var(x, ddof=1)
        m_ok = abs(lik.mean() - 1) <= 3 * se
        v_ok = abs(v / (abs(h) * J) - 1) <= 0.03
        ok = ok and m_ok and v_ok
        details.append(f"(h={h:g},J={J:g}) E[L]={lik.mean():.4f}+-{se:.4f} Var(logL)={v:.4f} vs {abs(h) * J:g}")
    criterion(8, ok, "; ".join(details))
    assert ok


def test_criterion_09_bayes_beats_mle(outdir, criterion):
    out, st, _ = _run("bayes_mle", outdir)
    risk = {r["estimator"]: (float(r["mse"]), float(r["stderr"])) for r in _read_csv(out / "risks.csv")}
    (mle, se_m), (bayes, se_b) = risk["mle"], risk["bayes"]
    margin = (mle - bayes) / math.hypot(se_m, se_b)
    ok = margin >= 3
    criterion(9, ok, f"MSE mle={mle:.3f}+-{se_m:.3f} bayes={bayes:.3f}+-{se_b:.3f} margin={margin:.2f} pooled stderr (need 3)")
    assert ok


@pytest.mark.parametrize("name,max_slope,excluded", [("rates_smooth", -1.3, -0.5), ("rates_box", -1.7, -1.0)])
def test_criterion_10_rates(outdir, criterion, name, max_slope, excluded):
    out, st, _ = _run(name, outdir)
    rows = _read_csv(out / "rates.csv")
    n = np.array([float(r["n"]) for r in rows])
    rmse = np.array([float(r["rmse"]) for r in rows])
    slope = float(np.polyfit(np.log(n), np.log(rmse), 1)[0])
    lo, hi = st["ci_low"], st["ci_high"]
    ok = slope <= max_slope and not (lo <= excluded <= hi)
    criterion(10, ok, f"{name}: slope={slope:.3f} (<= {max_slope}) CI=[{lo:.3f}, {hi:.3f}] excludes {excluded}; "
              + "RMSE " + ", ".join(f"n={a:g}:{b:.3g}" for a, b in zip(n, rmse)))
    assert ok


def test_criterion_11_ergodic_exactness(criterion):
    white = make_model("white")
    sigma2 = make_model({"id": "linear", "sigma0": 2.0})
    path = simulate(white, sine_signal(), 1.0, SimConfig(horizon=50.0, dt_base=0.003, seed=SEED))
    m = 40
    checks = {
        "time_average_c": time_average_c(path, 1.0, constant_weight(1.0), white) - 1.0,
        "weighted_p1": weighted_time_average(path, 1.0, constant_weight(1.0), power_weight(1), white) - 1.0,
        "weighted_p2": weighted_time_average(path, 1.0, constant_weight(1.0), power_weight(2), white) - 1.0,
        "weighted_p0.5": weighted_time_average(path, 1.0, constant_weight(1.0), power_weight(0.5), white) - 1.0,
        "grid_point": grid_point_average(path, 1.0, 0.0, m, white) - 1.0,
        "grid_point_sigma2": grid_point_average(path, 1.0, 0.0, m, sigma2) - 0.25,
        "weighted_grid_p1": weighted_grid_average(path, 1.0, 0.0, m, power_weight(1), white) - (m + 1) / m,
        "weighted_grid_p2": weighted_grid_average(path, 1.0, 0.0, m, power_weight(2), white)
        - (m + 1) * (2 * m + 1) / (2 * m * m),
    }
    box = box_signal(0.25, 0.75)
    one = PiecewiseSignal((0.5,), (1.0,))
    pb = simulate(white, box, 1.0, SimConfig(horizon=60.0, dt_base=0.01, seed=SEED))
    p2 = simulate(sigma2, one, 1.0, SimConfig(horizon=60.0, dt_base=0.01, seed=SEED))
    pt = simulate(white, one, 2.0, SimConfig(horizon=110.0, dt_base=0.01, seed=SEED))
    checks["J_box"] = estimate_J(pb, box, 1.0, 50, white) - 1.0
    checks["J_box_closed_form"] = closed_form_J(box, 1.0) - 1.0
    checks["J_sigma2"] = estimate_J(p2, one, 1.0, 50, sigma2) - 0.125
    checks["J_theta2"] = estimate_J(pt, one, 2.0, 50, white) - 0.125
    worst = max(abs(v) for v in checks.values())
    ok = worst <= 1e-6
    criterion(11, ok, f"{len(checks)} identities, max abs error {worst:.2e} (tol 1e-6)")
    assert ok


@pytest.mark.parametrize("name", ["bayes_mle", "mean_one_box", "lan_fisher"])
def test_criterion_12_determinism(outdir, criterion, name):
    out_a, _, _ = _run(name, outdir, "a")
    out_b, _, _ = _run(name, outdir, "b")
    csvs = sorted(p.name for p in out_a.glob("*.csv"))
    same = [(out_a / f).read_bytes() == (out_b / f).read_bytes() for f in csvs]
    ok = bool(csvs) and all(same)
    criterion(12, ok, f"{name}: {sum(same)}/{len(csvs)} CSV files byte-identical on rerun")
    assert ok
