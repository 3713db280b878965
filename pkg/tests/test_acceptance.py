"""The ten acceptance criteria, each printing one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are also
repeated in the terminal summary.
"""
import math
import time
import warnings

import numpy as np
import pytest

from conftest import record_acceptance
from ubsr.admm import AdmmOptions, AdmmState, SaaProblem, grid_oracle, lagrangian, lagrangian_grad, project_simplex, solve
from ubsr.backtest import BacktestConfig, max_drawdown, run_backtest, series_metrics
from ubsr.data import SyntheticSpec, generate_synthetic
from ubsr.estimate import estimate_ubsr
from ubsr.loss import ExponentialLoss, PolynomialLoss
from ubsr.projection import ProjectionInstance, SOLVERS, kkt_certificate, project, project_sepssn

pytestmark = pytest.mark.acceptance

LOSSES = [ExponentialLoss(0.5), ExponentialLoss(1.0), PolynomialLoss(2.0), PolynomialLoss(3.0)]
LAMBDAS = [0.1, 0.2]
DIMS = [1, 10, 1_000, 100_000]
INSTANCES = 100
SOLVER_NAMES = sorted(SOLVERS)


def _point(li, lam, m, rep):
    return np.random.default_rng([li, int(lam * 10), m, rep]).standard_normal(m)


def _last_ratio(residuals):
    r = residuals[residuals > 0] if residuals.size and residuals[-1] == 0 else residuals
    if residuals.size and residuals[-1] == 0:
        return 0.0
    if r.size < 2:
        return 0.0  # finite termination
    return float(r[-1] / r[-2])


@pytest.fixture(scope="module")
def projection_sweep():
    """Every solver on every instance of the criterion-1 grid.

    Keeps the worst KKT residual, the worst pairwise gap between solvers and
    the last SepSSN Newton ratio per instance, so criteria 1, 3 and 5 share
    one pass.
    """
    worst_kkt = 0.0
    worst_gap = 0.0
    ratios = {}
    failures = []
    t0 = time.perf_counter()
    for li, loss in enumerate(LOSSES):
        for lam in LAMBDAS:
            for m in DIMS:
                for rep in range(INSTANCES):
                    inst = ProjectionInstance(_point(li, lam, m, rep), lam, loss)
                    us = []
                    for name in SOLVER_NAMES:
                        try:
                            res = project(inst, name)
                        except Exception as exc:  # recorded, reported as a failure below
                            failures.append((str(loss), lam, m, rep, name, type(exc).__name__))
                            continue
                        cert = kkt_certificate(inst, res.u, res.rho)
                        worst_kkt = max(worst_kkt, cert.worst)
                        us.append(res.u)
                        if name == "sepssn":
                            ratios.setdefault(str(loss), []).append(_last_ratio(res.trace.residuals))
                    for u in us[1:]:
                        worst_gap = max(worst_gap, float(np.max(np.abs(u - us[0]))))
    elapsed = time.perf_counter() - t0
    return {"kkt": worst_kkt, "gap": worst_gap, "ratios": ratios, "failures": failures, "elapsed": elapsed}


def test_criterion_01_projection_kkt(projection_sweep):
    s = projection_sweep
    n = len(LOSSES) * len(LAMBDAS) * len(DIMS) * INSTANCES
    kkt_ok = s["kkt"] <= 1e-8 and not s["failures"]
    time_ok = s["elapsed"] < 120.0
    record_acceptance(
        1,
        kkt_ok and time_ok,
        f"{n} instances x {len(SOLVER_NAMES)} solvers, worst KKT residual {s['kkt']:.2e} (limit 1e-8), "
        f"{len(s['failures'])} solver errors, runtime {s['elapsed']:.1f} s (limit 120 s)",
    )
    assert not s["failures"], s["failures"][:5]
    assert s["kkt"] <= 1e-8
    assert time_ok, f"runtime {s['elapsed']:.1f} s exceeds 120 s"


def test_criterion_02_eta2_closed_form():
    loss = PolynomialLoss(2.0)
    worst = 0.0
    t0 = time.perf_counter()
    for m in DIMS:
        for rep in range(10):
            x = np.random.default_rng([2, m, rep]).standard_normal(m) + 0.5
            for lam in LAMBDAS:
                S = float(np.sum(np.maximum(x, 0.0) ** 2))
                if S / (2 * m) <= lam:
                    continue  # inside Z
                rho = m * (math.sqrt(S / (2 * m * lam)) - 1.0)
                u_ref = np.where(x > 0, m * x / (m + rho), x)
                for name in SOLVER_NAMES:
                    u = project(ProjectionInstance(x, lam, loss), name).u
                    worst = max(worst, float(np.max(np.abs(u - u_ref))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8
    record_acceptance(2, ok, f"worst |u - u_closed_form| {worst:.2e} (limit 1e-8), {elapsed:.1f} s")
    assert ok


def test_criterion_03_cross_solver(projection_sweep):
    gap = projection_sweep["gap"]
    ok = gap <= 1e-6 and not projection_sweep["failures"]
    record_acceptance(3, ok, f"worst pairwise ||u_A - u_B||_inf {gap:.2e} (limit 1e-6) on the criterion-1 set")
    assert ok


def test_criterion_04_sepssn_speed():
    times = []
    for loss in LOSSES:
        for rep in range(3):
            inst = ProjectionInstance(np.random.default_rng([4, rep]).standard_normal(100_000), 0.1, loss)
            t0 = time.perf_counter()
            res = project_sepssn(inst)
            times.append(time.perf_counter() - t0)
            assert res.kkt_residual <= 1e-8
    ok = max(times) < 10.0
    record_acceptance(4, ok, f"SepSSN at m=1e5: slowest {max(times):.3f} s, mean {np.mean(times):.3f} s (cap 10 s)")
    assert ok


def test_criterion_05_superlinear_tail(projection_sweep):
    lines, ok = [], True
    for loss in (ExponentialLoss(0.5), ExponentialLoss(1.0), PolynomialLoss(3.0)):
        r = np.array(projection_sweep["ratios"][str(loss)])
        frac = float(np.mean(r < 0.1))
        ok &= frac >= 0.95
        lines.append(f"{loss}: {frac:.1%}")
    record_acceptance(5, ok, "share of SepSSN runs with last |H| ratio < 0.1 (need 95%): " + ", ".join(lines))
    assert ok


@pytest.mark.slow
def test_criterion_06_admm_synthetic():
    summary, ok = [], True
    for m, n in ((5000, 500), (5000, 1000)):
        reps = []
        for seed in range(5):
            R = generate_synthetic(SyntheticSpec(n=n, m=m, seed=seed)).returns
            p = SaaProblem(R, 0.1, 0.5, ExponentialLoss(0.5))
            rep, _ = solve(p, AdmmOptions(sigma0=1e-6, tau=1.7))
            reps.append(rep)
            band = "inside" if abs(rep.objective - 1.8186) <= 0.05 * 1.8186 else "outside"
            print(
                f"({m},{n}) seed {seed}: it={rep.iterations} viol={rep.violation:.1e} "
                f"res=({rep.primal_residual:.1e},{rep.dual_residual:.1e}) {rep.wall_time:.1f}s "
                f"obj={rep.objective:.4f} ({band} the +-5% band around 1.8186)"
            )
        ok &= all(
            r.converged
            and r.iterations <= 1000
            and r.violation <= 1e-5
            and r.primal_residual <= 1e-6
            and r.dual_residual <= 1e-6
            and r.wall_time <= 150.0
            for r in reps
        )
        objs = [r.objective for r in reps]
        summary.append(
            f"({m},{n}) x5 seeds: {sum(r.converged for r in reps)}/5 converged, "
            f"max it {max(r.iterations for r in reps)}, max viol {max(r.violation for r in reps):.1e}, "
            f"max res {max(max(r.primal_residual, r.dual_residual) for r in reps):.1e}, "
            f"max time {max(r.wall_time for r in reps):.1f}s (cap 150 s), obj {min(objs):.4f}..{max(objs):.4f}"
        )
    record_acceptance(6, ok, "; ".join(summary))
    assert ok


def test_criterion_07_brute_force():
    worst, count = 0.0, 0
    t0 = time.perf_counter()
    for li, loss in enumerate(LOSSES):
        rng = np.random.default_rng([7, li])
        for _ in range(20):
            R = rng.normal(0.05, 0.3, (3, 2))
            p = SaaProblem(R, 0.2, float(rng.uniform(0.0, 0.9)), loss)
            rep, _ = solve(p)
            worst = max(worst, abs(rep.objective - grid_oracle(p, step=1e-4).objective))
            count += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 60.0
    record_acceptance(7, ok, f"{count} instances, worst |obj_ADMM - obj_grid| {worst:.2e} (limit 1e-4), {elapsed:.1f} s")
    assert ok


def test_criterion_08_estimator_closed_forms():
    worst = 0.0
    for c in (-2.0, -0.3, 0.0, 0.7, 3.0):
        for lam in (0.05, 0.1, 0.5, 1.0, 2.0):
            for beta in (0.5, 1.0, 2.0):
                t = estimate_ubsr(np.full(11, c), lam, ExponentialLoss(beta)).t
                worst = max(worst, abs(t - (-c - math.log(lam) / beta)))
            for eta in (2.0, 3.0):
                t = estimate_ubsr(np.full(11, c), lam, PolynomialLoss(eta)).t
                worst = max(worst, abs(t - (-((eta * lam) ** (1 / eta)) - c)))
    ok = worst <= 1e-9
    record_acceptance(8, ok, f"worst |t - closed form| {worst:.2e} (limit 1e-9)")
    assert ok


def test_criterion_09_gradient_check():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        m, n = int(rng.integers(2, 9)), int(rng.integers(1, 6))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            p = SaaProblem(rng.normal(0.05, 0.2, (m, n)), 0.3, float(rng.uniform(0, 0.99)), LOSSES[rng.integers(4)])
        state = AdmmState(
            w=project_simplex(rng.random(n)), t=0.0, z=rng.normal(size=m), s=float(rng.random()),
            nu1=rng.normal(size=m), nu2=float(rng.normal()), sigma=float(rng.uniform(0.1, 5)),
        )
        cs = float(rng.uniform(1, 5))
        w, t = rng.random(n), float(rng.normal())
        gw, gt = lagrangian_grad(p, state, w, t, cs)
        h = 1e-6
        for j in range(n + 1):
            dw = np.zeros(n)
            dt = 0.0
            if j < n:
                dw[j] = h
            else:
                dt = h
            fd = (lagrangian(p, state, w + dw, t + dt, cs) - lagrangian(p, state, w - dw, t - dt, cs)) / (2 * h)
            g = gw[j] if j < n else gt
            worst = max(worst, abs(fd - g) / max(1.0, abs(g)))
    ok = worst <= 1e-6
    record_acceptance(9, ok, f"worst relative gradient error {worst:.2e} over 50 instances (limit 1e-6)")
    assert ok


def _drawdown_oracle(r):
    W = np.concatenate(([1.0], np.cumprod(1.0 + r)))
    worst = 0.0
    for i in range(W.size):
        for j in range(i, W.size):
            worst = min(worst, W[j] / W[i] - 1.0)
    return worst


def test_criterion_10_backtest():
    rng = np.random.default_rng(10)
    exact = all(
        max_drawdown(r) == _drawdown_oracle(r)
        for r in (rng.normal(0.0005, 0.02, int(rng.integers(1, 300))) for _ in range(100))
    )
    worst_sharpe = 0.0
    for _ in range(100):
        r = rng.normal(0.0005, 0.02, 250)
        m = series_metrics(r)
        mean = float(np.sum(r)) / r.size
        vol = math.sqrt(float(np.sum((r - mean) ** 2)) / r.size)
        worst_sharpe = max(worst_sharpe, abs(m.sharpe - mean / vol))
    table = generate_synthetic(SyntheticSpec(n=5, m=80, seed=10))
    cfg = BacktestConfig(window=60, loss=ExponentialLoss(0.5))
    a, b = run_backtest(table, cfg), run_backtest(table, cfg)
    same = a.daily_oos_returns.tobytes() == b.daily_oos_returns.tobytes() and a.metrics == b.metrics
    ran = a.days.size == 20 and not a.skipped_days
    ok = exact and worst_sharpe <= 1e-12 and same and ran
    record_acceptance(
        10,
        ok,
        f"drawdown exact on 100 series: {exact}; worst Sharpe error {worst_sharpe:.1e} (limit 1e-12); "
        f"synthetic run {a.days.size} days, deterministic: {same}",
    )
    assert ok
