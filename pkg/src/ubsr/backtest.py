"""Rolling-window out-of-sample backtest of the mean-UBSR portfolio."""
from __future__ import annotations

import csv
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .admm import AdmmOptions, SaaProblem, solve
from .data import ReturnsTable
from .errors import BacktestAbortedError, ConfigError, UbsrError
from .loss import ExponentialLoss, LossFunction

# Volatility at or below this (relative to max(1, |mean|)) counts as zero.
ZERO_VOL = 1e-14


@dataclass(frozen=True)
class R0Rule:
    """How each window's return floor is set.

    ``one_over_n``: expected return of the equal-weight portfolio on the window.
    ``fixed``: ``value`` on every day.
    ``full_sample_mean``: mean of all entries of the full table.
    """

    kind: str = "one_over_n"
    value: Optional[float] = None

    KINDS = ("one_over_n", "fixed", "full_sample_mean")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown R0 rule {self.kind!r}")
        if (self.kind == "fixed") != (self.value is not None):
            raise ConfigError("a value is required for, and only for, the fixed R0 rule")
        if self.value is not None and not math.isfinite(self.value):
            raise ConfigError("fixed R0 must be finite")

    def floor(self, window: np.ndarray, full: np.ndarray) -> float:
        if self.kind == "fixed":
            return float(self.value)
        if self.kind == "full_sample_mean":
            return float(full.mean())
        return float(window.mean())


@dataclass(frozen=True)
class BacktestConfig:
    window: int = 250
    alpha: float = 0.3
    lam: float = 0.1
    loss: LossFunction = field(default_factory=lambda: ExponentialLoss(0.5))
    r0_rule: R0Rule = field(default_factory=R0Rule)
    admm: AdmmOptions = field(default_factory=lambda: AdmmOptions(sigma0=1e-5, tau=2.7))
    max_failure_fraction: float = 0.05
    workers: int = 1

    def __post_init__(self):
        if self.window < 2:
            raise ConfigError("window must be at least 2")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError("alpha must lie in [0, 1)")
        if not self.lam > self.loss.infimum:
            raise ConfigError("lam must exceed inf l")
        if not 0.0 <= self.max_failure_fraction <= 1.0:
            raise ConfigError("max_failure_fraction must lie in [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be positive")


@dataclass
class DayDiagnostics:
    day: int
    converged: bool
    iterations: int
    objective: float
    violation: float
    wall_time: float
    error: str = ""


@dataclass
class Metrics:
    mean_return: float
    volatility: float
    sharpe: Optional[float]
    max_drawdown: float

    def to_dict(self) -> dict:
        return {
            "mean_return": self.mean_return,
            "volatility": self.volatility,
            "sharpe": self.sharpe,
            "max_drawdown": self.max_drawdown,
        }


@dataclass
class BacktestReport:
    days: np.ndarray  # row indices of the evaluated (not skipped) days
    daily_oos_returns: np.ndarray
    cumulative: np.ndarray
    weights: np.ndarray  # one row per evaluated day
    metrics: Metrics
    benchmark_returns: np.ndarray
    benchmark_cumulative: np.ndarray
    benchmark: Metrics
    diagnostics: List[DayDiagnostics]
    skipped_days: List[int]

    @property
    def mean_return(self):
        return self.metrics.mean_return

    @property
    def volatility(self):
        return self.metrics.volatility

    @property
    def sharpe(self):
        return self.metrics.sharpe

    @property
    def max_drawdown(self):
        return self.metrics.max_drawdown

    def to_dict(self) -> dict:
        return {
            "evaluated_days": int(self.days.size),
            "skipped_days": list(self.skipped_days),
            "metrics": self.metrics.to_dict(),
            "benchmark_equal_weight": self.benchmark.to_dict(),
            "diagnostics": [vars(d).copy() for d in self.diagnostics],
        }

    def write_series(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["day", "return", "cumulative", "benchmark_return", "benchmark_cumulative"])
            for row in zip(self.days, self.daily_oos_returns, self.cumulative, self.benchmark_returns,
                           self.benchmark_cumulative):
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def max_drawdown(returns) -> float:
    """Largest peak-to-trough loss of the wealth curve prod(1 + r), starting from wealth 1."""
    r = np.asarray(returns, dtype=float).reshape(-1)
    if not np.isfinite(r).all():
        raise ValueError("returns must be finite")
    wealth = np.concatenate(([1.0], np.cumprod(1.0 + r)))
    peak = np.maximum.accumulate(wealth)
    return float(min(np.min(wealth / peak - 1.0), 0.0))


def series_metrics(returns) -> Metrics:
    """Mean, population std, Sharpe (zero risk-free rate; None at zero volatility), drawdown."""
    r = np.asarray(returns, dtype=float).reshape(-1)
    if r.size == 0:
        raise ValueError("empty return series")
    mean = float(r.mean())
    vol = float(np.sqrt(np.mean((r - mean) ** 2)))
    sharpe = mean / vol if vol > ZERO_VOL * max(1.0, abs(mean)) else None
    return Metrics(mean, vol, sharpe, max_drawdown(r))


def _solve_day(R: np.ndarray, d: int, cfg: BacktestConfig):
    scen = R[d - cfg.window : d]
    t0 = time.perf_counter()
    try:
        problem = SaaProblem(scen, cfg.lam, cfg.alpha, cfg.loss, cfg.r0_rule.floor(scen, R))
        rep, _ = solve(problem, cfg.admm)
    except UbsrError as exc:
        diag = DayDiagnostics(d, False, 0, math.nan, math.nan, time.perf_counter() - t0, str(exc))
        return diag, None
    diag = DayDiagnostics(d, rep.converged, rep.iterations, rep.objective, rep.violation, rep.wall_time)
    if not rep.converged:
        diag.error = "ADMM did not converge"
        return diag, None
    return diag, rep.w


def run_backtest(table: ReturnsTable, cfg: BacktestConfig = BacktestConfig()) -> BacktestReport:
    """Solve on rows [d - window, d), hold the weights over row d, for every d >= window.

    Days whose solve fails are skipped and listed; more than
    ``cfg.max_failure_fraction`` of failures raises BacktestAbortedError.
    The equal-weight benchmark is evaluated on the same days.
    """
    R = table.returns
    T, n = R.shape
    if T - cfg.window < 1:
        raise ConfigError(f"need more than window={cfg.window} rows, got {T}")
    days = range(cfg.window, T)
    budget = cfg.max_failure_fraction * len(days)
    with warnings.catch_warnings():
        # A fixed or full-sample floor may exceed a window's 1/n return; failures are tracked per day.
        warnings.simplefilter("ignore", UserWarning)
        if cfg.workers == 1:
            results = [_solve_day(R, d, cfg) for d in days]
        else:
            with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
                results = list(ex.map(lambda d: _solve_day(R, d, cfg), days))
    diagnostics = [r[0] for r in results]
    skipped = [r[0].day for r in results if r[1] is None]
    if len(skipped) > budget:
        raise BacktestAbortedError(
            f"{len(skipped)} of {len(days)} window solves failed (limit {cfg.max_failure_fraction:.0%})"
        )
    kept = [(r[0].day, r[1]) for r in results if r[1] is not None]
    if not kept:
        raise BacktestAbortedError("no window solve succeeded")
    idx = np.array([d for d, _ in kept], dtype=int)
    W = np.stack([w for _, w in kept])
    realized = np.einsum("ij,ij->i", R[idx], W)
    bench = R[idx].mean(axis=1)
    return BacktestReport(
        days=idx,
        daily_oos_returns=realized,
        cumulative=np.cumprod(1.0 + realized) - 1.0,
        weights=W,
        metrics=series_metrics(realized),
        benchmark_returns=bench,
        benchmark_cumulative=np.cumprod(1.0 + bench) - 1.0,
        benchmark=series_metrics(bench),
        diagnostics=diagnostics,
        skipped_days=skipped,
    )
