"""Benchmark grids for the projection solvers and the ADMM optimizer."""
from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .admm import AdmmOptions, SaaProblem, grid_oracle, solve
from .data import SyntheticSpec, generate_synthetic
from .errors import ConfigError, UbsrError
from .loss import ExponentialLoss, LossFunction
from .projection import SOLVERS, ProjectionInstance, project

log = logging.getLogger(__name__)

PROJECTION_COLUMNS = [
    "m", "solver", "loss", "lambda", "seed", "wall_time", "kkt_residual", "iterations", "rho", "error",
]
OPTIMIZE_COLUMNS = [
    "m", "n", "alpha", "loss", "lambda", "runs", "converged", "mean_objective", "objective_spread",
    "mean_time", "max_violation", "mean_iterations", "oracle_objective", "errors",
]


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(c) for c in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: List[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


@dataclass(frozen=True)
class ProjectionGrid:
    dims: Sequence[int] = (1_000, 10_000, 100_000)
    solvers: Sequence[str] = ("sepssn",)
    losses: Sequence[LossFunction] = field(default_factory=lambda: (ExponentialLoss(0.5),))
    lambdas: Sequence[float] = (0.1,)
    repeats: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.solvers:
            raise ConfigError("the solver list is empty")
        unknown = [s for s in self.solvers if s not in SOLVERS]
        if unknown:
            raise ConfigError(f"unknown solvers {unknown}; choose from {sorted(SOLVERS)}")
        if not self.dims or min(self.dims) < 1:
            raise ConfigError("dims must be positive integers")
        if not self.losses or not self.lambdas:
            raise ConfigError("loss and lambda grids must be nonempty")
        if self.repeats < 1:
            raise ConfigError("repeats must be positive")


def projection_point(seed: int, m: int, rep: int) -> np.ndarray:
    """Standard-normal point shared by every solver, loss and lambda of one (m, rep) cell."""
    return np.random.default_rng([seed, m, rep]).standard_normal(m)


def bench_projection(grid: ProjectionGrid, threads: int = 1, timings: bool = True) -> List[dict]:
    """One row per (m, solver, loss, lambda, repeat); failures become rows with ``error`` set."""
    cells = [
        (m, solver, loss, lam, rep)
        for m in grid.dims
        for rep in range(grid.repeats)
        for loss in grid.losses
        for lam in grid.lambdas
        for solver in grid.solvers
    ]

    def run(cell):
        m, solver, loss, lam, rep = cell
        x = projection_point(grid.seed, m, rep)
        row = {"m": m, "solver": solver, "loss": str(loss), "lambda": float(lam), "seed": rep}
        try:
            inst = ProjectionInstance(x, lam, loss)
            t0 = time.perf_counter()
            res = project(inst, solver)
            elapsed = time.perf_counter() - t0
        except (UbsrError, ValueError) as exc:
            row["error"] = type(exc).__name__
            log.warning("projection cell %s failed: %s", row, exc)
            return row
        row.update(
            wall_time=elapsed if timings else 0.0,
            kkt_residual=res.kkt_residual,
            iterations=res.iterations.outer,
            rho=res.rho,
        )
        return row

    return _map(run, cells, threads)


@dataclass(frozen=True)
class OptimizeGrid:
    sizes: Sequence[tuple] = ((5000, 500),)  # (m, n) pairs
    alphas: Sequence[float] = (0.5,)
    losses: Sequence[LossFunction] = field(default_factory=lambda: (ExponentialLoss(0.5),))
    lambdas: Sequence[float] = (0.1,)
    repeats: int = 5
    seed: int = 0
    admm: AdmmOptions = field(default_factory=AdmmOptions)

    def __post_init__(self):
        if not self.sizes or not self.alphas or not self.losses or not self.lambdas:
            raise ConfigError("every optimize grid axis must be nonempty")
        for m, n in self.sizes:
            if m < 1 or n < 1:
                raise ConfigError("sizes must be positive")
        if self.repeats < 1:
            raise ConfigError("repeats must be positive")


def bench_optimize(grid: OptimizeGrid, threads: int = 1, timings: bool = True) -> List[dict]:
    """Per-cell mean objective, objective spread, mean time and max violation across seeds.

    Cells with n = 2 also carry the grid-search objective averaged over the
    same seeds.
    """
    cells = [
        (m, n, alpha, loss, lam)
        for (m, n) in grid.sizes
        for alpha in grid.alphas
        for loss in grid.losses
        for lam in grid.lambdas
    ]
    runs = [(c, rep) for c in cells for rep in range(grid.repeats)]

    def run(item):
        (m, n, alpha, loss, lam), rep = item
        table = generate_synthetic(SyntheticSpec(n=n, m=m, seed=grid.seed + rep))
        try:
            problem = SaaProblem(table.returns, lam, alpha, loss)
            rep_, _ = solve(problem, grid.admm)
            oracle = grid_oracle(problem).objective if n == 2 else None
        except (UbsrError, ValueError) as exc:
            log.warning("optimize cell %s failed: %s", item, exc)
            return None, type(exc).__name__
        return (rep_, oracle), ""

    results = _map(run, runs, threads)
    rows = []
    for i, (m, n, alpha, loss, lam) in enumerate(cells):
        chunk = results[i * grid.repeats : (i + 1) * grid.repeats]
        ok = [r for r, _ in chunk if r is not None]
        errors = ";".join(e for _, e in chunk if e)
        row = {"m": m, "n": n, "alpha": float(alpha), "loss": str(loss), "lambda": float(lam),
               "runs": grid.repeats, "errors": errors}
        if ok:
            objs = np.array([r.objective for r, _ in ok])
            row.update(
                converged=sum(r.converged for r, _ in ok),
                mean_objective=float(objs.mean()),
                objective_spread=float(objs.max() - objs.min()),
                mean_time=float(np.mean([r.wall_time for r, _ in ok])) if timings else 0.0,
                max_violation=float(max(r.violation for r, _ in ok)),
                mean_iterations=float(np.mean([r.iterations for r, _ in ok])),
            )
            oracles = [o for _, o in ok if o is not None]
            if oracles:
                row["oracle_objective"] = float(np.mean(oracles))
        else:
            row["converged"] = 0
        rows.append(row)
    return rows


def all_converged(rows: List[dict], kind: str) -> bool:
    if kind == "projection":
        return all(not r.get("error") for r in rows)
    return all(r.get("converged") == r["runs"] for r in rows)
