"""Command-line entry point: ``ubsr <subcommand> [--config cfg.toml] [flags]``.

Exit codes: 0 success, 1 solver non-convergence, 2 usage or config error,
3 I/O error.  Flags override values from the config file section of the
same subcommand.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np
import tomli

from . import bench
from .admm import AdmmOptions, SaaProblem, UtilityProblem, solve, solve_utility_constrained, utility_from_dict
from .backtest import BacktestConfig, R0Rule, run_backtest
from .data import (
    DEFAULT_OUTLIER_CUTOFF,
    SyntheticSpec,
    generate_synthetic,
    ingest_csv,
    read_vector_csv,
    write_csv,
    write_vector_csv,
)
from .errors import AllMissingColumnError, BacktestAbortedError, ConfigError, MaxIterationsError, ParseError, UbsrError
from .estimate import estimate_ubsr
from .loss import LossFunction, loss_from_dict
from .projection import SOLVERS, ProjectionInstance, project

SCHEMA_VERSION = 1
EXIT_OK, EXIT_NONCONVERGED, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
# Vectors up to this length are written inline in JSON when no path is given.
INLINE_MAX = 1000

log = logging.getLogger("ubsr")


class NonConvergence(Exception):
    """Raised by a command whose solver finished without converging."""


# ---------------------------------------------------------------------------
# Config values


def _loss(v) -> LossFunction:
    if isinstance(v, LossFunction):
        return v
    if isinstance(v, str):
        v = parse_loss_flag(v)
    if not isinstance(v, dict):
        raise ConfigError(f"loss must be a table like {{kind = \"exp\", beta = 0.5}}, got {v!r}")
    try:
        return loss_from_dict(v)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_loss_flag(text: str) -> dict:
    """``exp:0.5`` or ``poly:3`` to a loss table."""
    kind, _, param = text.partition(":")
    key = {"exp": "beta", "poly": "eta"}.get(kind)
    if key is None:
        raise ConfigError(f"loss must look like exp:BETA or poly:ETA, got {text!r}")
    if not param:
        return {"kind": kind}
    try:
        return {"kind": kind, key: float(param)}
    except ValueError:
        raise ConfigError(f"bad loss parameter in {text!r}") from None


def _num(v, name) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{name} must be finite")
    return v


def _real(name):
    return lambda v: _num(v, name)


def _positive(name):
    def f(v):
        v = _num(v, name)
        if not v > 0:
            raise ConfigError(f"{name} must be positive")
        return v

    return f


def _count(name, minimum=1):
    def f(v):
        if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
            raise ConfigError(f"{name} must be an integer >= {minimum}, got {v!r}")
        return v

    return f


def _text(name, choices=None):
    def f(v):
        if not isinstance(v, str):
            raise ConfigError(f"{name} must be a string")
        if choices is not None and v not in choices:
            raise ConfigError(f"{name} must be one of {sorted(choices)}, got {v!r}")
        return v

    return f


def _flag(name):
    def f(v):
        if not isinstance(v, bool):
            raise ConfigError(f"{name} must be true or false")
        return v

    return f


def _list(name, item):
    def f(v):
        if isinstance(v, (str, bytes)) or not isinstance(v, (list, tuple)):
            raise ConfigError(f"{name} must be a list")
        return [item(x) for x in v]

    return f


def _cutoff(v):
    if v is None or (isinstance(v, str) and v.lower() == "none"):
        return None
    return _positive("outlier_zscore_cutoff")(v)


def _r0(v):
    if isinstance(v, str):
        if v == "auto":
            return None
        try:
            v = float(v)
        except ValueError:
            raise ConfigError(f"R0 must be \"auto\" or a number, got {v!r}") from None
    return _num(v, "R0")


def _r0_rule(v):
    if isinstance(v, str) and v in ("auto", "one_over_n"):
        return R0Rule("one_over_n")
    if v == "full_sample_mean":
        return R0Rule("full_sample_mean")
    return R0Rule("fixed", _r0(v))


def _size_pair(v):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"sizes entries must be [m, n] pairs, got {v!r}")
    return (_count("m")(v[0]), _count("n")(v[1]))


def _utility(v):
    if not isinstance(v, dict):
        raise ConfigError("utility must be a table")
    return utility_from_dict(v)


_IO = {"input": _text("input"), "out": _text("out")}
_ADMM = {
    "sigma0": _positive("sigma0"),
    "tau": _positive("tau"),
    "tol_abs": _positive("tol_abs"),
    "tol_rel": _positive("tol_rel"),
    "max_iter": _count("max_iter"),
    "inner_tol": _positive("inner_tol"),
    "inner_max_iter": _count("inner_max_iter"),
    "projector": _text("projector", set(SOLVERS)),
    "adapt": _flag("adapt"),
}

SCHEMAS: Dict[str, Dict[str, Callable]] = {
    "estimate": {**_IO, "loss": _loss, "lambda": _positive("lambda"), "tol": _positive("tol")},
    "project": {**_IO, "loss": _loss, "lambda": _positive("lambda"), "solver": _text("solver", set(SOLVERS)),
                "u_out": _text("u_out")},
    "optimize": {**_IO, **_ADMM, "loss": _loss, "lambda": _positive("lambda"), "alpha": _real("alpha"),
                 "R0": _r0, "w_out": _text("w_out"), "outlier_zscore_cutoff": _cutoff,
                 "utility": _utility, "cap": _real("cap")},
    "backtest": {**_IO, **_ADMM, "loss": _loss, "lambda": _positive("lambda"), "alpha": _real("alpha"),
                 "R0": _r0_rule, "window": _count("window", 2), "series": _text("series"),
                 "outlier_zscore_cutoff": _cutoff, "max_failure_fraction": _real("max_failure_fraction")},
    "gen-data": {"out": _text("out"), "n": _count("n"), "m": _count("m")},
    "bench": {"out": _text("out"), "kind": _text("kind", {"projection", "optimize"}),
              "dims": _list("dims", _count("dims")), "solvers": _list("solvers", _text("solvers", set(SOLVERS))),
              "losses": _list("losses", _loss), "lambdas": _list("lambdas", _real("lambdas")),
              "repeats": _count("repeats"), "sizes": _list("sizes", _size_pair),
              "alphas": _list("alphas", _real("alphas")), **{k: v for k, v in _ADMM.items()}},
}
GLOBAL_KEYS = {"schema_version": _count("schema_version"), "seed": _count("seed", 0),
               "threads": _count("threads"), "log_level": _text("log_level")}


def load_config(path: Optional[str]) -> dict:
    """Parse and validate a TOML config; unknown sections and keys are rejected."""
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out: Dict[str, Any] = {}
    for key, value in raw.items():
        if key in SCHEMAS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a section")
            out[key] = _validate_section(key, value)
        elif key in GLOBAL_KEYS:
            out[key] = GLOBAL_KEYS[key](value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if out.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {out['schema_version']}")
    return out


def _validate_section(name: str, values: dict) -> dict:
    schema = SCHEMAS[name]
    unknown = sorted(set(values) - set(schema))
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {unknown}")
    return {k: schema[k](v) for k, v in values.items()}


@dataclass
class Settings:
    section: dict
    seed: int
    threads: int
    timings: bool

    def get(self, key, default=None):
        return self.section.get(key, default)

    def require(self, key):
        if key not in self.section:
            raise ConfigError(f"missing required setting {key!r}")
        return self.section[key]


def _merge(args, cfg: dict, name: str) -> Settings:
    section = dict(cfg.get(name, {}))
    flags = {}
    for key in SCHEMAS[name]:
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            flags[key] = v
    section.update(_validate_section(name, flags))
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    threads = args.threads if args.threads is not None else cfg.get("threads", 1)
    if threads < 1:
        raise ConfigError("threads must be positive")
    return Settings(section, seed, threads, not args.omit_timings)


def _admm_options(s: Settings, **defaults) -> AdmmOptions:
    kw = dict(defaults)
    kw.update({k: s.section[k] for k in _ADMM if k in s.section})
    return AdmmOptions(**kw)


# ---------------------------------------------------------------------------
# Output helpers


def _finite_or_none(v):
    if isinstance(v, float):
        return v if math.isfinite(v) else None
    if isinstance(v, dict):
        return {k: _finite_or_none(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_finite_or_none(x) for x in v]
    return v


def _emit_json(payload: dict, out: Optional[str]) -> None:
    """Write strict JSON; non-finite floats (for example an overflowing violation) become null."""
    payload = _finite_or_none({"schema_version": SCHEMA_VERSION, **payload})
    text = json.dumps(payload, indent=2, allow_nan=False) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _emit_text(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _vector_field(values: np.ndarray, path: Optional[str], out: Optional[str], suffix: str):
    """Write ``values`` to ``path`` (or next to ``out`` when long) and return the JSON field."""
    if path is None and out is not None and values.size > INLINE_MAX:
        path = str(Path(out).with_suffix("")) + suffix
    if path is None:
        return [float(v) for v in values]
    write_vector_csv(values, path)
    return path


def _time(s: Settings, value: float) -> float:
    return value if s.timings else 0.0


# ---------------------------------------------------------------------------
# Subcommands


def cmd_estimate(s: Settings) -> dict:
    x = read_vector_csv(s.require("input"))
    est = estimate_ubsr(x, s.require("lambda"), s.require("loss"), tol=s.get("tol", 1e-10))
    return {"t": est.t, "residual": est.residual, "iterations": est.iterations}


def cmd_project(s: Settings) -> dict:
    x = read_vector_csv(s.require("input"))
    inst = ProjectionInstance(x, s.require("lambda"), s.require("loss"))
    solver = s.get("solver", "sepssn")
    t0 = time.perf_counter()
    res = project(inst, solver)
    elapsed = time.perf_counter() - t0
    return {
        "solver": solver,
        "u": _vector_field(res.u, s.get("u_out"), s.get("out"), "_u.csv"),
        "rho": res.rho,
        "kkt_residual": res.kkt_residual,
        "iterations": res.iterations.outer,
        "inside": res.inside,
        "wall_time": _time(s, elapsed),
    }


def _load_returns(s: Settings):
    return ingest_csv(s.require("input"), s.get("outlier_zscore_cutoff", DEFAULT_OUTLIER_CUTOFF))


def cmd_optimize(s: Settings) -> dict:
    table = _load_returns(s)
    loss, lam = s.require("loss"), s.require("lambda")
    if "utility" in s.section:
        problem = UtilityProblem(table.returns, s.require("cap"), lam, loss, s.get("utility"))
        rep, _ = solve_utility_constrained(problem, _admm_options(s, sigma0=1.0))
        objective = rep.objective
    else:
        problem = SaaProblem(table.returns, lam, s.get("alpha", 0.5), loss, s.get("R0"))
        rep, _ = solve(problem, _admm_options(s))
        objective = rep.objective
    payload = {
        "objective": objective,
        "violation": rep.violation,
        "iterations": rep.iterations,
        "converged": rep.converged,
        "wall_time": _time(s, rep.wall_time),
        "t": rep.t,
        "primal_residual": rep.primal_residual,
        "dual_residual": rep.dual_residual,
        "inexact_inner": rep.inexact_inner,
        "labels": table.labels,
        "w": _vector_field(rep.w, s.get("w_out"), s.get("out"), "_w.csv"),
    }
    if not rep.converged:
        raise NonConvergence(payload)
    return payload


def cmd_backtest(s: Settings) -> dict:
    table = _load_returns(s)
    cfg = BacktestConfig(
        window=s.get("window", 250),
        alpha=s.get("alpha", 0.3),
        lam=s.require("lambda"),
        loss=s.require("loss"),
        r0_rule=s.get("R0", R0Rule()),
        admm=_admm_options(s, sigma0=1e-5, tau=2.7),
        max_failure_fraction=s.get("max_failure_fraction", 0.05),
        workers=s.threads,
    )
    rep = run_backtest(table, cfg)
    if s.get("series") is not None:
        rep.write_series(s.get("series"))
    payload = rep.to_dict()
    if not s.timings:
        for d in payload["diagnostics"]:
            d["wall_time"] = 0.0
    return payload


def cmd_gen_data(s: Settings) -> None:
    table = generate_synthetic(SyntheticSpec(n=s.require("n"), m=s.require("m"), seed=s.seed))
    out = s.get("out")
    if out is None:
        buf = io.StringIO()
        _write_table(table, buf)
        sys.stdout.write(buf.getvalue())
    else:
        write_csv(table, out)


def _write_table(table, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(table.labels)
    for row in table.returns:
        w.writerow([repr(float(v)) for v in row])


def cmd_bench(s: Settings) -> int:
    kind = s.get("kind", "projection")
    if kind == "projection":
        grid = bench.ProjectionGrid(
            dims=s.get("dims", [1_000, 10_000, 100_000]),
            solvers=s.get("solvers", ["sepssn"]),
            losses=s.get("losses", [_loss({"kind": "exp", "beta": 0.5})]),
            lambdas=s.get("lambdas", [0.1]),
            repeats=s.get("repeats", 5),
            seed=s.seed,
        )
        rows = bench.bench_projection(grid, s.threads, s.timings)
        _emit_text(bench.rows_to_csv(rows, bench.PROJECTION_COLUMNS), s.get("out"))
    else:
        grid = bench.OptimizeGrid(
            sizes=s.get("sizes", [(5000, 500)]),
            alphas=s.get("alphas", [0.5]),
            losses=s.get("losses", [_loss({"kind": "exp", "beta": 0.5})]),
            lambdas=s.get("lambdas", [0.1]),
            repeats=s.get("repeats", 5),
            seed=s.seed,
            admm=_admm_options(s),
        )
        rows = bench.bench_optimize(grid, s.threads, s.timings)
        _emit_text(bench.rows_to_csv(rows, bench.OPTIMIZE_COLUMNS), s.get("out"))
    return EXIT_OK if bench.all_converged(rows, kind) else EXIT_NONCONVERGED


# ---------------------------------------------------------------------------
# Argument parsing


def _csv_list(item):
    def f(text):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return [item(p) for p in parts]

    return f


def _pair(text):
    m, _, n = text.partition("x")
    return [int(m), int(n)]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--threads", type=int, help="worker threads for independent solves")
    common.add_argument("--log-level", default=None, help="debug, info, warning or error")
    common.add_argument("--omit-timings", action="store_true", help="write 0 for wall times (byte-stable output)")
    common.add_argument("--out", help="output file (stdout when omitted)")

    p = argparse.ArgumentParser(prog="ubsr", description="Utility-based shortfall risk tools.")
    sub = p.add_subparsers(dest="command", required=True)

    def problem_flags(sp):
        sp.add_argument("--loss", help="exp:BETA or poly:ETA")
        sp.add_argument("--lambda", dest="lambda_", type=float, help="risk level")
        sp.add_argument("--input", help="input CSV")

    def admm_flags(sp):
        sp.add_argument("--sigma0", type=float)
        sp.add_argument("--tau", type=float)
        sp.add_argument("--tol-abs", type=float)
        sp.add_argument("--tol-rel", type=float)
        sp.add_argument("--max-iter", type=int)
        sp.add_argument("--projector", choices=sorted(SOLVERS))

    sp = sub.add_parser("estimate", parents=[common], help="UBSR of a sample vector")
    problem_flags(sp)
    sp = sub.add_parser("project", parents=[common], help="project a point onto the UBSR level set")
    problem_flags(sp)
    sp.add_argument("--solver", choices=sorted(SOLVERS))
    sp.add_argument("--u-out", help="CSV path for the projected point")
    sp = sub.add_parser("optimize", parents=[common], help="mean-UBSR portfolio by ADMM")
    problem_flags(sp)
    admm_flags(sp)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--R0", dest="R0", help='return floor, or "auto" for the 1/n rule')
    sp.add_argument("--w-out", help="CSV path for the weights")
    sp = sub.add_parser("backtest", parents=[common], help="rolling-window out-of-sample backtest")
    problem_flags(sp)
    admm_flags(sp)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--window", type=int)
    sp.add_argument("--R0", dest="R0", help='"auto", "full_sample_mean" or a number')
    sp.add_argument("--series", help="CSV path for the daily series")
    sp = sub.add_parser("gen-data", parents=[common], help="synthetic returns CSV")
    sp.add_argument("--n", type=int)
    sp.add_argument("--m", type=int)
    sp = sub.add_parser("bench", parents=[common], help="benchmark grids (CSV)")
    admm_flags(sp)
    sp.add_argument("--kind", choices=["projection", "optimize"])
    sp.add_argument("--dims", type=_csv_list(int), help="comma-separated m values")
    sp.add_argument("--solvers", type=_csv_list(str), help="comma-separated solver names")
    sp.add_argument("--losses", type=_csv_list(str), help="comma-separated exp:BETA / poly:ETA")
    sp.add_argument("--lambdas", type=_csv_list(float))
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--sizes", type=_csv_list(_pair), help="comma-separated MxN pairs")
    sp.add_argument("--alphas", type=_csv_list(float))
    return p


_FLAG_ALIASES = {"lambda": "lambda_"}


def _flags_namespace(args):
    # Map parser attribute names onto config keys.
    for key, attr in _FLAG_ALIASES.items():
        if hasattr(args, attr):
            setattr(args, key, getattr(args, attr))
    return args


COMMANDS = {
    "estimate": cmd_estimate,
    "project": cmd_project,
    "optimize": cmd_optimize,
    "backtest": cmd_backtest,
    "gen-data": cmd_gen_data,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    args = _flags_namespace(args)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        level = args.log_level or cfg.get("log_level", "warning")
        logging.getLogger().setLevel(getattr(logging, level.upper(), logging.WARNING))
        settings = _merge(args, cfg, args.command)
        result = COMMANDS[args.command](settings)
    except NonConvergence as exc:
        _emit_json(exc.args[0], settings.get("out"))
        log.error("solver did not converge")
        return EXIT_NONCONVERGED
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, (ParseError, AllMissingColumnError)):
            log.error("%s", _describe_parse(exc))
            return EXIT_IO
        log.error("configuration error: %s", exc)
        return EXIT_USAGE
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (MaxIterationsError, BacktestAbortedError) as exc:
        log.error("solver did not converge: %s", exc)
        return EXIT_NONCONVERGED
    except UbsrError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_NONCONVERGED
    if isinstance(result, int):
        return result
    if result is not None:
        _emit_json(result, settings.get("out"))
    return EXIT_OK


def _describe_parse(exc) -> str:
    where = ""
    if getattr(exc, "row", None) is not None:
        where = f" (row {exc.row}, column {exc.column})"
    return f"input error: {exc}{where}"


if __name__ == "__main__":
    sys.exit(main())
