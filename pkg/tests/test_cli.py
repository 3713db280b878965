import json

import numpy as np
import pytest

from ubsr import bench
from ubsr.cli import main, parse_loss_flag
from ubsr.errors import ConfigError
from ubsr.loss import ExponentialLoss, PolynomialLoss


@pytest.fixture
def returns_csv(tmp_path):
    p = tmp_path / "r.csv"
    assert main(["gen-data", "--n", "3", "--m", "40", "--seed", "5", "--out", str(p)]) == 0
    return p


def run_json(args, tmp_path, name="out.json"):
    out = tmp_path / name
    code = main(args + ["--out", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_gen_data_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["gen-data", "--n", "4", "--m", "30", "--seed", "9", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == "a0,a1,a2,a3"


def test_gen_data_stdout(capsys):
    assert main(["gen-data", "--n", "2", "--m", "3"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 4


def test_estimate(tmp_path):
    x = tmp_path / "x.csv"
    x.write_text("value\n1\n1\n1\n")
    code, out = run_json(["estimate", "--loss", "exp:2", "--lambda", "1", "--input", str(x)], tmp_path)
    assert code == 0
    assert out["t"] == pytest.approx(-1.0, abs=1e-12)
    assert out["schema_version"] >= 1


def test_project_inline_and_file(tmp_path):
    x = tmp_path / "x.csv"
    x.write_text("3\n4\n")
    code, out = run_json(["project", "--solver", "dirssn", "--loss", "poly:2", "--lambda", "0.25", "--input", str(x)],
                         tmp_path)
    assert code == 0
    np.testing.assert_allclose(out["u"], [0.6, 0.8], atol=1e-9)
    assert out["rho"] == pytest.approx(8.0, abs=1e-8)
    assert out["kkt_residual"] <= 1e-8
    big = tmp_path / "big.csv"
    big.write_text("\n".join(str(v) for v in np.random.default_rng(0).standard_normal(1500)) + "\n")
    code, out = run_json(["project", "--loss", "exp:0.5", "--lambda", "0.1", "--input", str(big)], tmp_path, "b.json")
    assert code == 0
    assert isinstance(out["u"], str) and out["u"].endswith("_u.csv")


def test_optimize_with_config(tmp_path, returns_csv):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(
        'schema_version = 1\nseed = 0\n[optimize]\nloss = {kind = "exp", beta = 0.5}\nlambda = 0.1\n'
        'alpha = 0.5\nR0 = "auto"\ntau = 1.7\n'
    )
    code, out = run_json(["optimize", "--config", str(cfg), "--input", str(returns_csv)], tmp_path)
    assert code == 0
    assert out["converged"] and out["violation"] <= 1e-5
    assert len(out["w"]) == 3 and sum(out["w"]) == pytest.approx(1.0)


def test_optimize_utility(tmp_path, returns_csv):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text('[optimize]\nloss = {kind = "poly", eta = 2}\nlambda = 0.2\n'
                   'utility = {kind = "linear"}\ncap = 0.5\n')
    code, out = run_json(["optimize", "--config", str(cfg), "--input", str(returns_csv)], tmp_path)
    assert code == 0 and out["violation"] <= 1e-5


def test_flags_override_config(tmp_path):
    x = tmp_path / "x.csv"
    x.write_text("0\n0\n")
    cfg = tmp_path / "c.toml"
    cfg.write_text('[estimate]\nloss = {kind = "exp", beta = 1}\nlambda = 1.0\n')
    code, out = run_json(["estimate", "--config", str(cfg), "--lambda", "0.125", "--loss", "poly:2",
                          "--input", str(x)], tmp_path)
    assert code == 0 and out["t"] == pytest.approx(-0.5, abs=1e-12)


def test_nonconvergence_exit_code(tmp_path, returns_csv):
    code, out = run_json(["optimize", "--loss", "exp:1", "--lambda", "0.1", "--max-iter", "1",
                          "--input", str(returns_csv)], tmp_path)
    assert code == 1 and out["converged"] is False
    assert out["violation"] is None or out["violation"] >= 0


@pytest.mark.parametrize(
    "args",
    [
        ["estimate", "--loss", "cubic:1", "--lambda", "1"],
        ["estimate", "--lambda", "-1", "--loss", "exp:1"],
        ["bench", "--solvers", ""],
        ["bench", "--solvers", "newton"],
        ["project", "--solver", "newton"],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_2(args, tmp_path):
    x = tmp_path / "x.csv"
    x.write_text("1\n")
    if args[0] in ("estimate", "project"):
        args = args + ["--input", str(x)]
    assert main(args) == 2


def test_unknown_config_key_exit_2(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[estimate]\nlamda = 0.1\n")
    assert main(["estimate", "--config", str(cfg)]) == 2
    cfg.write_text("[nonsense]\nx = 1\n")
    assert main(["estimate", "--config", str(cfg)]) == 2
    cfg.write_text("[optimize]\ntol_abs = -1\n")
    assert main(["optimize", "--config", str(cfg)]) == 2


def test_io_errors_exit_3(tmp_path, caplog):
    assert main(["estimate", "--loss", "exp:1", "--lambda", "1", "--input", str(tmp_path / "none.csv")]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3,x\n")
    assert main(["optimize", "--loss", "exp:1", "--lambda", "0.1", "--input", str(bad)]) == 3
    assert "row 3, column 2" in caplog.text
    assert main(["estimate", "--config", str(tmp_path / "missing.toml")]) == 3


def test_backtest_cli(tmp_path):
    data = tmp_path / "d.csv"
    assert main(["gen-data", "--n", "3", "--m", "45", "--seed", "1", "--out", str(data)]) == 0
    series = tmp_path / "s.csv"
    cfg = tmp_path / "c.toml"
    cfg.write_text('[backtest]\nloss = {kind = "exp", beta = 0.5}\nlambda = 0.1\nwindow = 40\nR0 = "auto"\n')
    args = ["backtest", "--config", str(cfg), "--input", str(data), "--series", str(series), "--omit-timings"]
    code, out = run_json(args, tmp_path)
    assert code == 0
    assert out["evaluated_days"] + len(out["skipped_days"]) == 5
    first = (tmp_path / "out.json").read_bytes()
    assert main(args + ["--out", str(tmp_path / "again.json")]) == 0
    assert (tmp_path / "again.json").read_bytes() == first


def test_bench_projection_cli_deterministic(tmp_path):
    args = ["bench", "--kind", "projection", "--dims", "1,50", "--solvers", "sepssn,bisect",
            "--losses", "exp:0.5,poly:3", "--lambdas", "0.1", "--repeats", "2", "--seed", "3", "--omit-timings"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b), "--threads", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0].split(",") == bench.PROJECTION_COLUMNS
    assert len(lines) == 1 + 2 * 2 * 2 * 2


def test_bench_optimize_cli(tmp_path):
    out = tmp_path / "o.csv"
    code = main(["bench", "--kind", "optimize", "--sizes", "3x2", "--alphas", "0.5", "--losses", "exp:0.5",
                 "--lambdas", "0.1", "--repeats", "2", "--omit-timings", "--out", str(out)])
    assert code == 0
    header, row = out.read_text().splitlines()
    rec = dict(zip(header.split(","), row.split(",")))
    assert abs(float(rec["mean_objective"]) - float(rec["oracle_objective"])) <= 1e-4


def test_parse_loss_flag():
    assert parse_loss_flag("exp:0.5") == {"kind": "exp", "beta": 0.5}
    assert parse_loss_flag("poly:3") == {"kind": "poly", "eta": 3.0}
    with pytest.raises(ConfigError):
        parse_loss_flag("exp:abc")


# -- bench module


def test_projection_bench_rows_meet_kkt():
    grid = bench.ProjectionGrid(dims=(1000,), solvers=("sepssn",), losses=(ExponentialLoss(0.5),), lambdas=(0.1,))
    rows = bench.bench_projection(grid)
    assert len(rows) == 5
    assert all(r["kkt_residual"] <= 1e-8 for r in rows)
    assert bench.all_converged(rows, "projection")


def test_projection_bench_single_point_closed_form():
    grid = bench.ProjectionGrid(dims=(1,), solvers=("sepssn",), losses=(PolynomialLoss(2.0),), lambdas=(0.1,),
                                repeats=1, seed=4)
    (row,) = bench.bench_projection(grid, timings=False)
    x = bench.projection_point(4, 1, 0)[0]
    if x > np.sqrt(0.2):
        # u = sqrt(2 lam) and rho = x / u - 1 when m = 1.
        assert row["rho"] == pytest.approx(x / np.sqrt(0.2) - 1.0, abs=1e-9)
    else:
        assert row["rho"] == 0.0
    assert row["wall_time"] == 0.0


def test_projection_grid_validation():
    with pytest.raises(ConfigError):
        bench.ProjectionGrid(solvers=())
    with pytest.raises(ConfigError):
        bench.ProjectionGrid(solvers=("magic",))
    with pytest.raises(ConfigError):
        bench.OptimizeGrid(sizes=())


def test_optimize_bench_alpha_zero_is_pure_risk():
    grid = bench.OptimizeGrid(sizes=((30, 3),), alphas=(0.0,), repeats=1)
    (row,) = bench.bench_optimize(grid)
    assert row["converged"] == 1 and row["max_violation"] <= 1e-5


def test_rows_to_csv_round_trips_floats():
    text = bench.rows_to_csv([{"a": 0.1, "b": "x"}], ["a", "b", "c"])
    assert text == "a,b,c\n0.1,x,\n"
