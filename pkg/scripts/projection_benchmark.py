"""Time the four projection solvers on standard-normal points and write a CSV."""
import argparse
import sys

from ubsr.bench import PROJECTION_COLUMNS, ProjectionGrid, bench_projection, rows_to_csv
from ubsr.loss import ExponentialLoss, PolynomialLoss


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    ap.add_argument("--solvers", nargs="+", default=["sepssn", "dirssn", "bisect", "ipm"])
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.1])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="CSV path (stdout when omitted)")
    args = ap.parse_args(argv)
    grid = ProjectionGrid(
        dims=args.dims,
        solvers=args.solvers,
        losses=(ExponentialLoss(0.5), ExponentialLoss(1.0), PolynomialLoss(2.0), PolynomialLoss(3.0)),
        lambdas=args.lambdas,
        repeats=args.repeats,
        seed=args.seed,
    )
    text = rows_to_csv(bench_projection(grid), PROJECTION_COLUMNS)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
