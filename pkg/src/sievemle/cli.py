"""Command-line entry point: reproducible runs of the estimators and studies.

Every command writes its outputs plus a manifest JSON capturing the exact
argument vector, the master seed, and package versions; replaying the
manifest's argv reproduces every output byte for byte (wall-clock lives only
in the manifest itself). Exit codes: 0 success, 2 usage, 3 data problems,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, riskapp, simlab
from .copulas import copula_from_dict
from .estimate import (
    IndependenceAssumed,
    JointModelSpec,
    ParametricDependence,
    SieveDependence,
    fit_fmle,
    fit_qmle,
    fit_smle,
    select_order,
)
from .exceptions import (
    ConvergenceError,
    DataError,
    FeasibilityError,
    RangeError,
    SingularInformationError,
    SupportError,
)
from .marginals import FAMILY_NAMES, marginal_from_dict

__all__ = ["main", "dispatch", "rerun_manifest", "parse_grid", "parse_marginal"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_DATA_ERRORS = (DataError, FeasibilityError, SupportError, RangeError, OSError)
_NUMERICAL_ERRORS = (ConvergenceError, SingularInformationError, np.linalg.LinAlgError)


def parse_grid(text: str) -> list[float]:
    """Parse 'lo:hi:step' into an inclusive grid; a bare number is a 1-grid."""
    parts = text.split(":")
    if len(parts) == 1:
        return [float(parts[0])]
    if len(parts) != 3:
        raise ValueError(f"grid must be lo:hi:step, got {text!r}")
    lo, hi, step = (float(p) for p in parts)
    if step <= 0 or hi < lo:
        raise ValueError(f"grid needs hi >= lo and step > 0, got {text!r}")
    count = int(round((hi - lo) / step)) + 1
    return [lo + step * k for k in range(count)]


def parse_marginal(text: str):
    """Parse 'family:p1,p2,...' into a marginal with those parameters."""
    family, _, params = text.partition(":")
    family = family.strip().lower()
    known = sorted(FAMILY_NAMES.values())
    if family not in known:
        raise ValueError(f"unknown marginal family {family!r}; expected one of {known}")
    values = [float(p) for p in params.split(",") if p.strip()]
    return marginal_from_dict({"family": family, "params": values})


def _workers(requested: int | None) -> int:
    cap = os.environ.get("SIEVEMLE_MAX_WORKERS")
    available = os.cpu_count() or 1
    count = available if requested is None else requested
    if cap is not None:
        count = min(count, max(1, int(cap)))
    return max(1, count)


def _load_data_csv(path: str) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if arr.size == 0:
        raise DataError(f"{path}: no data rows")
    return arr


def _write_manifest(outdir: Path, command: str, argv: list[str], seed, outputs, t0: float):
    import hashlib

    records = []
    for name in outputs:
        digest = hashlib.sha256((outdir / name).read_bytes()).hexdigest()
        records.append({"file": name, "sha256": digest})
    manifest = {
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "versions": {
            "package": __version__,
            "numpy": np.__version__,
            "scipy": __import__("scipy").__version__,
            "python": sys.version.split()[0],
        },
        "wall_clock_seconds": round(time.time() - t0, 3),
        "outputs": records,
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def rerun_manifest(manifest_path) -> int:
    """Re-execute the argument vector recorded in a manifest."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    return dispatch(manifest["argv"])


# --- subcommand bodies ----------------------------------------------------------


def _cmd_fit(args, argv) -> int:
    t0 = time.time()
    data = _load_data_csv(args.data)
    marginals = tuple(parse_marginal(text) for text in args.marginal)
    if args.method == "qmle":
        spec = JointModelSpec(marginals, IndependenceAssumed())
        fit = fit_qmle(data, spec)
    elif args.method == "fmle":
        if args.copula is None:
            raise DataError("--copula is required for method fmle")
        family, _, params = args.copula.partition(":")
        values = [float(p) for p in params.split(",") if p.strip()]
        copula = copula_from_dict({"family": family.strip().lower(), "params": values})
        fit = fit_fmle(data, JointModelSpec(marginals, ParametricDependence(copula)))
    else:
        fit = fit_smle(data, JointModelSpec(marginals, SieveDependence(args.order)))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "fit.json", "w") as fh:
        json.dump(fit.to_dict(), fh, indent=2)
        fh.write("\n")
    _write_manifest(outdir, "fit", argv, None, ["fit.json"], t0)
    return EXIT_OK


def _cmd_select_order(args, argv) -> int:
    t0 = time.time()
    data = _load_data_csv(args.data)
    marginals = tuple(parse_marginal(text) for text in args.marginal)
    grid = [int(j) for j in parse_grid(args.j_grid)]
    spec = JointModelSpec(marginals, SieveDependence(grid[0]))
    selection = select_order(data, spec, grid, criterion=args.criterion)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = [
        {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in row.items()}
        for row in selection.rows
    ]
    payload = {
        "j_star": selection.j_star,
        "criterion": selection.criterion,
        "rows": rows,
    }
    with open(outdir / "selection.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    _write_manifest(outdir, "select-order", argv, None, ["selection.json"], t0)
    return EXIT_OK


def _cmd_table1(args, argv) -> int:
    t0 = time.time()
    result = simlab.run_table1(
        replications=args.reps,
        n=args.n,
        order=args.order,
        seed=args.seed,
        workers=_workers(args.workers),
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    header = ["estimator", "parameter", "mean", "n_var", "n_mse", "n_avar"]
    simlab.write_csv(outdir / "table1.csv", header, result.rows)
    _write_manifest(outdir, "simulate-table1", argv, args.seed, ["table1.csv"], t0)
    if result.failures:
        print(f"excluded {result.failures} failed replications", file=sys.stderr)
    return EXIT_OK


def _cmd_table2(args, argv) -> int:
    t0 = time.time()
    grid = [int(j) for j in parse_grid(args.j_grid)]
    result = simlab.run_table2(
        j_grid=grid,
        replications=args.reps,
        n=args.n,
        seed=args.seed,
        workers=_workers(args.workers),
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    header = [
        "order", "k", "mean_mu1", "mean_mu2", "n_var_mu1", "n_var_mu2",
        "n_mse_mu1", "n_mse_mu2", "sum_mse", "loglik", "aic", "bic",
    ]
    simlab.write_csv(outdir / "table2.csv", header, result["rows"])
    selection_rows = [
        {
            "order": j,
            "aic_selected": result["aic_selected"][j],
            "bic_selected": result["bic_selected"][j],
        }
        for j in grid
    ]
    simlab.write_csv(
        outdir / "table2_selection.csv",
        ["order", "aic_selected", "bic_selected"],
        selection_rows,
    )
    # wall-clock column kept out of the deterministic outputs
    simlab.write_csv(
        outdir / "table2_runtime.csv",
        ["order", "mean_seconds_per_fit"],
        result["runtime"],
    )
    _write_manifest(
        outdir, "simulate-table2", argv, args.seed,
        ["table2.csv", "table2_selection.csv"], t0,
    )
    return EXIT_OK


def _cmd_are_curve(args, argv) -> int:
    t0 = time.time()
    texts = args.marginal or ["exponential:0.5", "exponential:1.0"]
    marginals = tuple(parse_marginal(text) for text in texts)
    result = simlab.run_are_curve(
        args.family,
        marginals,
        parse_grid(args.rho),
        n_large=args.n,
        frequencies=args.frequencies,
        seed=args.seed,
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    simlab.write_csv(
        outdir / "are_curve.csv", ["rho", "estimator", "parameter", "are"], result["rows"]
    )
    _write_manifest(outdir, "are-curve", argv, args.seed, ["are_curve.csv"], t0)
    for skip in result["skipped"]:
        print(f"skipped rho={skip['rho']}: {skip['reason']}", file=sys.stderr)
    return EXIT_OK


def _cmd_are_3d(args, argv) -> int:
    t0 = time.time()
    result = simlab.run_are_3d(
        parse_grid(args.rho12),
        rho23=args.rho23,
        n_large=args.n,
        frequencies=args.frequencies,
        seed=args.seed,
        chat_order=args.chat_order,
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    simlab.write_csv(
        outdir / "are3d.csv", ["rho12", "rho23", "parameter", "are"], result["rows"]
    )
    _write_manifest(outdir, "are-3d", argv, args.seed, ["are3d.csv"], t0)
    for skip in result["skipped"]:
        print(f"skipped rho12={skip['rho12']}: {skip['reason']}", file=sys.stderr)
    return EXIT_OK


def _cmd_var_backtest(args, argv) -> int:
    t0 = time.time()
    daily = riskapp.ingest_daily(args.data)
    ws = riskapp.weekly_features(daily)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    series = {}
    for method in methods:
        series[method] = riskapp.rolling_fit_var(
            ws,
            method=method,
            companion=args.companion,
            window=args.window,
            alpha=args.alpha,
            order=args.jn,
            threshold=args.threshold,
            steepness=args.a,
        )
    all_rows = []
    for method in methods:
        all_rows.extend(series[method].to_rows())
    simlab.write_csv(outdir / "var_series.csv", list(riskapp.VarSeries.HEADER), all_rows)

    comparisons = []
    for i in range(len(methods)):
        for j in range(i + 1, len(methods)):
            sa, sb = series[methods[i]].scores(), series[methods[j]].scores()
            keep = np.isfinite(sa) & np.isfinite(sb)
            if keep.sum() >= 2 * args.jack_d:
                comparisons.append(
                    riskapp.compare_scores(
                        sa[keep], sb[keep], args.jack_d,
                        method_a=methods[i], method_b=methods[j],
                    ).to_dict()
                )
    payload = {
        "alpha": args.alpha,
        "window": args.window,
        "exceedance_rates": {m: series[m].exceedance_rate() for m in methods},
        "failures": {m: series[m].failures for m in methods},
        "comparisons": comparisons,
    }
    with open(outdir / "score_comparison.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    _write_manifest(
        outdir, "var-backtest", argv, None,
        ["var_series.csv", "score_comparison.json"], t0,
    )
    return EXIT_OK


# --- parser ----------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sievemle",
        description="Copula sieve maximum likelihood: fits, simulations, VaR backtests.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_out(p):
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="fit one dataset by qmle, fmle, or smle")
    p.add_argument("--data", required=True, help="numeric CSV with a header row")
    p.add_argument("--method", choices=["qmle", "fmle", "smle"], required=True)
    p.add_argument("--marginal", action="append", required=True,
                   help="family:p1,p2 (repeat per column)")
    p.add_argument("--copula", help="family:p1,... starting copula for fmle")
    p.add_argument("--order", type=int, default=9, help="sieve order for smle")
    add_out(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("select-order", help="sieve order sweep with AIC or BIC")
    p.add_argument("--data", required=True)
    p.add_argument("--marginal", action="append", required=True)
    p.add_argument("--j-grid", default="2:12:1")
    p.add_argument("--criterion", choices=["aic", "bic"], default="aic")
    add_out(p)
    p.set_defaults(func=_cmd_select_order)

    p = sub.add_parser("simulate-table1", help="five-estimator replication study")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--order", type=int, default=9)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=None)
    add_out(p)
    p.set_defaults(func=_cmd_table1)

    p = sub.add_parser("simulate-table2", help="sieve order sweep study")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--j-grid", default="2:15:1")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=None)
    add_out(p)
    p.set_defaults(func=_cmd_table2)

    p = sub.add_parser("are-curve", help="efficiency-vs-dependence sweep")
    p.add_argument("--family", required=True,
                   help="gaussian | student_t | clayton | clayton_rot90 | plackett | frank")
    p.add_argument("--rho", default="-0.8:0.8:0.1", help="Spearman grid lo:hi:step")
    p.add_argument("--marginal", action="append",
                   default=None, help="family:p1,p2 (twice); default exp(0.5), exp(1)")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--frequencies", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    add_out(p)
    p.set_defaults(func=_cmd_are_curve)

    p = sub.add_parser("are-3d", help="trivariate efficiency sweep")
    p.add_argument("--rho12", default="-0.6:0.6:0.1", help="rho12=rho13 grid")
    p.add_argument("--rho23", type=float, default=0.5)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--frequencies", type=int, default=10)
    p.add_argument("--chat-order", type=int, default=None,
                   help="fit the score-assembly copula as a sieve of this order")
    p.add_argument("--seed", type=int, required=True)
    add_out(p)
    p.set_defaults(func=_cmd_are_3d)

    p = sub.add_parser("var-backtest", help="rolling VaR pipeline on a daily CSV")
    p.add_argument("--data", required=True, help="daily date,adj_close,volume CSV")
    p.add_argument("--methods", default="qmle,fmle_t,smle")
    p.add_argument("--companion", choices=list(riskapp.COMPANIONS), default="volume")
    p.add_argument("--window", type=int, default=156)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--jn", type=int, default=5)
    p.add_argument("--a", type=float, default=30.0, help="weight steepness")
    p.add_argument("--threshold", type=float, default=None,
                   help="score threshold; default in-sample 5th percentile of R")
    p.add_argument("--jack-d", type=int, default=10)
    add_out(p)
    p.set_defaults(func=_cmd_var_backtest)

    return parser


def dispatch(argv) -> int:
    argv = list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args, argv)
    except _DATA_ERRORS as exc:
        _report(exc)
        return EXIT_DATA
    except _NUMERICAL_ERRORS as exc:
        _report(exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        _report(exc)
        return EXIT_USAGE


def _report(exc: Exception) -> None:
    record = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
