"""Monte Carlo harness: DGP sampling, estimator sweeps, efficiency curves.

Replications are embarrassingly parallel; every replication draws its seed
from a splittable SeedSequence keyed on (master seed, replication index), so
results are byte-identical whatever the worker count. Aggregation is a
single-threaded reduction over replication-indexed outputs.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import avar
from .copulas import (
    ClaytonRotated90,
    Copula,
    GaussianCopula,
    PlackettCopula,
    calibrate_to_spearman,
)
from .estimate import (
    FitResult,
    IndependenceAssumed,
    JointModelSpec,
    ParametricDependence,
    SieveDependence,
    fit_fmle,
    fit_qmle,
    fit_sieve_density,
    fit_smle,
    pseudo_observations,
)
from .exceptions import ConvergenceError, DataError, RangeError
from .marginals import Exponential, Marginal
from .sieve import free_parameter_count

__all__ = [
    "DgpSpec",
    "ExperimentResult",
    "generate",
    "run_table1",
    "run_table2",
    "run_are_curve",
    "run_are_3d",
    "write_csv",
    "TABLE1_ESTIMATORS",
]

# Table 1 design: Plackett gamma=0.05 over exp(0.5) x exp(1).
_T1_COPULA = PlackettCopula(0.05)
_T1_MARGINALS = (Exponential(0.5), Exponential(1.0))
TABLE1_ESTIMATORS = ("fmle", "smle", "qmle", "pmle_gaussian", "pmle_clayton90")


@dataclass(frozen=True)
class DgpSpec:
    """True marginals plus copula; the sampling side of the experiment."""

    marginals: tuple[Marginal, ...]
    copula: Copula
    n: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        dim = getattr(self.copula, "dim", len(self.marginals))
        if dim != len(self.marginals):
            raise DataError(
                f"copula dimension {dim} != number of marginals {len(self.marginals)}"
            )
        if self.n < 1:
            raise DataError("sample size must be positive")


def generate(dgp: DgpSpec) -> np.ndarray:
    """Draw u from the copula and push through the marginal quantiles."""
    u = dgp.copula.sample(dgp.n, seed=dgp.seed)
    return np.column_stack(
        [dgp.marginals[j].quantile(u[:, j]) for j in range(len(dgp.marginals))]
    )


def _rep_seed(master: int, rep: int) -> int:
    # splittable counter-based stream: one child sequence per replication
    seq = np.random.SeedSequence(entropy=master, spawn_key=(rep,))
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass
class ExperimentResult:
    """Per-estimator, per-parameter aggregates of a replication sweep."""

    estimators: tuple[str, ...]
    parameters: tuple[str, ...]
    rows: list[dict]
    replications: int
    failures: int
    n: int
    metadata: dict = field(default_factory=dict)

    def cell(self, estimator: str, parameter: str) -> dict:
        for row in self.rows:
            if row["estimator"] == estimator and row["parameter"] == parameter:
                return row
        raise KeyError(f"no cell ({estimator}, {parameter})")


def _aggregate(estimators, parameters, betas, avars, truth, n, failures, metadata):
    # Var with ddof=0 so n_mse == n_var + n x bias^2 holds as an identity
    rows = []
    for est in estimators:
        b = np.asarray(betas[est])
        a = np.asarray(avars[est])
        reps = b.shape[0]
        for k, name in enumerate(parameters):
            mean = float(np.mean(b[:, k]))
            bias = mean - truth[k]
            row = {
                "estimator": est,
                "parameter": name,
                "mean": mean,
                "n_var": float(n * np.var(b[:, k])) if reps > 1 else None,
                "n_mse": float(n * np.mean((b[:, k] - truth[k]) ** 2)),
                "n_avar": float(np.mean(a[:, k])),
                "bias": float(bias),
            }
            rows.append(row)
    return ExperimentResult(
        estimators=tuple(estimators),
        parameters=tuple(parameters),
        rows=rows,
        replications=len(next(iter(betas.values()))),
        failures=failures,
        n=n,
        metadata=metadata,
    )


def _table1_rep(args):
    master, rep, n, order, avar_frequencies = args
    data = generate(DgpSpec(_T1_MARGINALS, _T1_COPULA, n, _rep_seed(master, rep)))
    out = {"rep": rep, "ok": True, "beta": {}, "avar": {}}
    try:
        qfit = fit_qmle(data, JointModelSpec(_T1_MARGINALS, IndependenceAssumed()))
        out["beta"]["qmle"] = qfit.beta_hat
        out["avar"]["qmle"] = np.diag(avar.qmle_avar(qfit))

        for key, copula in (
            ("fmle", PlackettCopula(1.0)),
            ("pmle_gaussian", GaussianCopula(0.0)),
            ("pmle_clayton90", ClaytonRotated90(1.0)),
        ):
            fit = fit_fmle(data, JointModelSpec(_T1_MARGINALS, ParametricDependence(copula)))
            out["beta"][key] = fit.beta_hat[:2]
            out["avar"][key] = np.diag(avar.parametric_avar(fit, data))[:2]

        sfit = fit_smle(data, JointModelSpec(_T1_MARGINALS, SieveDependence(order)))
        gstar = avar.fit_gstar(sfit, data, frequencies=avar_frequencies)
        out["beta"]["smle"] = sfit.beta_hat
        out["avar"]["smle"] = np.diag(avar.asymptotic_covariance(sfit, data, gstar=gstar))
    except Exception as exc:  # noqa: BLE001  - any single-rep failure is excluded and counted
        return {"rep": rep, "ok": False, "error": f"{type(exc).__name__}: {exc}"}
    return out


def _run_reps(worker, tasks, workers):
    if workers <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, tasks))


def _collect(results, estimators, replications, failure_cap):
    failures = [r for r in results if not r["ok"]]
    if len(failures) > failure_cap * replications:
        detail = "; ".join(f"rep {r['rep']}: {r['error']}" for r in failures[:5])
        raise ConvergenceError(
            f"{len(failures)}/{replications} replications failed "
            f"(cap {failure_cap:.0%}): {detail}"
        )
    good = [r for r in results if r["ok"]]
    betas = {e: np.array([r["beta"][e] for r in good]) for e in estimators}
    avars = {e: np.array([r["avar"][e] for r in good]) for e in estimators}
    return betas, avars, len(failures)


def run_table1(
    replications: int = 200,
    n: int = 1000,
    order: int = 9,
    seed: int = 0,
    *,
    workers: int = 1,
    failure_cap: float = 0.02,
    avar_frequencies: int = 2,
) -> ExperimentResult:
    """FMLE / SMLE / QMLE / two misspecified PMLEs on the Plackett DGP.

    avar_frequencies controls the projection sieve in the per-replication
    efficient-score variance; it must stay small relative to n or the
    projection overfits and the reported variance inflates.
    """
    tasks = [(seed, rep, n, order, avar_frequencies) for rep in range(replications)]
    results = _run_reps(_table1_rep, tasks, workers)
    betas, avars, failed = _collect(results, TABLE1_ESTIMATORS, replications, failure_cap)
    truth = np.array([m.params[0] for m in _T1_MARGINALS])
    return _aggregate(
        TABLE1_ESTIMATORS,
        ("mu1", "mu2"),
        betas,
        avars,
        truth,
        n,
        failed,
        {"copula": "plackett", "gamma": 0.05, "order": order, "seed": seed},
    )


def _table2_rep(args):
    master, rep, n, j_grid = args
    data = generate(DgpSpec(_T1_MARGINALS, _T1_COPULA, n, _rep_seed(master, rep)))
    out = {"rep": rep, "ok": True, "fits": {}}
    try:
        for order in j_grid:
            t0 = time.perf_counter()
            fit = fit_smle(data, JointModelSpec(_T1_MARGINALS, SieveDependence(order)))
            out["fits"][order] = (fit.beta_hat, fit.loglik, time.perf_counter() - t0)
    except Exception as exc:  # noqa: BLE001
        return {"rep": rep, "ok": False, "error": f"{type(exc).__name__}: {exc}"}
    return out


def run_table2(
    j_grid=tuple(range(2, 16)),
    replications: int = 100,
    n: int = 1000,
    seed: int = 0,
    *,
    workers: int = 1,
    failure_cap: float = 0.02,
) -> dict:
    """SMLE order sweep: per-J means, variances, MSEs, loglik, AIC/BIC, runtime.

    Returns {"rows": [...], "runtime": [...], "failures": int}. Wall-clock
    lives in its own list so the statistical table stays machine-independent.
    """
    j_grid = tuple(int(j) for j in j_grid)
    if not j_grid or any(j < 2 for j in j_grid):
        raise DataError("j_grid must contain orders >= 2")
    tasks = [(seed, rep, n, j_grid) for rep in range(replications)]
    results = _run_reps(_table2_rep, tasks, workers)
    failures = [r for r in results if not r["ok"]]
    if len(failures) > failure_cap * replications:
        detail = "; ".join(f"rep {r['rep']}: {r['error']}" for r in failures[:5])
        raise ConvergenceError(
            f"{len(failures)}/{replications} replications failed "
            f"(cap {failure_cap:.0%}): {detail}"
        )
    good = [r for r in results if r["ok"]]
    truth = np.array([m.params[0] for m in _T1_MARGINALS])

    # per-replication criterion argmins, for the selection-frequency summary
    aic_selected = {j: 0 for j in j_grid}
    bic_selected = {j: 0 for j in j_grid}
    for r in good:
        ks = np.array([free_parameter_count(j, 2) + 2 for j in j_grid], dtype=float)
        logls = np.array([r["fits"][j][1] for j in j_grid])
        aic_selected[j_grid[int(np.argmin(2.0 * ks - 2.0 * logls))]] += 1
        bic_selected[j_grid[int(np.argmin(ks * np.log(n) - 2.0 * logls))]] += 1

    rows, runtime = [], []
    for order in j_grid:
        b = np.array([r["fits"][order][0] for r in good])
        logl = float(np.mean([r["fits"][order][1] for r in good]))
        secs = float(np.mean([r["fits"][order][2] for r in good]))
        k = free_parameter_count(order, 2) + 2
        n_mse = n * np.mean((b - truth) ** 2, axis=0)
        rows.append(
            {
                "order": order,
                "k": k,
                "mean_mu1": float(np.mean(b[:, 0])),
                "mean_mu2": float(np.mean(b[:, 1])),
                "n_var_mu1": float(n * np.var(b[:, 0])),
                "n_var_mu2": float(n * np.var(b[:, 1])),
                "n_mse_mu1": float(n_mse[0]),
                "n_mse_mu2": float(n_mse[1]),
                "sum_mse": float(n_mse.sum()),
                "loglik": logl,
                "aic": 2.0 * k - 2.0 * logl,
                "bic": k * float(np.log(n)) - 2.0 * logl,
            }
        )
        runtime.append({"order": order, "mean_seconds_per_fit": secs})
    return {
        "rows": rows,
        "runtime": runtime,
        "failures": len(failures),
        "aic_selected": aic_selected,
        "bic_selected": bic_selected,
    }


def _smle_avar_diag(qfit: FitResult, chat, data: np.ndarray, frequencies: int) -> np.ndarray:
    # scores assembled at the QMLE beta with the supplied copula density
    pseudo = replace(qfit, dependence_hat=chat)
    gstar = avar.fit_gstar(pseudo, data, frequencies=frequencies)
    return np.diag(avar.asymptotic_covariance(pseudo, data, gstar=gstar))


def run_are_curve(
    family: str,
    marginal_pair: tuple[Marginal, Marginal],
    rho_grid,
    n_large: int = 100_000,
    frequencies: int = 10,
    *,
    seed: int = 0,
) -> dict:
    """FMLE and SMLE asymptotic efficiency relative to QMLE over a rho sweep.

    One large sample per grid point; the copula density entering the scores
    is the calibrated DGP copula, the betas are the QMLE fit.
    Returns {"rows": [(rho, estimator, parameter, are)...], "skipped": [...]}.
    """
    marginal_pair = tuple(marginal_pair)
    rows, skipped = [], []
    for g, rho in enumerate(rho_grid):
        rho = float(rho)
        try:
            copula = calibrate_to_spearman(family, rho)
        except RangeError as exc:
            skipped.append({"rho": rho, "reason": str(exc)})
            continue
        data = generate(
            DgpSpec(marginal_pair, copula, int(n_large), _rep_seed(seed, g))
        )
        qfit = fit_qmle(data, JointModelSpec(marginal_pair, IndependenceAssumed()))
        qdiag = np.diag(avar.qmle_avar(qfit))

        ffit = fit_fmle(
            data, JointModelSpec(marginal_pair, ParametricDependence(copula))
        )
        fdiag = np.diag(avar.parametric_avar(ffit, data))[: len(qdiag)]
        sdiag = _smle_avar_diag(qfit, copula, data, frequencies)

        for k in range(len(qdiag)):
            pname = f"m{k + 1}.{qfit.beta_names[k].split('.', 1)[1]}"
            rows.append({"rho": rho, "estimator": "fmle", "parameter": pname,
                         "are": float(fdiag[k] / qdiag[k])})
            rows.append({"rho": rho, "estimator": "smle", "parameter": pname,
                         "are": float(sdiag[k] / qdiag[k])})
    return {"rows": rows, "skipped": skipped}


_ARE3D_MARGINALS = (Exponential(0.1), Exponential(0.5), Exponential(1.0))


def run_are_3d(
    rho12_13_grid,
    rho23: float = 0.5,
    n_large: int = 100_000,
    frequencies: int = 10,
    *,
    seed: int = 0,
    chat_order: int | None = None,
) -> dict:
    """SMLE vs QMLE efficiency for the trivariate Gaussian-copula design.

    rho12 = rho13 sweeps the grid with rho23 held fixed; grid points whose
    implied correlation matrix is not positive definite are skipped with a
    report. chat_order switches the score-assembly copula from the DGP
    copula (None) to a Bernstein sieve of that order fitted to the sample.
    """
    rows, skipped = [], []
    for g, r in enumerate(rho12_13_grid):
        r = float(r)
        corr = np.array([[1.0, r, r], [r, 1.0, rho23], [r, rho23, 1.0]])
        if np.linalg.eigvalsh(corr)[0] <= 1e-12:
            skipped.append(
                {"rho12": r, "reason": "correlation matrix not positive definite"}
            )
            continue
        copula = GaussianCopula(corr)
        data = generate(
            DgpSpec(_ARE3D_MARGINALS, copula, int(n_large), _rep_seed(seed, g))
        )
        qfit = fit_qmle(data, JointModelSpec(_ARE3D_MARGINALS, IndependenceAssumed()))
        qdiag = np.diag(avar.qmle_avar(qfit))
        if chat_order is None:
            chat = copula
        else:
            uhat = pseudo_observations(qfit.marginals_hat, data)
            chat = fit_sieve_density(uhat, chat_order)
        sdiag = _smle_avar_diag(qfit, chat, data, frequencies)
        for k in range(3):
            rows.append(
                {
                    "rho12": r,
                    "rho23": float(rho23),
                    "parameter": f"mu{k + 1}",
                    "are": float(sdiag[k] / qdiag[k]),
                }
            )
    return {"rows": rows, "skipped": skipped}


def write_csv(path, header, rows) -> None:
    """Plain deterministic CSV: repr for floats, empty cell for None."""
    import csv

    def cell(value):
        if value is None:
            return ""
        if isinstance(value, float):
            return repr(value)
        return str(value)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([cell(row[h]) for h in header])
