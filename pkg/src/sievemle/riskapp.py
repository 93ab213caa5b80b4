"""Weekly Value-at-Risk pipeline: ingestion, features, rolling fits, scoring.

The chain is: daily close/volume CSV -> weekly log returns R, log
dollar-volume changes M, realized volatility V -> rolling-window joint fits
of (R, companion) by QMLE, t-copula FMLE, or SMLE -> VaR quantile forecasts,
exceedance accounting, censored-likelihood scores, and delete-d jackknife
score comparisons. Each window's fit is independent of the others; report
assembly is a sequential pass over the window index.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .copulas import StudentTCopula
from .estimate import (
    IndependenceAssumed,
    JointModelSpec,
    ParametricDependence,
    SieveDependence,
    fit_fmle,
    fit_qmle,
    fit_smle,
)
from .exceptions import ConvergenceError, DataError
from .marginals import Beta, Marginal, StudentT

__all__ = [
    "DailySeries",
    "WeeklySeries",
    "VarSeries",
    "ScoreComparison",
    "ingest_daily",
    "weekly_features",
    "rolling_fit_var",
    "censored_score",
    "compare_scores",
    "METHODS",
    "COMPANIONS",
]

METHODS = ("qmle", "fmle_t", "smle")
COMPANIONS = ("volume", "volatility", "both")

_HEADER = ("date", "adj_close", "volume")


@dataclass(frozen=True)
class DailySeries:
    """Parsed, date-sorted daily closes and share volumes."""

    dates: tuple[_dt.date, ...]
    close: np.ndarray
    volume: np.ndarray

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class WeeklySeries:
    """Per-week return R, log dollar-volume change M, realized volatility V.

    v_ok marks weeks with at least two within-week daily returns; weeks
    failing that are excluded from any volatility-based model.
    """

    week_end: tuple[_dt.date, ...]
    r: np.ndarray
    m: np.ndarray
    v: np.ndarray
    v_ok: np.ndarray

    def __post_init__(self):
        n = len(self.week_end)
        for name in ("r", "m", "v", "v_ok"):
            arr = np.asarray(getattr(self, name))
            object.__setattr__(self, name, arr)
            if arr.shape != (n,):
                raise DataError(f"{name} must have one entry per week")
        if any(b >= a for a, b in zip(self.week_end[1:], self.week_end[:-1])):
            raise DataError("week_end dates must be strictly increasing")
        if np.any(self.v[self.v_ok.astype(bool)] < 0):
            raise DataError("realized volatility cannot be negative")

    def __len__(self) -> int:
        return len(self.week_end)


def ingest_daily(csv_path) -> DailySeries:
    """Read a `date,adj_close,volume` CSV into a sorted DailySeries.

    Every malformed row is reported with its line number; duplicate dates
    are an error (there is no meaningful way to pick a close among them).
    """
    import csv

    try:
        fh = open(csv_path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {csv_path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{csv_path}: empty file") from None
        if tuple(h.strip().lower() for h in header) != _HEADER:
            raise DataError(
                f"{csv_path}: header must be {','.join(_HEADER)}, got {','.join(header)}"
            )
        rows, problems, seen = [], [], {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                problems.append(f"line {lineno}: expected 3 fields, got {len(row)}")
                continue
            try:
                day = _dt.date.fromisoformat(row[0].strip())
                close = float(row[1])
                volume = float(row[2])
            except ValueError as exc:
                problems.append(f"line {lineno}: {exc}")
                continue
            if close <= 0:
                problems.append(f"line {lineno}: nonpositive price {close}")
                continue
            if volume < 0:
                problems.append(f"line {lineno}: negative volume {volume}")
                continue
            if day in seen:
                problems.append(
                    f"line {lineno}: duplicate date {day} (first on line {seen[day]})"
                )
                continue
            seen[day] = lineno
            rows.append((day, close, volume))
    if problems:
        shown = "; ".join(problems[:10])
        more = f" (+{len(problems) - 10} more)" if len(problems) > 10 else ""
        raise DataError(f"{csv_path}: {shown}{more}")
    if not rows:
        raise DataError(f"{csv_path}: no data rows after the header")
    rows.sort(key=lambda t: t[0])
    return DailySeries(
        dates=tuple(t[0] for t in rows),
        close=np.array([t[1] for t in rows]),
        volume=np.array([t[2] for t in rows]),
    )


def weekly_features(daily: DailySeries) -> WeeklySeries:
    """Aggregate daily records into the weekly (R, M, V) series.

    Weeks follow the ISO calendar. The weekly close anchors on Friday, or on
    the last trading day of the week when Friday is missing. A day's return
    belongs to the week of the later close, so V uses every return that
    settles inside the week. The first week only seeds the differences and
    produces no row.
    """
    n = len(daily)
    if n < 2:
        raise DataError("need at least two daily records")
    returns = np.concatenate([[np.nan], np.log(daily.close[1:] / daily.close[:-1])])

    weeks: dict[tuple[int, int], list[int]] = {}
    for i, day in enumerate(daily.dates):
        iso = day.isocalendar()
        weeks.setdefault((iso[0], iso[1]), []).append(i)
    keys = sorted(weeks)
    if len(keys) < 2:
        raise DataError("need at least two calendar weeks of data")

    anchors, dollars, vols, flags = [], [], [], []
    for key in keys:
        idx = weeks[key]
        fridays = [i for i in idx if daily.dates[i].weekday() == 4]
        anchor = fridays[-1] if fridays else idx[-1]
        anchors.append(anchor)
        dollar = float(np.sum(daily.volume[idx] * daily.close[idx]))
        if dollar <= 0:
            raise DataError(f"week ending {daily.dates[idx[-1]]}: zero dollar volume")
        dollars.append(dollar)
        rets = returns[idx]
        rets = rets[np.isfinite(rets)]
        ok = len(idx) >= 2 and rets.size >= 2
        vols.append(float(np.std(rets, ddof=1)) if ok else np.nan)
        flags.append(ok)

    anchors = np.array(anchors)
    dollars = np.array(dollars)
    r = np.log(daily.close[anchors[1:]] / daily.close[anchors[:-1]])
    m = np.log(dollars[1:] / dollars[:-1])
    return WeeklySeries(
        week_end=tuple(daily.dates[a] for a in anchors[1:]),
        r=r,
        m=m,
        v=np.array(vols[1:]),
        v_ok=np.array(flags[1:], dtype=bool),
    )


@dataclass
class VarSeries:
    """Rolling VaR forecasts with realized outcomes and censored scores."""

    method: str
    companion: str
    window: int
    alpha: float
    rows: list[dict] = field(default_factory=list)
    failures: int = 0

    HEADER = ("week_end", "method", "var", "realized", "exceed", "score")

    def to_rows(self) -> list[dict]:
        return [
            {
                "week_end": row["week_end"].isoformat(),
                "method": self.method,
                "var": row["var"],
                "realized": row["realized"],
                "exceed": row["exceed"],
                "score": row["score"],
            }
            for row in self.rows
        ]

    def exceedance_rate(self) -> float:
        flags = [row["exceed"] for row in self.rows if row["exceed"] is not None]
        if not flags:
            raise DataError("no evaluated weeks")
        return float(np.mean(flags))

    def scores(self) -> np.ndarray:
        return np.array(
            [np.nan if row["score"] is None else row["score"] for row in self.rows]
        )


def _moment_start_t(x: np.ndarray) -> StudentT:
    sd = float(np.std(x, ddof=1))
    if sd <= 0:
        raise ConvergenceError("degenerate sample: zero variance")
    return StudentT(float(np.mean(x)), sd, 10.0)


def _moment_start_beta(x: np.ndarray) -> Beta:
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1))
    # method of moments, clipped away from the boundary of the shape space
    scale = max(mean * (1.0 - mean) / max(var, 1e-12) - 1.0, 0.1)
    return Beta(max(mean * scale, 0.1), max((1.0 - mean) * scale, 0.1))


def _window_columns(ws: WeeklySeries, companion: str, lo: int, hi: int):
    """Assemble the fitting sample for weeks lo..hi-1 and the scale for V."""
    take = np.arange(lo, hi)
    if companion in ("volatility", "both"):
        take = take[ws.v_ok[lo:hi]]
        if take.size < 10:
            raise ConvergenceError("too few volatility-usable weeks in the window")
    cols = [ws.r[take]]
    if companion in ("volume", "both"):
        cols.append(ws.m[take])
    v_scale = None
    if companion in ("volatility", "both"):
        v_scale = float(np.max(ws.v[take])) * 1.05
        if v_scale <= 0:
            raise ConvergenceError("volatility column is identically zero")
        cols.append(np.clip(ws.v[take] / v_scale, 1e-10, 1.0 - 1e-10))
    return np.column_stack(cols), v_scale


def _fit_window(data: np.ndarray, method: str, companion: str, order: int, copula_params):
    # column layout is fixed by the companion choice: R, then M, then scaled V
    margins: list[Marginal] = [_moment_start_t(data[:, 0])]
    if companion in ("volume", "both"):
        margins.append(_moment_start_t(data[:, 1]))
    if companion in ("volatility", "both"):
        margins.append(_moment_start_beta(data[:, -1]))
    margins = tuple(margins)
    if method == "qmle" or data.shape[1] == 1:
        return fit_qmle(data, JointModelSpec(margins, IndependenceAssumed()))
    if method == "fmle_t":
        dim = data.shape[1]
        if copula_params is not None:
            copula = StudentTCopula(np.eye(dim), 10.0).with_params(copula_params)
            spec = JointModelSpec(margins, ParametricDependence(copula))
            return fit_fmle(data, spec, fix_dependence=True)
        spec = JointModelSpec(margins, ParametricDependence(StudentTCopula(np.eye(dim), 10.0)))
        return fit_fmle(data, spec)
    if method == "smle":
        return fit_smle(data, JointModelSpec(margins, SieveDependence(order)))
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def rolling_fit_var(
    ws: WeeklySeries,
    method: str = "qmle",
    companion: str = "volume",
    window: int = 156,
    alpha: float = 0.05,
    order: int = 5,
    *,
    copula_params=None,
    threshold: float | None = None,
    steepness: float = 30.0,
) -> VarSeries:
    """Fit each trailing window, forecast next week's VaR, score the outcome.

    The window ending at week t produces the VaR and censored score for the
    realized return of week t+1; rows are keyed by week t+1's date. Window
    fits that fail are carried as missing VaR entries and counted.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if companion not in COMPANIONS:
        raise ValueError(f"unknown companion {companion!r}; expected one of {COMPANIONS}")
    if not 0 < alpha < 1:
        raise DataError("alpha must lie in (0, 1)")
    if window < 10:
        raise DataError("window must cover at least 10 weeks")
    if window > len(ws) - 1:
        raise DataError(f"window {window} exceeds series length {len(ws)} - 1")
    y = float(np.quantile(ws.r, 0.05)) if threshold is None else float(threshold)

    out = VarSeries(method=method, companion=companion, window=window, alpha=alpha)
    for t in range(window - 1, len(ws) - 1):
        realized = float(ws.r[t + 1])
        row = {
            "week_end": ws.week_end[t + 1],
            "var": None,
            "realized": realized,
            "exceed": None,
            "score": None,
        }
        try:
            data, _ = _window_columns(ws, companion, t - window + 1, t + 1)
            fit = _fit_window(data, method, companion, order, copula_params)
            r_margin = fit.marginals_hat[0]
            var = float(r_margin.quantile(alpha))
            row["var"] = var
            row["exceed"] = int(realized < var)
            row["score"] = censored_score(r_margin, realized, y, steepness)
        except (ConvergenceError, DataError, np.linalg.LinAlgError):
            out.failures += 1
        out.rows.append(row)
    return out


def censored_score(margin: Marginal, realized: float, threshold: float, steepness: float = 30.0) -> float:
    """Censored likelihood score S = w(r) ln f(r) + (1 - w(r)) ln(1 - int w f).

    w(s) = 1/(1 + exp(a(y - s))) rises smoothly through 1/2 at the threshold
    y. The censored mass 1 - int w(s) f(s) ds is computed as int (1-w) f by
    adaptive quadrature split at the threshold. When w(r) reaches 1 in float
    (e.g. y = -inf), the score reduces to the plain log score exactly.
    """
    a = float(steepness)
    r = float(realized)
    y = float(threshold)
    wr = float(special.expit(a * (r - y)))
    logf = float(margin.log_pdf(r))
    if 1.0 - wr == 0.0:
        return logf

    lo, hi = margin.support

    def integrand(s):
        return margin.pdf(s) * special.expit(a * (y - s))

    pieces = []
    if lo < y < hi:
        pieces = [(lo, y), (y, hi)]
    else:
        pieces = [(lo, hi)]
    tail = 0.0
    for left, right in pieces:
        val, err, *extra = integrate.quad(
            integrand, left, right, epsabs=1e-8, limit=200, full_output=1
        )
        if len(extra) > 1:
            raise ConvergenceError(f"censored-mass quadrature failed: {extra[1]}")
        tail += val
    tail = min(max(tail, 1e-300), 1.0)
    return wr * logf + (1.0 - wr) * float(np.log(tail))


@dataclass(frozen=True)
class ScoreComparison:
    """Delete-d jackknife comparison of two aligned score series."""

    method_a: str
    method_b: str
    mean_difference: float
    jackknife_se: float
    t_ratio: float
    degenerate: bool
    n_used: int
    block_size: int

    def to_dict(self) -> dict:
        return {
            "method_a": self.method_a,
            "method_b": self.method_b,
            "mean_difference": self.mean_difference,
            "jackknife_se": self.jackknife_se,
            "t_ratio": self.t_ratio,
            "degenerate": self.degenerate,
            "n_used": self.n_used,
            "block_size": self.block_size,
        }


def compare_scores(
    scores_a, scores_b, d: int = 10, *, method_a: str = "a", method_b: str = "b"
) -> ScoreComparison:
    """Mean score difference with a delete-d jackknife standard error.

    Contiguous blocks of size d are deleted in turn (the last partial block
    is dropped from the calculation entirely); positive differences mean
    method_a scores higher. A zero jackknife variance is flagged as
    degenerate, with t = 0 when the mean difference is also zero.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("score series must be equal-length vectors")
    if np.any(~np.isfinite(a)) or np.any(~np.isfinite(b)):
        raise DataError("score series contain missing or non-finite entries")
    if d < 1:
        raise DataError("block size must be at least 1")
    groups = a.size // d
    if groups < 2:
        raise DataError(f"need at least 2 blocks of {d}; have {a.size} observations")
    n_used = groups * d
    diff = a[:n_used] - b[:n_used]
    mean_diff = float(np.mean(diff))

    total = diff.sum()
    block_sums = diff.reshape(groups, d).sum(axis=1)
    theta = (total - block_sums) / (n_used - d)
    variance = (n_used - d) / (d * groups) * float(np.sum((theta - theta.mean()) ** 2))
    se = float(np.sqrt(variance))
    degenerate = se == 0.0
    if degenerate:
        t_ratio = 0.0 if mean_diff == 0.0 else float(np.sign(mean_diff) * np.inf)
    else:
        t_ratio = mean_diff / se
    return ScoreComparison(
        method_a=method_a,
        method_b=method_b,
        mean_difference=mean_diff,
        jackknife_se=se,
        t_ratio=float(t_ratio),
        degenerate=degenerate,
        n_used=int(n_used),
        block_size=int(d),
    )
