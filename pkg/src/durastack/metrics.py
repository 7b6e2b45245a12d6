"""Error metrics, calibration, pooling rules, and report emission.

All metrics run on the log scale. Cluster reports combine the m
imputation streams with Rubin's rules (within-variance from analytic
calibration standard errors, or squared bootstrap standard errors for
RMSE/MAE), then pool clusters into the overall row with a
DerSimonian-Laird random-effects model, whose heterogeneity-aware
intervals are wider than any single cluster's when clusters disagree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import MetricError
from .schema import ClusterKey
from .seeds import child_rng

Z95 = 1.96
DEFAULT_BOOTSTRAP = 1000


@dataclass(frozen=True)
class MetricEstimate:
    """Point estimate with a 95% interval and the method that made it."""

    value: float
    ci_low: float
    ci_high: float
    method: str

    def __post_init__(self):
        if not (self.ci_low <= self.value <= self.ci_high):
            raise MetricError(
                f"interval [{self.ci_low}, {self.ci_high}] does not cover "
                f"the estimate {self.value}"
            )

    @property
    def variance(self) -> float:
        half = (self.ci_high - self.ci_low) / 2.0
        return (half / Z95) ** 2

    def to_json(self) -> dict:
        return {"value": self.value, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "method": self.method}

    @classmethod
    def from_json(cls, doc: dict) -> "MetricEstimate":
        return cls(doc["value"], doc["ci_low"], doc["ci_high"], doc["method"])


def _estimate(value: float, variance: float, method: str) -> MetricEstimate:
    half = Z95 * float(np.sqrt(variance))
    return MetricEstimate(value, value - half, value + half, method)


def _check_pair(y: np.ndarray, yhat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise MetricError("observed and predicted vectors must align")
    if len(y) == 0:
        raise MetricError("metrics need at least one observation")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yhat))):
        raise MetricError("metrics need finite inputs")
    return y, yhat


def error_metrics(y: np.ndarray, yhat: np.ndarray) -> dict[str, float]:
    y, yhat = _check_pair(y, yhat)
    resid = y - yhat
    return {
        "rmse": float(np.sqrt(np.mean(resid ** 2))),
        "mae": float(np.mean(np.abs(resid))),
    }


def _ols_line(y: np.ndarray, yhat: np.ndarray):
    """Slope/intercept of y on yhat plus analytic variances and R^2."""
    n = len(y)
    xbar = float(yhat.mean())
    ybar = float(y.mean())
    sxx = float(np.sum((yhat - xbar) ** 2))
    if sxx <= 0.0:
        raise MetricError("calibration slope undefined for constant predictions")
    sxy = float(np.sum((yhat - xbar) * (y - ybar)))
    slope = sxy / sxx
    intercept = ybar - slope * xbar
    resid = y - intercept - slope * yhat
    rss = float(np.sum(resid ** 2))
    tss = float(np.sum((y - ybar) ** 2))
    r2 = 1.0 if tss == 0.0 else 1.0 - rss / tss
    if n > 2:
        s2 = rss / (n - 2)
        var_slope = s2 / sxx
        var_intercept = s2 * (1.0 / n + xbar ** 2 / sxx)
    else:
        var_slope = var_intercept = 0.0
    return intercept, slope, var_intercept, var_slope, r2


def calibration(y: np.ndarray, yhat: np.ndarray) -> dict[str, MetricEstimate]:
    """Observed-on-predicted regression; ideal intercept 0 and slope 1."""
    y, yhat = _check_pair(y, yhat)
    if len(y) < 3:
        raise MetricError("calibration needs at least 3 observations")
    intercept, slope, var_i, var_s, _ = _ols_line(y, yhat)
    return {
        "intercept": _estimate(intercept, var_i, "analytic"),
        "slope": _estimate(slope, var_s, "analytic"),
    }


def adjusted_r2(y: np.ndarray, yhat: np.ndarray, p: int = 1) -> float:
    y, yhat = _check_pair(y, yhat)
    n = len(y)
    if n <= p + 1:
        raise MetricError(f"adjusted R^2 needs n > p+1 (n={n}, p={p})")
    _, _, _, _, r2 = _ols_line(y, yhat)
    return 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)


def rubin_pool(estimates: Sequence[float],
               within_var: Sequence[float]) -> MetricEstimate:
    """Rubin's rules: T = mean within-variance + (1+1/m) between-variance."""
    est = np.asarray(estimates, dtype=np.float64)
    wv = np.asarray(within_var, dtype=np.float64)
    if len(est) < 1 or len(est) != len(wv):
        raise MetricError("rubin_pool needs aligned non-empty inputs")
    if np.any(wv < 0):
        raise MetricError("within-imputation variances must be nonnegative")
    m = len(est)
    point = float(est.mean())
    w_bar = float(wv.mean())
    b = float(est.var(ddof=1)) if m > 1 else 0.0
    total = w_bar + (1.0 + 1.0 / m) * b
    return _estimate(point, total, "rubin")


def pool_clusters(rows: Sequence[MetricEstimate]) -> MetricEstimate:
    """DerSimonian-Laird random-effects pooling across clusters."""
    if len(rows) < 2:
        raise MetricError("random-effects pooling needs at least 2 clusters")
    y = np.array([r.value for r in rows])
    v = np.array([r.variance for r in rows])
    if np.any(v <= 0):
        raise MetricError("random-effects pooling needs positive variances")
    w = 1.0 / v
    fixed = float(np.sum(w * y) / np.sum(w))
    q = float(np.sum(w * (y - fixed) ** 2))
    df = len(rows) - 1
    c = float(np.sum(w) - np.sum(w ** 2) / np.sum(w))
    tau2 = max(0.0, (q - df) / c)
    w_star = 1.0 / (v + tau2)
    pooled = float(np.sum(w_star * y) / np.sum(w_star))
    var = 1.0 / float(np.sum(w_star))
    return _estimate(pooled, var, "random_effects")


def bootstrap_replicates(statistic: Callable[[np.ndarray], float], n: int,
                         B: int, seed: int) -> np.ndarray:
    """Statistic over B resampled index vectors, per-replicate seeds."""
    if B < 100:
        raise MetricError("bootstrap needs at least 100 replicates")
    out = np.empty(B)
    for b in range(B):
        idx = child_rng(seed, "boot", b).integers(0, n, size=n)
        out[b] = statistic(idx)
    return out


def bootstrap_ci(statistic: Callable[[np.ndarray], float], n: int, B: int,
                 seed: int) -> tuple[float, float]:
    """Percentile bootstrap interval (2.5 and 97.5 percentiles)."""
    reps = bootstrap_replicates(statistic, n, B, seed)
    lo, hi = np.percentile(reps, [2.5, 97.5])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Cluster reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterRow:
    cluster: str
    n: int
    rmse: MetricEstimate
    mae: MetricEstimate
    intercept: MetricEstimate
    slope: MetricEstimate

    def to_json(self) -> dict:
        return {
            "cluster": self.cluster,
            "n": self.n,
            "rmse": self.rmse.to_json(),
            "mae": self.mae.to_json(),
            "intercept": self.intercept.to_json(),
            "slope": self.slope.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ClusterRow":
        return cls(
            cluster=doc["cluster"],
            n=int(doc["n"]),
            rmse=MetricEstimate.from_json(doc["rmse"]),
            mae=MetricEstimate.from_json(doc["mae"]),
            intercept=MetricEstimate.from_json(doc["intercept"]),
            slope=MetricEstimate.from_json(doc["slope"]),
        )


@dataclass(frozen=True)
class MetricReport:
    rows: tuple[ClusterRow, ...]
    overall: ClusterRow
    context: str

    def to_json(self) -> dict:
        return {
            "context": self.context,
            "rows": [r.to_json() for r in self.rows],
            "overall": self.overall.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MetricReport":
        return cls(
            rows=tuple(ClusterRow.from_json(r) for r in doc["rows"]),
            overall=ClusterRow.from_json(doc["overall"]),
            context=doc["context"],
        )


def _cluster_estimates(y: np.ndarray, preds: np.ndarray, label: str,
                       B: int, seed: int) -> ClusterRow:
    """Rubin-pooled metrics for one cluster over m imputation streams."""
    m, n = preds.shape
    if n == 0:
        raise MetricError(f"cluster {label} has no rows")
    rmse_e, rmse_v, mae_e, mae_v = [], [], [], []
    int_e, int_v, slope_e, slope_v = [], [], [], []
    for j in range(m):
        resid = y - preds[j]
        rmse_e.append(float(np.sqrt(np.mean(resid ** 2))))
        mae_e.append(float(np.mean(np.abs(resid))))
        rmse_reps = np.empty(B)
        mae_reps = np.empty(B)
        for b in range(B):
            idx = child_rng(seed, "boot", label, j, b).integers(0, n, size=n)
            r = resid[idx]
            rmse_reps[b] = np.sqrt(np.mean(r ** 2))
            mae_reps[b] = np.mean(np.abs(r))
        rmse_v.append(float(rmse_reps.var(ddof=1)))
        mae_v.append(float(mae_reps.var(ddof=1)))
        intercept, slope, var_i, var_s, _ = _ols_line(y, preds[j])
        int_e.append(intercept)
        int_v.append(var_i)
        slope_e.append(slope)
        slope_v.append(var_s)
    return ClusterRow(
        cluster=label,
        n=n,
        rmse=rubin_pool(rmse_e, rmse_v),
        mae=rubin_pool(mae_e, mae_v),
        intercept=rubin_pool(int_e, int_v),
        slope=rubin_pool(slope_e, slope_v),
    )


def cluster_report(y: np.ndarray, yhat_per_imp: np.ndarray,
                   clusters: Sequence[ClusterKey], context: str, seed: int,
                   B: int = DEFAULT_BOOTSTRAP) -> MetricReport:
    """Per-cluster rows plus a random-effects overall row.

    yhat_per_imp has shape (m, n): one prediction vector per imputation
    stream, aligned with y and clusters.
    """
    y = np.asarray(y, dtype=np.float64)
    preds = np.asarray(yhat_per_imp, dtype=np.float64)
    if preds.ndim != 2 or preds.shape[1] != len(y):
        raise MetricError("prediction matrix must be m x n aligned with y")
    if len(clusters) != len(y):
        raise MetricError("cluster labels must align with y")
    labels = np.array([c.label() for c in clusters])
    ordered = sorted(set(clusters))
    rows = []
    for cluster in ordered:
        sel = labels == cluster.label()
        rows.append(_cluster_estimates(
            y[sel], preds[:, sel], cluster.label(), B, seed,
        ))
    if len(rows) == 1:
        only = rows[0]
        overall = ClusterRow(cluster="Overall", n=only.n, rmse=only.rmse,
                             mae=only.mae, intercept=only.intercept,
                             slope=only.slope)
    else:
        overall = ClusterRow(
            cluster="Overall",
            n=int(sum(r.n for r in rows)),
            rmse=pool_clusters([r.rmse for r in rows]),
            mae=pool_clusters([r.mae for r in rows]),
            intercept=pool_clusters([r.intercept for r in rows]),
            slope=pool_clusters([r.slope for r in rows]),
        )
    return MetricReport(rows=tuple(rows), overall=overall, context=context)


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

REPORT_HEADER = ("cluster,n,rmse,rmse_lo,rmse_hi,mae,mae_lo,mae_hi,"
                 "cal_intercept,ci_lo,ci_hi,cal_slope,ci_lo,ci_hi")


def _fmt(v: float) -> str:
    return repr(float(v))


def report_csv_text(report: MetricReport) -> str:
    lines = [REPORT_HEADER]
    for row in list(report.rows) + [report.overall]:
        cells = [row.cluster, str(row.n)]
        for est in (row.rmse, row.mae, row.intercept, row.slope):
            cells.extend([_fmt(est.value), _fmt(est.ci_low), _fmt(est.ci_high)])
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def decile_table(y: np.ndarray, yhat: np.ndarray) -> list[dict]:
    """Ten equal-frequency bins of predicted value: mean pred vs observed."""
    y, yhat = _check_pair(y, yhat)
    if len(y) < 10:
        raise MetricError("decile table needs at least 10 observations")
    order = np.argsort(yhat, kind="stable")
    rows = []
    for i, chunk in enumerate(np.array_split(order, 10)):
        rows.append({
            "decile": i + 1,
            "n": int(len(chunk)),
            "mean_predicted": float(yhat[chunk].mean()),
            "mean_observed": float(y[chunk].mean()),
        })
    return rows


def scatter_sample(y: np.ndarray, yhat: np.ndarray, seed: int,
                   cap: int = 5000) -> list[tuple[float, float]]:
    """Deterministic row sample for the calibration scatter, capped."""
    y, yhat = _check_pair(y, yhat)
    n = len(y)
    if n <= cap:
        idx = np.arange(n)
    else:
        idx = np.sort(child_rng(seed, "scatter").choice(n, size=cap,
                                                        replace=False))
    return [(float(yhat[i]), float(y[i])) for i in idx]


def emit_report(report: MetricReport, stem: str, plots: bool = False,
                pairs: Optional[tuple[np.ndarray, np.ndarray]] = None,
                seed: int = 0) -> list[str]:
    """Write <stem>.csv and <stem>.json; with plots, the figure data too.

    Returns the list of paths written. Plot emission needs the raw
    (observed, predicted) pairs for deciles and scatter.
    """
    from .fsutil import atomic_write_text

    written = []
    csv_path = f"{stem}.csv"
    atomic_write_text(csv_path, report_csv_text(report))
    written.append(csv_path)
    json_path = f"{stem}.json"
    atomic_write_text(json_path,
                      json.dumps(report.to_json(), indent=2) + "\n")
    written.append(json_path)
    if plots:
        rmse_path = f"{stem}_cluster_rmse.csv"
        lines = ["cluster,rmse,ci_lo,ci_hi"]
        for row in report.rows:
            lines.append(",".join([
                row.cluster, _fmt(row.rmse.value),
                _fmt(row.rmse.ci_low), _fmt(row.rmse.ci_high),
            ]))
        atomic_write_text(rmse_path, "\n".join(lines) + "\n")
        written.append(rmse_path)
        if pairs is not None:
            y, yhat = pairs
            dec_path = f"{stem}_calibration_deciles.csv"
            lines = ["decile,n,mean_predicted,mean_observed"]
            for row in decile_table(y, yhat):
                lines.append(",".join([
                    str(row["decile"]), str(row["n"]),
                    _fmt(row["mean_predicted"]), _fmt(row["mean_observed"]),
                ]))
            atomic_write_text(dec_path, "\n".join(lines) + "\n")
            written.append(dec_path)
            sc_path = f"{stem}_calibration_scatter.csv"
            lines = ["predicted_log,observed_log"]
            for px, oy in scatter_sample(y, yhat, seed):
                lines.append(f"{_fmt(px)},{_fmt(oy)}")
            atomic_write_text(sc_path, "\n".join(lines) + "\n")
            written.append(sc_path)
    return written
