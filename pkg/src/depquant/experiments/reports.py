"""Report containers, distribution diagnostics, log-log slope fitting, and
the raw-CSV / JSON persistence layer.

The raw CSV schema is fixed: one header row, comma separated, '.' decimal,
floats written with repr so reaggregation from disk reproduces reports
bit-for-bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _sstats

from ..errors import DomainError, NonPositiveStatisticError
from ..seeding import make_stream

RAW_COLUMNS = (
    "experiment_id",
    "process_kind",
    "n",
    "replicate",
    "seed",
    "p",
    "xi_np",
    "linear_term",
    "correction_term",
    "remainder_srd",
    "remainder_lrd",
    "statistic_name",
    "statistic_value",
)

_INT_COLUMNS = {"n", "replicate", "seed"}
_STR_COLUMNS = {"experiment_id", "process_kind", "statistic_name"}


@dataclass(frozen=True)
class PerN:
    n: int
    median: float
    mean: float
    q25: float
    q75: float
    count: int


@dataclass
class RateReport:
    experiment_id: str
    config_echo: dict
    per_n: list
    slope: float | None
    slope_stderr: float | None
    theoretical_exponent: float | None
    warnings: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "config": self.config_echo,
            "per_n": [
                {"n": s.n, "median": s.median, "mean": s.mean, "q25": s.q25,
                 "q75": s.q75, "count": s.count}
                for s in self.per_n
            ],
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "theoretical_exponent": self.theoretical_exponent,
            "warnings": list(self.warnings),
        }


@dataclass
class DistReport:
    experiment_id: str
    config_echo: dict
    count: int
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    normality_stat: float
    warnings: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "config": self.config_echo,
            "distribution": {
                "count": self.count,
                "mean": self.mean,
                "variance": self.variance,
                "skewness": self.skewness,
                "excess_kurtosis": self.excess_kurtosis,
                "normality_stat": self.normality_stat,
            },
            "warnings": list(self.warnings),
        }


def summarize_distribution(values, experiment_id="", config_echo=None) -> DistReport:
    """Moment diagnostics of replicate values; degenerate inputs flag the
    shape statistics as undefined instead of fabricating numbers."""
    values = np.asarray(values, dtype=float)
    n = values.size
    warnings = []
    mean = float(np.mean(values))
    variance = float(np.var(values, ddof=1)) if n > 1 else 0.0
    if variance <= 0.0:
        warnings.append("degenerate distribution: zero variance, shape "
                        "statistics undefined")
        skew = math.nan
        exkurt = math.nan
        jb = math.nan
    else:
        skew = float(_sstats.skew(values))
        exkurt = float(_sstats.kurtosis(values))  # Fisher, biased moments
        jb = n / 6.0 * (skew**2 + exkurt**2 / 4.0)
    if n < 100:
        warnings.append(f"only {n} replicates; moment diagnostics are noisy")
    return DistReport(
        experiment_id=experiment_id,
        config_echo=config_echo or {},
        count=int(n),
        mean=mean,
        variance=variance,
        skewness=skew,
        excess_kurtosis=exkurt,
        normality_stat=jb,
        warnings=warnings,
    )


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float


def fit_loglog_slope(n_values, statistic_values, replicate_matrix=None,
                     resamples: int = 200, seed: int = 0) -> SlopeFit:
    """Least squares of log(statistic) on log(n).

    With a replicate matrix (replicates x grid) the standard error comes
    from a bootstrap over replicates, re-deriving the per-n medians each
    resample; otherwise it is the OLS formula value.
    """
    n_values = np.asarray(n_values, dtype=float)
    stats = np.asarray(statistic_values, dtype=float)
    if n_values.size < 4:
        raise DomainError(f"slope fit needs >= 4 grid points, got {n_values.size}")
    if np.any(stats <= 0) or not np.all(np.isfinite(stats)):
        raise NonPositiveStatisticError(
            "statistics must be positive and finite for a log-log fit"
        )
    x = np.log(n_values)
    y = np.log(stats)
    slope, intercept = np.polyfit(x, y, 1)
    if replicate_matrix is not None:
        mat = np.asarray(replicate_matrix, dtype=float)
        r = mat.shape[0]
        stream = make_stream(seed)
        slopes = np.empty(resamples)
        for b in range(resamples):
            idx = stream.integers(0, r, size=r)
            med = np.median(mat[idx], axis=0)
            med = np.maximum(med, np.finfo(float).tiny)
            slopes[b] = np.polyfit(x, np.log(med), 1)[0]
        stderr = float(np.std(slopes, ddof=1))
    else:
        resid = y - (slope * x + intercept)
        dof = max(1, x.size - 2)
        sxx = float(np.sum((x - x.mean()) ** 2))
        stderr = float(math.sqrt(np.sum(resid**2) / dof / sxx))
    return SlopeFit(slope=float(slope), intercept=float(intercept), stderr=stderr)


# ---------------------------------------------------------------------------
# Raw CSV persistence
# ---------------------------------------------------------------------------


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_raw_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RAW_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row.get(c)) for c in RAW_COLUMNS])


def read_raw_csv(path) -> list:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            row = {}
            for col in RAW_COLUMNS:
                raw = rec[col]
                if raw == "":
                    row[col] = None
                elif col in _STR_COLUMNS:
                    row[col] = raw
                elif col in _INT_COLUMNS:
                    row[col] = int(raw)
                else:
                    row[col] = float(raw)
            rows.append(row)
    return rows


def sort_rows(rows) -> list:
    """Canonical order: replicate index, then n, then statistic name."""
    return sorted(rows, key=lambda r: (r["replicate"], r["n"],
                                       r["statistic_name"] or ""))


def aggregate_per_n(rows, statistic_name: str) -> list:
    """Per-n summary of one statistic, a deterministic fold over the canonical
    row order (so shuffled replicate completion cannot change the result)."""
    groups: dict = {}
    for row in sort_rows(rows):
        if row["statistic_name"] != statistic_name:
            continue
        groups.setdefault(row["n"], []).append(row["statistic_value"])
    out = []
    for n in sorted(groups):
        vals = np.asarray(groups[n], dtype=float)
        out.append(PerN(
            n=int(n),
            median=float(np.median(vals)),
            mean=float(np.mean(vals)),
            q25=float(np.percentile(vals, 25)),
            q75=float(np.percentile(vals, 75)),
            count=int(vals.size),
        ))
    return out


def replicate_matrix(rows, statistic_name: str):
    """(replicates x grid) matrix of one statistic in canonical order."""
    by_rep: dict = {}
    ns = set()
    for row in sort_rows(rows):
        if row["statistic_name"] != statistic_name:
            continue
        by_rep.setdefault(row["replicate"], {})[row["n"]] = row["statistic_value"]
        ns.add(row["n"])
    ns = sorted(ns)
    reps = sorted(by_rep)
    mat = np.full((len(reps), len(ns)), np.nan)
    for i, rep in enumerate(reps):
        for j, n in enumerate(ns):
            if n in by_rep[rep]:
                mat[i, j] = by_rep[rep][n]
    keep = ~np.any(np.isnan(mat), axis=1)
    return np.asarray(ns, dtype=float), mat[keep]


def build_rate_report(experiment_id, config_echo, rows, statistic_name,
                      theoretical_exponent, warnings, bootstrap_seed) -> RateReport:
    per_n = aggregate_per_n(rows, statistic_name)
    slope = stderr = None
    if len(per_n) >= 4:
        ns, mat = replicate_matrix(rows, statistic_name)
        medians = [s.median for s in per_n]
        try:
            fit = fit_loglog_slope(ns, medians, replicate_matrix=mat,
                                   seed=bootstrap_seed)
            slope, stderr = fit.slope, fit.stderr
        except NonPositiveStatisticError:
            warnings = list(warnings) + [
                f"nonpositive {statistic_name} medians; slope not fitted"]
    return RateReport(
        experiment_id=experiment_id,
        config_echo=config_echo,
        per_n=per_n,
        slope=slope,
        slope_stderr=stderr,
        theoretical_exponent=theoretical_exponent,
        warnings=list(warnings),
    )


def write_json_report(path, report) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, allow_nan=True)
        fh.write("\n")
