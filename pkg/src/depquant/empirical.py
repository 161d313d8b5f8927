"""Empirical CDF, sample quantiles, conditional empirical CDF and the
martingale/smooth decomposition, sup deviations, oscillation moduli, and
trimmed/Winsorized means.

Quantile convention everywhere: xi_{n,p} = inf{x : F_n(x) >= p}, i.e. the
ceil(n p)-th order statistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .errors import (
    DegenerateTrimError,
    DomainError,
    MissingLagsError,
    ParameterError,
)

_CHUNK_ELEMS = 4_000_000


@dataclass(eq=False)
class EmpiricalSample:
    """Sample with sorted view; carries lagged conditional locations when the
    conditional empirical CDF is needed."""

    values: np.ndarray
    sorted_values: np.ndarray
    lagged_locations: np.ndarray | None = None
    lags_all_zero: bool = False

    @classmethod
    def from_values(cls, values, lagged_locations=None):
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise ParameterError("sample must be a nonempty 1-d array")
        lags = None
        lags_zero = False
        if lagged_locations is not None:
            lags = np.asarray(lagged_locations, dtype=float)
            if lags.shape != values.shape:
                raise ParameterError("lagged_locations must match values in shape")
            lags_zero = not np.any(lags)
        return cls(values=values, sorted_values=np.sort(values),
                   lagged_locations=lags, lags_all_zero=lags_zero)

    @classmethod
    def from_path(cls, path):
        return cls.from_values(path.values, path.lagged_locations)

    @property
    def n(self) -> int:
        return self.values.size


def ecdf_eval(sample: EmpiricalSample, x):
    """Right-continuous F_n(x) by binary search; vectorized over x."""
    counts = np.searchsorted(sample.sorted_values, np.asarray(x, dtype=float), side="right")
    out = counts / sample.n
    return out if np.ndim(x) else float(out)


def _quantile_indices(n: int, p: np.ndarray) -> np.ndarray:
    """1-based order-statistic index k = smallest k with k/n >= p."""
    k = np.ceil(n * p).astype(np.int64)
    # float products can land on the wrong side of an exact multiple; repair
    # against the definition directly.
    k = np.maximum(k, 1)
    too_high = (k - 1) >= n * p  # (k-1)/n >= p means k-1 already works
    while np.any(too_high):
        k[too_high] -= 1
        too_high = ((k - 1) >= n * p) & (k > 1)
    too_low = k < n * p  # k/n < p means k fails
    while np.any(too_low):
        k[too_low] += 1
        too_low = k < n * p
    return np.minimum(k, n)


def sample_quantile(sample: EmpiricalSample, p):
    """xi_{n,p} = X_(ceil(np)) for p in (0,1)."""
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any((p_arr <= 0.0) | (p_arr >= 1.0)):
        raise DomainError("quantile level must lie strictly in (0, 1)")
    k = _quantile_indices(sample.n, p_arr)
    out = sample.sorted_values[k - 1]
    return out if np.ndim(p) else float(out[0])


def _require_lags(sample: EmpiricalSample) -> np.ndarray:
    if sample.lagged_locations is None:
        raise MissingLagsError(
            "conditional empirical CDF needs the sample's lagged locations"
        )
    return sample.lagged_locations


def _mean_over_lags(sample, x, func):
    lags = _require_lags(sample)
    x = np.asarray(x, dtype=float)
    if sample.lags_all_zero:
        # degenerate conditioning: the average collapses to a single term
        out = np.asarray(func(x), dtype=float)
        return out if x.ndim else float(out)
    flat = np.atleast_1d(x).ravel()
    chunk = max(1, _CHUNK_ELEMS // max(1, lags.size))
    out = np.empty(flat.size)
    for s in range(0, flat.size, chunk):
        blk = flat[s : s + chunk]
        out[s : s + chunk] = func(blk[:, None] - lags[None, :]).mean(axis=1)
    return out.reshape(x.shape) if x.ndim else float(out[0])


def conditional_cdf(sample: EmpiricalSample, innovation, x):
    """F_n*(x) = mean_i F_eps(x - X_{i,i-1}); smooth companion of F_n."""
    return _mean_over_lags(sample, x, innovation.cdf)


def conditional_density(sample: EmpiricalSample, innovation, x):
    """f_n*(x) = mean_i f_eps(x - X_{i,i-1})."""
    return _mean_over_lags(sample, x, innovation.pdf)


def conditional_density_deriv(sample: EmpiricalSample, innovation, x):
    return _mean_over_lags(sample, x, lambda d: innovation.pdf_deriv(d, 1))


@dataclass(frozen=True)
class Decomposition:
    """F_n - F split into the martingale part and the differentiable part."""

    martingale: float  # M_n(x) = F_n(x) - F_n*(x)
    smooth: float      # N_n(x) = F_n*(x) - F(x)


def decompose(sample: EmpiricalSample, innovation, oracle, x) -> Decomposition:
    fn = ecdf_eval(sample, x)
    fstar = conditional_cdf(sample, innovation, x)
    f_true = oracle.cdf(x)
    if np.ndim(x):
        raise ParameterError("decompose expects a scalar evaluation point")
    return Decomposition(martingale=float(fn - fstar), smooth=float(fstar - f_true))


def jump_points(sample: EmpiricalSample, lo: float, hi: float) -> np.ndarray:
    """Distinct sample values in (lo, hi] plus their left approach points,
    so sup over a step function is attained on the returned set."""
    sv = sample.sorted_values
    i0, i1 = np.searchsorted(sv, [lo, hi], side="right")
    jumps = np.unique(sv[i0:i1])
    jumps = jumps[jumps > lo]
    if jumps.size == 0:
        return jumps
    left = np.nextafter(jumps, -np.inf)
    pts = np.concatenate([jumps, left[left >= lo]])
    return np.unique(pts)


def sup_deviation(sample: EmpiricalSample, oracle, lo: float, hi: float,
                  grid_size: int = 256) -> float:
    """sup over [lo, hi] of |F_n - F|, exact over F_n's steps up to oracle
    error: evaluated on a grid plus every jump point and its left approach."""
    if not lo <= hi:
        raise ParameterError(f"need lo <= hi, got [{lo}, {hi}]")
    if grid_size < 2 and lo < hi:
        raise ParameterError("grid_size must be >= 2")
    if lo == hi:
        return float(abs(ecdf_eval(sample, lo) - oracle.cdf(lo)))
    xs = np.concatenate([np.linspace(lo, hi, grid_size), jump_points(sample, lo, hi)])
    xs = np.unique(xs)
    dev = np.abs(ecdf_eval(sample, xs) - oracle.cdf(xs))
    return float(np.max(dev))


def oscillation_modulus(curve, x: float, b: float, grid_size: int = 256,
                        extra_points=None) -> float:
    """sup_{|u| <= b} |D(x+u) - D(x)| for a curve evaluator D.

    When D involves a step function, pass its jump points (and their left
    approaches) inside [x-b, x+b] via extra_points so the sup is exact.
    """
    if b < 0:
        raise ParameterError(f"window must be >= 0, got {b}")
    if b == 0:
        return 0.0
    pts = np.linspace(x - b, x + b, max(2, grid_size))
    if extra_points is not None and len(extra_points) > 0:
        extra = np.asarray(extra_points, dtype=float)
        extra = extra[(extra >= x - b) & (extra <= x + b)]
        pts = np.concatenate([pts, extra])
    pts = np.unique(pts)
    vals = np.asarray(curve(np.concatenate([[x], pts])), dtype=float)
    return float(np.max(np.abs(vals[1:] - vals[0])))


def _trim_bounds(n: int, p0: float, p1: float) -> tuple[int, int]:
    if not (0.0 < p0 < p1 < 1.0):
        raise ParameterError(f"need 0 < p0 < p1 < 1, got ({p0}, {p1})")
    alpha = int(math.floor(n * p0))
    beta = int(math.floor(n * p1))
    if beta <= alpha:
        raise DegenerateTrimError(
            f"floor(n p1) = {beta} <= floor(n p0) = {alpha}: nothing to average"
        )
    return alpha, beta


def trimmed_mean(sample: EmpiricalSample, p0: float, p1: float) -> float:
    """Mean of the order statistics X_(floor(n p0)+1) .. X_(floor(n p1))."""
    alpha, beta = _trim_bounds(sample.n, p0, p1)
    sv = sample.sorted_values
    return float(np.mean(sv[alpha:beta]))


def winsorized_mean(sample: EmpiricalSample, p0: float, p1: float,
                    variant: str = "boundary") -> float:
    """Winsorized mean: tails re-weighted onto boundary order statistics.

    variant="boundary" puts weight n - beta(n) on X_(beta(n));
    variant="next" uses X_(beta(n)+1) instead (the alternative display,
    equivalent in the limit).
    """
    if variant not in ("boundary", "next"):
        raise ParameterError(f"variant must be boundary|next, got {variant}")
    n = sample.n
    alpha, beta = _trim_bounds(n, p0, p1)
    sv = sample.sorted_values
    low = alpha * sv[alpha - 1] if alpha >= 1 else 0.0
    hi_idx = beta - 1 if variant == "boundary" else min(beta, n - 1)
    high = (n - beta) * sv[hi_idx]
    middle = float(np.sum(sv[alpha:beta]))
    return float((low + high + middle) / n)
