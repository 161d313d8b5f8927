"""Causal linear process machinery.

Simulates X_k = sum_{i>=0} a_i eps_{k-i} for short- and long-memory
coefficient schedules by truncated FFT convolution, provides numerically
certified marginal oracles (F, f, f', xi_p) for the truncated process, and
evaluates the deterministic rate functions used by the experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special
from scipy.fft import irfft, next_fast_len, rfft

from .errors import (
    DivergentTailError,
    DomainError,
    ParameterError,
    UnsupportedCombinationError,
)
from .innovations import Gaussian, InnovationModel
from .seeding import make_stream

# ---------------------------------------------------------------------------
# Coefficient schedules
# ---------------------------------------------------------------------------

_BRACKET_REL = 1e-8  # relative width of the integral bracket for tail sums


@dataclass(frozen=True)
class CoefficientSchedule:
    """Filter (a_i) with a_0 = 1 and closed-form tail information."""

    kind = "base"
    is_lrd = False

    def coefficient(self, i):
        """a_i, vectorized over integer arrays."""
        raise NotImplementedError

    def coefficients(self, m: int) -> np.ndarray:
        """Array [a_0, ..., a_m]."""
        return np.asarray(self.coefficient(np.arange(m + 1)), dtype=float)

    def tail_abs_sum(self, n: int, exponent: float = 1.0) -> float:
        """sum_{i>=n} |a_i|^exponent; raises DivergentTailError if infinite."""
        raise NotImplementedError

    def _check_tail_args(self, n, exponent):
        if n < 1:
            raise ParameterError(f"tail start must be >= 1, got {n}")
        if not (0 < exponent <= 1):
            raise ParameterError(f"exponent must be in (0, 1], got {exponent}")


@dataclass(frozen=True)
class IIDSchedule(CoefficientSchedule):
    kind = "iid"

    def coefficient(self, i):
        i = np.asarray(i)
        return np.where(i == 0, 1.0, 0.0)

    def tail_abs_sum(self, n, exponent=1.0):
        self._check_tail_args(n, exponent)
        return 0.0


@dataclass(frozen=True)
class GeometricSchedule(CoefficientSchedule):
    """a_i = rho^i, |rho| < 1, rho != 0."""

    rho: float = 0.5
    kind = "geometric"

    def __post_init__(self):
        if not (-1 < self.rho < 1) or self.rho == 0:
            raise ParameterError(f"rho must be in (-1,1) and nonzero, got {self.rho}")

    def coefficient(self, i):
        i = np.asarray(i)
        return np.power(float(self.rho), i.astype(float))

    def tail_abs_sum(self, n, exponent=1.0):
        self._check_tail_args(n, exponent)
        q = abs(self.rho) ** exponent
        return q**n / (1.0 - q)


def _bracketed_power_tail(start: int, s: float) -> float:
    """sum_{i>=start} i^-s for s > 1, bracketed by integrals to 1e-8 relative."""
    partial = 0.0
    k = start
    block = max(64, start)
    while True:
        hi_int = (k - 1) ** (1.0 - s) / (s - 1.0) if k > 1 else math.inf
        lo_int = k ** (1.0 - s) / (s - 1.0)
        if hi_int - lo_int <= _BRACKET_REL * (partial + lo_int):
            return partial + 0.5 * (lo_int + hi_int)
        i = np.arange(k, k + block, dtype=float)
        partial += float(np.sum(i**-s))
        k += block
        block *= 2


@dataclass(frozen=True)
class PolynomialSchedule(CoefficientSchedule):
    """a_0 = 1, a_i = i^-r for i >= 1, with r > 1 (summable filter)."""

    r: float = 3.0
    kind = "polynomial_srd"

    def __post_init__(self):
        if not (np.isfinite(self.r) and self.r > 1):
            raise ParameterError(f"r must be > 1, got {self.r}")

    def coefficient(self, i):
        i = np.asarray(i, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.where(i == 0, 1.0, i ** (-self.r))
        return out

    def tail_abs_sum(self, n, exponent=1.0):
        self._check_tail_args(n, exponent)
        s = self.r * exponent
        if s <= 1:
            raise DivergentTailError(
                f"sum of i^(-{self.r}*{exponent}) diverges (exponent*decay <= 1)"
            )
        return _bracketed_power_tail(n, s)


@dataclass(frozen=True)
class LrdSchedule(CoefficientSchedule):
    """a_0 = 1, a_i = i^-beta * L(i), beta in (1/2, 1).

    L is slowly varying: either the constant c, or the log-power
    (log(e+i))^gamma_log.  Coefficients are not absolutely summable, which
    is exactly the long-memory regime.
    """

    beta: float = 0.75
    slowvary: str = "const"  # "const" | "log_power"
    c: float = 1.0
    gamma_log: float = 0.0
    kind = "lrd"
    is_lrd = True

    def __post_init__(self):
        if not (0.5 < self.beta < 1.0):
            raise ParameterError(f"beta must be in (1/2, 1), got {self.beta}")
        if self.slowvary not in ("const", "log_power"):
            raise ParameterError(f"slowvary must be const|log_power, got {self.slowvary}")
        if self.slowvary == "const" and not (np.isfinite(self.c) and self.c > 0):
            raise ParameterError(f"c must be finite and > 0, got {self.c}")

    def slowly_varying(self, i):
        i = np.asarray(i, dtype=float)
        if self.slowvary == "const":
            return np.full_like(i, self.c)
        return np.log(math.e + i) ** self.gamma_log

    def coefficient(self, i):
        i = np.asarray(i, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.where(i == 0, 1.0, i ** (-self.beta) * self.slowly_varying(i))
        return out

    def tail_abs_sum(self, n, exponent=1.0):
        self._check_tail_args(n, exponent)
        # beta*exponent <= beta < 1, so the tail always diverges
        raise DivergentTailError(
            f"sum of (i^(-{self.beta}) L(i))^{exponent} diverges: "
            "long-memory coefficients are not summable"
        )


_SCHEDULES = {
    "iid": IIDSchedule,
    "geometric": GeometricSchedule,
    "polynomial_srd": PolynomialSchedule,
    "lrd": LrdSchedule,
}


def make_schedule(kind: str, **params) -> CoefficientSchedule:
    try:
        cls = _SCHEDULES[kind]
    except KeyError:
        known = ", ".join(sorted(_SCHEDULES))
        raise ParameterError(f"unknown schedule kind {kind!r} (known: {known})")
    try:
        return cls(**params)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for schedule {kind!r}: {exc}")


# ---------------------------------------------------------------------------
# Truncation planning and path simulation
# ---------------------------------------------------------------------------

DEFAULT_M_MAX = 4_800_000


@dataclass(frozen=True)
class TruncationPlan:
    lag: int
    achieved_tolerance: float
    met: bool


def tail_square_sum(schedule: CoefficientSchedule, m: int) -> float:
    """sum_{i>m} a_i^2 (the variance share of the neglected filter tail).

    Converges for every supported schedule since 2*beta > 1 in the
    long-memory case; bracketed to 1e-8 relative like tail_abs_sum.
    """
    if isinstance(schedule, IIDSchedule):
        return 0.0
    if isinstance(schedule, GeometricSchedule):
        q = schedule.rho**2
        return q ** (m + 1) / (1.0 - q)
    if isinstance(schedule, PolynomialSchedule):
        return _bracketed_power_tail(m + 1, 2.0 * schedule.r)
    if isinstance(schedule, LrdSchedule):
        if schedule.slowvary == "const":
            return schedule.c**2 * _bracketed_power_tail(m + 1, 2.0 * schedule.beta)
        # log-power L: explicit sum plus a monotone integral bracket
        s = 2.0 * schedule.beta
        g = lambda i: np.asarray(schedule.coefficient(i)) ** 2
        partial = 0.0
        k = m + 1
        block = max(64, k)
        while True:
            lval = float(schedule.slowly_varying(np.asarray(float(k))))
            lo_int = lval**2 * k ** (1.0 - s) / (s - 1.0)
            hi_int = lval**2 * (k - 1) ** (1.0 - s) / (s - 1.0)
            if hi_int - lo_int <= _BRACKET_REL * (partial + lo_int):
                return partial + 0.5 * (lo_int + hi_int)
            i = np.arange(k, k + block)
            partial += float(np.sum(g(i)))
            k += block
            block *= 2
    raise ParameterError(f"unsupported schedule {schedule!r}")


def plan_truncation(
    schedule: CoefficientSchedule,
    innovation: InnovationModel,
    n: int,
    tolerance: float,
    m_max: int = DEFAULT_M_MAX,
) -> TruncationPlan:
    """Pick the filter truncation lag M.

    Short-memory schedules: smallest M with tail_abs_sum(M, 1)*scale < tol,
    so the neglected tail is below the tolerance in absolute-sum norm.
    Long-memory schedules have no summable tail; there the rule is M >= n
    and M >= the first lag where the coefficient itself drops below tol,
    capped at m_max with the achieved value reported.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if tolerance <= 0:
        raise ParameterError(f"tolerance must be > 0, got {tolerance}")
    if isinstance(schedule, IIDSchedule):
        return TruncationPlan(0, 0.0, True)
    if schedule.is_lrd:
        lag_req = _first_lag_below(schedule, tolerance)
        want = max(n, lag_req)
        lag = min(want, int(m_max))
        achieved = float(schedule.coefficient(np.asarray(lag)))
        return TruncationPlan(lag, achieved, lag >= want)
    # SRD: monotone tail, bracketed search
    scale = innovation.scale

    def ok(m):
        return schedule.tail_abs_sum(m, 1.0) * scale < tolerance

    lo, hi = 1, 1
    while not ok(hi):
        lo, hi = hi, hi * 2
        if hi > m_max:
            achieved = schedule.tail_abs_sum(int(m_max), 1.0) * scale
            return TruncationPlan(int(m_max), achieved, False)
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    achieved = schedule.tail_abs_sum(lo, 1.0) * scale
    return TruncationPlan(lo, achieved, True)


def _first_lag_below(schedule: LrdSchedule, tolerance: float) -> int:
    hi = 1
    while float(schedule.coefficient(np.asarray(hi))) >= tolerance:
        hi *= 2
        if hi > 2**62:
            raise ParameterError("tolerance unreachable for this schedule")
    lo = max(1, hi // 2)
    while lo < hi:
        mid = (lo + hi) // 2
        if float(schedule.coefficient(np.asarray(mid))) < tolerance:
            hi = mid
        else:
            lo = mid + 1
    return lo


_DIRECT_FILTER_MAX = 256


class PreparedFilter:
    """Reusable convolution of a fixed filter with signals of fixed length.

    For long filters the filter spectrum is computed once (rfft) and each
    `apply` costs one forward and one inverse transform, O(N log N) with
    N = signal + filter length.  Short filters run direct convolution.
    """

    def __init__(self, coeffs: np.ndarray, signal_length: int):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.signal_length = int(signal_length)
        self.lag = self.coeffs.size - 1
        self._direct = self.coeffs.size <= _DIRECT_FILTER_MAX
        if not self._direct:
            self._nfft = next_fast_len(self.signal_length + self.lag)
            self._spectrum = rfft(self.coeffs, self._nfft)

    def apply(self, signal: np.ndarray) -> np.ndarray:
        """X_k = sum_i a_i signal[k - i] for k = lag .. signal_length - 1."""
        if signal.size != self.signal_length:
            raise ParameterError(
                f"prepared for signals of length {self.signal_length}, got {signal.size}"
            )
        m = self.lag
        if m == 0:
            return signal * self.coeffs[0]
        if self._direct:
            return np.convolve(signal, self.coeffs)[m : self.signal_length]
        out = irfft(rfft(signal, self._nfft) * self._spectrum, self._nfft)
        return out[m : self.signal_length].copy()


@dataclass(eq=False)
class LinearProcessPath:
    """A simulated stationary stretch X_1..X_n with its innovation record.

    ``lagged_locations[i]`` is the one-step-ahead conditional location
    X_{i,i-1} = sum_{j>=1} a_j eps_{i-j}; since a_0 = 1 it always satisfies
    values = lagged_locations + innovations[truncation_lag:] exactly.
    """

    values: np.ndarray
    lagged_locations: np.ndarray
    innovations: np.ndarray
    truncation_lag: int
    seed: int
    schedule: CoefficientSchedule
    innovation: InnovationModel
    truncation_met: bool = True
    achieved_tolerance: float = 0.0
    aggregated_tail_sd: float = 0.0

    @property
    def n(self) -> int:
        return self.values.size


def simulate_path(
    schedule: CoefficientSchedule,
    innovation: InnovationModel,
    n: int,
    truncation_tolerance: float,
    seed: int,
    m_max: int = DEFAULT_M_MAX,
    plan: TruncationPlan | None = None,
    prepared: PreparedFilter | None = None,
    aggregate_tail: bool = False,
) -> LinearProcessPath:
    """Simulate X_1..X_n by convolving n + M innovations with (a_0..a_M).

    `plan`/`prepared` let callers fix the truncation lag and reuse the
    filter spectrum across replicates; results are a pure function of
    (schedule, innovation, n, plan, seed, aggregate_tail).

    ``aggregate_tail`` replaces the neglected filter tail (lags > M) by its
    exact-variance aggregate: one shared N(0, var_eps * sum_{i>M} a_i^2)
    level added to every lagged location.  For long-memory schedules the
    neglected tail variance decays only like M^(1-2 beta), so at practical
    M this restores the sample-mean fluctuation scale that the remainder
    statistics are built on; the within-window drift of the true tail is
    O(n/M) relatively and stays neglected.  Requires finite innovation
    variance.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if plan is None:
        plan = plan_truncation(schedule, innovation, n, truncation_tolerance, m_max)
    m = plan.lag
    if prepared is None:
        prepared = PreparedFilter(schedule.coefficients(m), n + m)
    elif prepared.lag != m or prepared.signal_length != n + m:
        raise ParameterError("prepared filter does not match (n, truncation lag)")
    stream = make_stream(seed)
    eps = innovation.sample(stream, n + m)
    tail_sd = 0.0
    tail_level = 0.0
    if aggregate_tail:
        var = innovation.variance()
        if not np.isfinite(var):
            raise ParameterError(
                "aggregate_tail needs finite innovation variance"
            )
        tail_sd = math.sqrt(var * tail_square_sum(schedule, m))
        u = max(float(stream.random()), 1e-300)
        tail_level = float(special.ndtri(u)) * tail_sd
    conv = prepared.apply(eps)
    # re-derive values as lagged + eps so the a_0 = 1 identity holds bit-exactly
    lagged = conv - eps[m:] + tail_level
    values = lagged + eps[m:]
    return LinearProcessPath(
        values=values,
        lagged_locations=lagged,
        innovations=eps,
        truncation_lag=m,
        seed=int(seed),
        schedule=schedule,
        innovation=innovation,
        truncation_met=plan.met,
        achieved_tolerance=plan.achieved_tolerance,
        aggregated_tail_sd=tail_sd,
    )


# ---------------------------------------------------------------------------
# Marginal oracles
# ---------------------------------------------------------------------------

PRECISION_FLOOR = 1e-12
QUANTILE_RESIDUAL = 1e-9  # |F(xi_p) - p| after bisection
ORACLE_EXACT_LAG_CAP = 65_536
MAX_EXACT_DRAWS = 2 * 10**8


class MarginalOracle:
    """Certified marginal distribution of the (truncated) linear process.

    Subclasses provide vectorized cdf/pdf/pdf_deriv; quantiles come from a
    shared bisection driven to |F(xi_p) - p| <= 1e-9 numerical residual.
    ``precision`` is the reported statistical standard-error bound of the
    cdf values (floor 1e-12 for exact backends).
    """

    precision: float = PRECISION_FLOOR
    r_oracle: int = 0
    m_oracle: int = 0
    seed: int = 0
    method: str = "exact"

    def cdf(self, x):
        raise NotImplementedError

    def pdf(self, x):
        raise NotImplementedError

    def pdf_deriv(self, x, order: int = 1):
        raise NotImplementedError

    def _bracket(self) -> tuple[float, float]:
        """Initial quantile bracket; subclasses may tighten."""
        return (-1.0, 1.0)

    def quantile(self, p):
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any((p_arr <= 0) | (p_arr >= 1)):
            raise DomainError("quantile levels must lie in (0, 1)")
        lo0, hi0 = self._bracket()
        width = hi0 - lo0
        lo = np.full(p_arr.shape, lo0)
        hi = np.full(p_arr.shape, hi0)
        step = width
        for _ in range(200):
            bad = self.cdf(lo) >= p_arr
            if not np.any(bad):
                break
            lo[bad] -= step
            step *= 2
        step = width
        for _ in range(200):
            bad = self.cdf(hi) <= p_arr
            if not np.any(bad):
                break
            hi[bad] += step
            step *= 2
        for _ in range(120):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < p_arr
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo) < 1e-14 * (1 + np.max(np.abs(hi))):
                break
        out = 0.5 * (lo + hi)
        return out if np.ndim(p) else float(out[0])


class GaussianMarginalOracle(MarginalOracle):
    """Closed-form oracle: gaussian innovations make the marginal exactly
    N(0, scale^2 * sum_{i<=M} a_i^2), plus the aggregated tail variance when
    the paths carry it."""

    method = "exact"

    def __init__(self, schedule, innovation, m_oracle: int,
                 aggregate_tail: bool = False):
        coeffs = schedule.coefficients(m_oracle)
        var = float(np.sum(coeffs**2))
        if aggregate_tail:
            var += tail_square_sum(schedule, m_oracle)
        self.sd = float(innovation.scale * math.sqrt(var))
        self.precision = PRECISION_FLOOR
        self.m_oracle = int(m_oracle)

    def cdf(self, x):
        return special.ndtr(np.asarray(x, dtype=float) / self.sd)

    def pdf(self, x):
        z = np.asarray(x, dtype=float) / self.sd
        return np.exp(-0.5 * z * z) / (self.sd * math.sqrt(2 * math.pi))

    def pdf_deriv(self, x, order: int = 1):
        z = np.asarray(x, dtype=float) / self.sd
        phi = np.exp(-0.5 * z * z) / (self.sd * math.sqrt(2 * math.pi))
        if order == 1:
            return -z * phi / self.sd
        if order == 2:
            return (z * z - 1.0) * phi / self.sd**2
        raise ParameterError(f"order must be 1 or 2, got {order}")

    def quantile(self, p):
        p_arr = np.asarray(p, dtype=float)
        if np.any((p_arr <= 0) | (p_arr >= 1)):
            raise DomainError("quantile levels must lie in (0, 1)")
        out = special.ndtri(p_arr) * self.sd
        return out if np.ndim(p) else float(out)


class InnovationMarginalOracle(MarginalOracle):
    """Degenerate oracle for the iid schedule: the marginal is F_eps itself."""

    method = "exact"

    def __init__(self, innovation):
        self.innovation = innovation
        self.precision = PRECISION_FLOOR

    def cdf(self, x):
        return self.innovation.cdf(x)

    def pdf(self, x):
        return self.innovation.pdf(x)

    def pdf_deriv(self, x, order: int = 1):
        return self.innovation.pdf_deriv(x, order)

    def _bracket(self):
        s = self.innovation.scale
        return (-4.0 * s, 4.0 * s)


class MonteCarloMarginalOracle(MarginalOracle):
    """Rao-Blackwellized oracle from R i.i.d. lagged-location tails.

    T_j ~ sum_{i=1}^{M} a_i eps_i; then F(x) = mean_j F_eps(x - T_j) and
    likewise for f and f' -- smooth, deterministic functions of
    (seed, r_oracle).  ``precision`` is the largest cdf standard error over
    a central probe grid.
    """

    method = "mc"

    def __init__(self, schedule, innovation, r_oracle: int, m_oracle: int, seed: int,
                 aggregate_tail: bool = False):
        if r_oracle < 2:
            raise ParameterError(f"r_oracle must be >= 2, got {r_oracle}")
        self.innovation = innovation
        self.r_oracle = int(r_oracle)
        self.m_oracle = int(m_oracle)
        self.seed = int(seed)
        self.tails = _draw_tails(schedule, innovation, r_oracle, m_oracle, seed,
                                 aggregate_tail)
        self._chunk = max(1, int(4_000_000 // max(1, self.tails.size)))
        probes = self.quantile(np.linspace(0.05, 0.95, 10))
        ses = [self._cdf_se(float(x)) for x in np.atleast_1d(probes)]
        self.precision = max(max(ses), PRECISION_FLOOR)

    def _mean_over_tails(self, x, func):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        out = np.empty(flat.size)
        for s in range(0, flat.size, self._chunk):
            blk = flat[s : s + self._chunk]
            out[s : s + self._chunk] = func(blk[:, None] - self.tails[None, :]).mean(axis=1)
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def cdf(self, x):
        return self._mean_over_tails(x, self.innovation.cdf)

    def pdf(self, x):
        return self._mean_over_tails(x, self.innovation.pdf)

    def pdf_deriv(self, x, order: int = 1):
        return self._mean_over_tails(x, lambda d: self.innovation.pdf_deriv(d, order))

    def _cdf_se(self, x: float) -> float:
        vals = self.innovation.cdf(x - self.tails)
        return float(np.std(vals) / math.sqrt(self.r_oracle))

    def _bracket(self):
        s = self.innovation.scale
        lo = float(np.min(self.tails)) - 4 * s
        hi = float(np.max(self.tails)) + 4 * s
        return (lo, hi)


def _draw_tails(schedule, innovation, r_oracle, m_oracle, seed,
                aggregate_tail=False):
    """R i.i.d. copies of sum_{i=1}^{M} a_i eps_i (plus the aggregated
    beyond-M level when the paths carry one)."""
    stream = make_stream(seed)
    extra_var = 0.0
    if aggregate_tail:
        var = innovation.variance()
        if not np.isfinite(var):
            raise UnsupportedCombinationError(
                "aggregate_tail needs finite innovation variance"
            )
        extra_var = var * tail_square_sum(schedule, m_oracle)
    if m_oracle == 0 and extra_var == 0.0:
        return np.zeros(r_oracle)
    coeffs = schedule.coefficients(m_oracle)[1:]
    if isinstance(innovation, Gaussian):
        # exact transform: the tail is N(0, scale^2 sum a_i^2 [+ aggregate])
        sd = math.sqrt(innovation.scale**2 * float(np.sum(coeffs**2)) + extra_var)
        u = np.maximum(stream.random(r_oracle), 1e-300)
        return special.ndtri(u) * sd
    k_exact = min(m_oracle, ORACLE_EXACT_LAG_CAP)
    if r_oracle * k_exact > MAX_EXACT_DRAWS:
        raise UnsupportedCombinationError(
            f"oracle needs {r_oracle}x{k_exact} exact innovation draws; "
            "reduce r_oracle or the truncation lag"
        )
    tails = np.zeros(r_oracle)
    width = max(1, int(4_000_000 // r_oracle))
    for s in range(0, k_exact, width):
        w = min(width, k_exact - s)
        eps = innovation.sample(stream, r_oracle * w).reshape(r_oracle, w)
        tails += eps @ coeffs[s : s + w]
    far_var = extra_var
    if k_exact < m_oracle:
        var = innovation.variance()
        if not np.isfinite(var):
            raise UnsupportedCombinationError(
                "cannot close the far tail for infinite-variance innovations; "
                "reduce the truncation lag below the exact-draw cap"
            )
        # every skipped coefficient is individually negligible; the remaining
        # sum of m - k tiny terms is replaced by its exact-variance gaussian
        far_var += var * float(np.sum(coeffs[k_exact:] ** 2))
    if far_var > 0.0:
        u = np.maximum(stream.random(r_oracle), 1e-300)
        tails += special.ndtri(u) * math.sqrt(far_var)
    return tails


def build_marginal_oracle(
    schedule: CoefficientSchedule,
    innovation: InnovationModel,
    r_oracle: int = 200_000,
    m_oracle: int | None = None,
    seed: int = 0,
    method: str = "auto",
    truncation_tolerance: float = 1e-4,
    m_max: int = DEFAULT_M_MAX,
    aggregate_tail: bool = False,
) -> MarginalOracle:
    """Construct the marginal oracle for a (schedule, innovation) pair.

    method="auto" uses closed forms where the marginal law is available
    exactly (iid schedules; gaussian innovations) and Monte Carlo
    Rao-Blackwellization otherwise.  method="mc" forces the Monte Carlo
    construction even when a closed form exists (useful as a cross-check).
    ``aggregate_tail`` must match the flag used on the simulated paths so
    the oracle describes the same law.
    """
    if m_oracle is None:
        m_oracle = plan_truncation(
            schedule, innovation, 1, truncation_tolerance, m_max
        ).lag
    if method not in ("auto", "mc", "exact"):
        raise ParameterError(f"method must be auto|mc|exact, got {method}")
    if method in ("auto", "exact"):
        if isinstance(schedule, IIDSchedule):
            return InnovationMarginalOracle(innovation)
        if isinstance(innovation, Gaussian):
            return GaussianMarginalOracle(schedule, innovation, m_oracle,
                                          aggregate_tail)
        if method == "exact":
            raise UnsupportedCombinationError(
                "no closed-form marginal for this (schedule, innovation) pair"
            )
    if isinstance(schedule, IIDSchedule):
        return InnovationMarginalOracle(innovation)
    return MonteCarloMarginalOracle(schedule, innovation, r_oracle, m_oracle, seed,
                                    aggregate_tail)


# ---------------------------------------------------------------------------
# Oracle persistence: binary-free CSV tabulation
# ---------------------------------------------------------------------------


def save_oracle_table(oracle: MarginalOracle, path, num: int = 4097,
                      p_lo: float = 1e-6, p_hi: float = 1 - 1e-6) -> None:
    """Tabulate (x, F, f, f') on a quantile-spanning grid and write CSV."""
    lo = float(oracle.quantile(p_lo))
    hi = float(oracle.quantile(p_hi))
    pad = 0.1 * (hi - lo)
    grid = np.linspace(lo - pad, hi + pad, num)
    cdf = oracle.cdf(grid)
    pdf = oracle.pdf(grid)
    dpdf = oracle.pdf_deriv(grid, 1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# precision={oracle.precision!r}\n")
        fh.write("x,F,f,fp\n")
        for row in zip(grid, cdf, pdf, dpdf):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


class TabulatedMarginalOracle(MarginalOracle):
    """Oracle rebuilt from a saved CSV table via monotone interpolation."""

    method = "tabulated"

    def __init__(self, grid, cdf_vals, pdf_vals, dpdf_vals, precision):
        from scipy.interpolate import PchipInterpolator

        self.grid = grid
        self._cdf = PchipInterpolator(grid, cdf_vals, extrapolate=False)
        self._pdf = PchipInterpolator(grid, pdf_vals, extrapolate=False)
        self._dpdf = PchipInterpolator(grid, dpdf_vals, extrapolate=False)
        self.precision = max(precision, PRECISION_FLOOR)

    def _eval(self, interp, x, left, right):
        x = np.asarray(x, dtype=float)
        out = interp(np.clip(x, self.grid[0], self.grid[-1]))
        out = np.where(x < self.grid[0], left, out)
        out = np.where(x > self.grid[-1], right, out)
        return out if out.ndim else float(out)

    def cdf(self, x):
        return self._eval(self._cdf, x, 0.0, 1.0)

    def pdf(self, x):
        return self._eval(self._pdf, x, 0.0, 0.0)

    def pdf_deriv(self, x, order: int = 1):
        if order != 1:
            raise ParameterError("tabulated oracle stores only the first derivative")
        return self._eval(self._dpdf, x, 0.0, 0.0)

    def _bracket(self):
        return (float(self.grid[0]), float(self.grid[-1]))


def load_oracle_table(path) -> TabulatedMarginalOracle:
    precision = PRECISION_FLOOR
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "precision=" in line:
                    precision = float(line.split("precision=")[1])
                continue
            if line.startswith("x,"):
                continue
            rows.append([float(v) for v in line.split(",")])
    arr = np.asarray(rows)
    return TabulatedMarginalOracle(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], precision)


# ---------------------------------------------------------------------------
# Rate functions
# ---------------------------------------------------------------------------


def _require_n(n):
    if n is None or n < 16:
        raise DomainError(f"rates involving log log n need n >= 16, got {n}")
    return float(n)


def _require_beta(beta):
    if beta is None or not (0.5 < beta < 1.0):
        raise DomainError(f"beta must be in (1/2, 1), got {beta}")
    return float(beta)


def _require_sigma2(sigma_eps2):
    if sigma_eps2 is None or not np.isfinite(sigma_eps2) or sigma_eps2 <= 0:
        raise DomainError(
            "sigma kinds need a finite positive innovation variance "
            f"(got {sigma_eps2}); infinite-variance innovations are rejected"
        )
    return float(sigma_eps2)


def _ell_q(n, q):
    n = _require_n(n)
    if q < 2:
        raise DomainError(f"q must be >= 2, got {q}")
    if q > 2:
        return math.log(math.log(n)) ** 0.5
    return math.log(n) ** 1.5 * math.log(math.log(n))


def _iota_q(n, q):
    n = _require_n(n)
    if q < 2:
        raise DomainError(f"q must be >= 2, got {q}")
    if q > 2:
        return math.log(n) ** (1.0 / q) * math.log(math.log(n)) ** (2.0 / q)
    return math.log(n) ** 1.5 * math.log(math.log(n))


def _slowvary_from_params(c=1.0, slowvary="const", gamma_log=0.0):
    if slowvary == "const":
        return lambda k: np.full_like(np.asarray(k, dtype=float), c)
    return lambda k: np.log(math.e + np.asarray(k, dtype=float)) ** gamma_log


def _psi(n, beta, ell):
    n_i = int(n)
    _require_n(n)
    k = np.arange(1, n_i + 1, dtype=float)
    return math.sqrt(n_i) * float(np.sum(k ** (0.5 - 2 * beta) * ell(k) ** 2))


def _a_beta(n, beta, ell):
    psi = _psi(n, beta, ell)
    n = float(n)
    logs = math.log(n) if beta < 0.75 else math.log(n) ** 3
    return psi**2 * logs * math.log(math.log(n)) ** 2


def _c_beta(beta, sigma_eps2):
    beta = _require_beta(beta)
    f = lambda x: x ** (-beta) * (1 + x) ** (-beta)
    a, _ = integrate.quad(f, 0, 1, epsrel=1e-10, limit=200)
    b, _ = integrate.quad(f, 1, np.inf, epsrel=1e-10, limit=200)
    return sigma_eps2 * (a + b)


def _sigma_n1_sq_truncated(n, beta, ell, sigma_eps2, m):
    n = int(n)
    m = int(m)
    if m < n:
        raise DomainError(f"truncated variance needs M >= n (got M={m}, n={n})")
    k = np.arange(1, n + m + 1, dtype=float)
    a = k ** (-beta) * ell(k)
    prefix = np.concatenate(([1.0], 1.0 + np.cumsum(a)))  # A[j] = sum_{k<=j} a_k
    head = float(np.sum(prefix[:n] ** 2))
    mm = np.arange(0, m)
    top = np.minimum(n + mm, m)
    tail = float(np.sum((prefix[top] - prefix[mm]) ** 2))
    return sigma_eps2 * (head + tail)


def _sigma_n1_sq_infinite(n, beta, c, sigma_eps2, j_explicit=100_000):
    """Untruncated ||n Xbar_n||^2 for L = c, by explicit head plus an
    Euler-Maclaurin tail accurate to ~1e-8 relative."""
    n = int(n)
    j = int(j_explicit)
    k = np.arange(1, n + j + 1, dtype=float)
    a = c * k ** (-beta)
    prefix = np.concatenate(([1.0], 1.0 + np.cumsum(a)))
    head = float(np.sum(prefix[:n] ** 2))
    mm = np.arange(0, j + 1)
    d = prefix[n + mm] - prefix[mm]
    head2 = float(np.sum(d**2))

    cb = c / (1.0 - beta)

    def d_of(x):
        # Euler-Maclaurin for sum_{k=m+1}^{n+m} c k^-beta
        return (
            cb * ((x + n) ** (1 - beta) - x ** (1 - beta))
            + 0.5 * c * ((x + n) ** (-beta) - x ** (-beta))
            + (beta * c / 12.0) * (x ** (-beta - 1) - (x + n) ** (-beta - 1))
        )

    g = lambda x: d_of(x) ** 2
    x0 = 1000.0 * n
    t1, _ = integrate.quad(g, j, x0, epsrel=1e-10, limit=400)
    # beyond x0 the summand is (c n)^2 (x + n/2)^(-2 beta) up to O((n/x)^2)
    t2 = (c * n) ** 2 * (x0 + n / 2.0) ** (1 - 2 * beta) / (2 * beta - 1)
    h = 1.0
    gp = (g(j + h) - g(j - h)) / (2 * h)
    tail = t1 + t2 - g(j) / 2.0 - gp / 12.0
    return sigma_eps2 * (head + head2 + tail)


RATE_KINDS = (
    "ell_q",
    "iota_q",
    "psi",
    "sigma_n1_asym",
    "sigma_n1_exact",
    "A_beta",
    "b_thm3",
    "c_beta",
    "lrd_exponent",
    "kiefer_scale",
)


def rate_function(kind: str, n: int | None = None, **params) -> float:
    """Evaluate one of the deterministic rate/constant functions.

    Kinds and their parameters:
      ell_q(n, q), iota_q(n, q)
      psi(n, beta[, c, slowvary, gamma_log])
      sigma_n1_asym(n, beta, sigma_eps2[, c])        -- asymptote of ||n Xbar||
      sigma_n1_exact(n, beta, sigma_eps2[, c, M])    -- finite-sum value; M=None
                                                        sums the untruncated
                                                        series (constant L only)
      A_beta(n, beta[, c, ...]), b_thm3(n, beta, sigma_eps2[, c, M])
      c_beta(beta, sigma_eps2), lrd_exponent(beta), kiefer_scale(n)

    Rates with a log log factor refuse n < 16.  Variance-based kinds refuse
    infinite innovation variance.
    """
    p = dict(params)
    beta = p.pop("beta", None)
    q = p.pop("q", None)
    sigma_eps2 = p.pop("sigma_eps2", None)
    c = p.pop("c", 1.0)
    slowvary = p.pop("slowvary", "const")
    gamma_log = p.pop("gamma_log", 0.0)
    m = p.pop("M", None)
    if p:
        raise ParameterError(f"unknown rate_function parameters: {sorted(p)}")
    ell = _slowvary_from_params(c, slowvary, gamma_log)

    if kind == "ell_q":
        return _ell_q(n, 2.0 if q is None else q)
    if kind == "iota_q":
        return _iota_q(n, 2.0 if q is None else q)
    if kind == "psi":
        return _psi(n, _require_beta(beta), ell)
    if kind == "A_beta":
        return _a_beta(n, _require_beta(beta), ell)
    if kind == "c_beta":
        return _c_beta(beta, _require_sigma2(sigma_eps2))
    if kind == "lrd_exponent":
        beta = _require_beta(beta)
        return max(-beta / 2.0 - 0.25, 1.5 - 3.0 * beta)
    if kind == "kiefer_scale":
        n = _require_n(n)
        return n ** (-0.75) * math.log(math.log(n)) ** 0.75
    if kind == "sigma_n1_asym":
        n = _require_n(n)
        beta = _require_beta(beta)
        s2 = _require_sigma2(sigma_eps2)
        cb = _c_beta(beta, s2)
        lval = float(ell(np.asarray(n)))
        return math.sqrt(cb / ((1 - beta) * (3 - 2 * beta)) * n ** (3 - 2 * beta)) * lval
    if kind in ("sigma_n1_exact", "b_thm3"):
        nv = _require_n(n)
        beta = _require_beta(beta)
        s2 = _require_sigma2(sigma_eps2)
        if m is None:
            if slowvary != "const":
                raise DomainError(
                    "untruncated exact variance requires constant L; pass M"
                )
            var = _sigma_n1_sq_infinite(int(nv), beta, c, s2)
        else:
            var = _sigma_n1_sq_truncated(int(nv), beta, ell, s2, m)
        sigma = math.sqrt(var)
        if kind == "sigma_n1_exact":
            return sigma
        return sigma * math.log(nv) ** 0.5 * math.log(math.log(nv)) / nv
    raise ParameterError(f"unknown rate kind {kind!r} (known: {', '.join(RATE_KINDS)})")
