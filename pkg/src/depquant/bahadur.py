"""Bahadur remainders, the uniform remainder over quantile ranges, the
iterated-logarithm constant for i.i.d. data, and the first-order empirical
expansion quantities with their localized increment statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .empirical import (
    EmpiricalSample,
    conditional_cdf,
    ecdf_eval,
    sample_quantile,
)
from .errors import (
    BoundaryRefusalError,
    DensityTooSmallError,
    DomainError,
    ParameterError,
)
from .linear_process import LrdSchedule

#: oracle density below this multiple of the oracle precision makes the
#: linear term unreliable
DENSITY_PRECISION_FACTOR = 10.0

#: half-width of the refused band around the increment dichotomy boundary
BOUNDARY_MARGIN = 0.02


@dataclass(frozen=True)
class BahadurDecomposition:
    """Sample-quantile error split into linear term, long-memory correction
    and remainder.

    remainder_srd = xi_np - xi_p - (p - F_n(xi_p)) / f(xi_p)
    remainder_lrd = remainder_srd - xbar^2 f'(xi_p) / (2 f(xi_p))
    """

    p: float
    xi_p: float
    xi_np: float
    linear_term: float
    correction_term: float
    remainder_srd: float
    remainder_lrd: float
    error_bar: float  # oracle precision propagated through 1/f(xi_p)

    @property
    def remainder(self) -> float:
        return self.remainder_lrd

    def pick(self, corrected: bool) -> float:
        return self.remainder_lrd if corrected else self.remainder_srd


def _check_density(fp, precision):
    if np.any(fp < DENSITY_PRECISION_FACTOR * max(precision, 0.0)):
        raise DensityTooSmallError(
            f"oracle density {np.min(fp):.3g} below {DENSITY_PRECISION_FACTOR} x "
            f"oracle precision {precision:.3g}"
        )


@dataclass(frozen=True)
class QuantileAnchor:
    """Oracle quantities at a fixed level p, precomputed so replicate loops
    do not re-run the oracle's quantile search."""

    p: float
    xi_p: float
    density: float
    density_deriv: float
    precision: float


def anchor(oracle, p: float) -> QuantileAnchor:
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must be in (0,1), got {p}")
    xi_p = float(oracle.quantile(p))
    fp = float(oracle.pdf(xi_p))
    _check_density(fp, oracle.precision)
    return QuantileAnchor(
        p=p,
        xi_p=xi_p,
        density=fp,
        density_deriv=float(oracle.pdf_deriv(xi_p, 1)),
        precision=oracle.precision,
    )


def remainder_at(sample: EmpiricalSample, anc: QuantileAnchor) -> BahadurDecomposition:
    xi_np = sample_quantile(sample, anc.p)
    xbar = float(np.mean(sample.values))
    linear = (anc.p - ecdf_eval(sample, anc.xi_p)) / anc.density
    correction = xbar * xbar * anc.density_deriv / (2.0 * anc.density)
    rem_srd = xi_np - anc.xi_p - linear
    return BahadurDecomposition(
        p=anc.p,
        xi_p=anc.xi_p,
        xi_np=xi_np,
        linear_term=linear,
        correction_term=correction,
        remainder_srd=rem_srd,
        remainder_lrd=rem_srd - correction,
        error_bar=anc.precision / anc.density,
    )


def remainder(sample: EmpiricalSample, p: float, oracle,
              corrected: bool = False) -> BahadurDecomposition:
    """Full remainder decomposition at a single quantile level."""
    return remainder_at(sample, anchor(oracle, p))


@dataclass(frozen=True)
class UniformRemainder:
    sup: float
    argmax_p: float
    grid_size: int
    error_bar: float


def _augment_p_grid(n: int, grid: np.ndarray, p0: float, p1: float) -> np.ndarray:
    """User grid plus every F_n jump level i/n (and its right approach)
    inside [p0, p1], so the sup over the step-quantile map is resolved."""
    i0 = int(math.ceil(n * p0))
    i1 = int(math.floor(n * p1))
    levels = np.arange(max(i0, 1), min(i1, n - 1) + 1, dtype=float) / n
    levels = levels[(levels > p0) & (levels < p1)]
    pts = np.concatenate([grid, levels, np.nextafter(levels, 1.0)])
    pts = pts[(pts >= p0) & (pts <= p1)]
    return np.unique(pts)


@dataclass(frozen=True)
class UniformAnchor:
    """Oracle quantities over the augmented level grid for samples of a
    fixed size n (the augmentation depends on n through the jump levels)."""

    n: int
    levels: np.ndarray
    xi: np.ndarray
    density: np.ndarray
    density_deriv: np.ndarray
    precision: float


def uniform_anchor(oracle, p_grid, n: int) -> UniformAnchor:
    grid = np.atleast_1d(np.asarray(p_grid, dtype=float))
    if grid.size < 1 or np.any((grid <= 0) | (grid >= 1)):
        raise DomainError("p grid must be a nonempty subset of (0, 1)")
    p0, p1 = float(np.min(grid)), float(np.max(grid))
    ps = _augment_p_grid(n, grid, p0, p1) if grid.size > 1 else grid
    xi = np.atleast_1d(np.asarray(oracle.quantile(ps)))
    fp = np.atleast_1d(np.asarray(oracle.pdf(xi)))
    _check_density(fp, oracle.precision)
    dfp = np.atleast_1d(np.asarray(oracle.pdf_deriv(xi, 1)))
    return UniformAnchor(n=int(n), levels=ps, xi=xi, density=fp,
                         density_deriv=dfp, precision=oracle.precision)


def uniform_remainder_at(sample: EmpiricalSample, anc: UniformAnchor,
                         corrected: bool = False) -> UniformRemainder:
    if sample.n != anc.n:
        raise ParameterError(f"anchor built for n={anc.n}, sample has n={sample.n}")
    ps = anc.levels
    xi_np = sample_quantile(sample, ps)
    linear = (ps - ecdf_eval(sample, anc.xi)) / anc.density
    rem = xi_np - anc.xi - linear
    if corrected:
        xbar = float(np.mean(sample.values))
        rem = rem - xbar * xbar * anc.density_deriv / (2.0 * anc.density)
    k = int(np.argmax(np.abs(rem)))
    return UniformRemainder(
        sup=float(np.abs(rem[k])),
        argmax_p=float(ps[k]),
        grid_size=ps.size,
        error_bar=float(anc.precision / np.min(anc.density)),
    )


def uniform_remainder(sample: EmpiricalSample, p_grid, oracle,
                      corrected: bool = False) -> UniformRemainder:
    """sup over the augmented grid of |remainder(p)| plus its argmax."""
    return uniform_remainder_at(sample, uniform_anchor(oracle, p_grid, sample.n),
                                corrected)


def kiefer_limit(p: float, f_at_quantile: float) -> float:
    """Exact limsup constant of the normalized i.i.d. remainder:
    2^(5/4) 3^(-3/4) sqrt(p(1-p)) / f(xi_p)."""
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must be in (0,1), got {p}")
    if f_at_quantile <= 0:
        raise DomainError("density at the quantile must be positive")
    return 2.0 ** 1.25 * 3.0 ** -0.75 * math.sqrt(p * (1.0 - p)) / f_at_quantile


@dataclass(frozen=True)
class ExpansionRemainder:
    """First-order expansion quantities at a point y.

    s1 = n [F_n(y) - F(y) + f(y) xbar]      (empirical side)
    h  = n [F_n*(y) - F(y) + f(y) xbar]     (conditional side)
    They differ by exactly n M_n(y).
    """

    s1: float
    h: float

    @property
    def n_mn(self) -> float:
        return self.s1 - self.h


def expansion_remainder(path, oracle, y: float) -> ExpansionRemainder:
    sample = EmpiricalSample.from_path(path)
    n = sample.n
    f_y = float(oracle.cdf(y))
    dens = float(oracle.pdf(y))
    xbar = float(np.mean(sample.values))
    fn = ecdf_eval(sample, y)
    fstar = conditional_cdf(sample, path.innovation, y)
    common = -f_y + dens * xbar
    return ExpansionRemainder(s1=n * (fn + common), h=n * (fstar + common))


@dataclass(frozen=True)
class IncrementStatistic:
    raw: float
    normalized: float
    branch: str
    norm_factor: float


def resolve_branch(branch, schedule, n, delta):
    """Pick the increment normalization branch; 'auto' infers the window
    exponent from (n, delta) and refuses choices too close to the boundary."""
    if branch in ("gaussian", "rosenblatt"):
        return branch
    if branch != "auto":
        raise ParameterError(f"branch must be gaussian|rosenblatt|auto, got {branch}")
    if not isinstance(schedule, LrdSchedule):
        return "gaussian"
    gamma = math.log(delta) / math.log(n)
    margin = 4.0 * schedule.beta - 3.0 - gamma
    if abs(margin) < BOUNDARY_MARGIN:
        raise BoundaryRefusalError(
            f"4 beta - 3 - gamma = {margin:.4f} lies within {BOUNDARY_MARGIN} of the "
            "dichotomy boundary; choose the branch explicitly"
        )
    return "gaussian" if margin > 0 else "rosenblatt"


def increment_statistic(path, oracle, x: float, delta: float,
                        branch: str = "auto") -> IncrementStatistic:
    """Raw and normalized increment of the first-order expansion remainder
    over [x, x + delta].

    gaussian branch normalizes by sqrt(n delta); rosenblatt branch by
    sigma_{n,2} delta with sigma_{n,2} = n^(2-2 beta) L(n)^2 (long-memory
    schedules only).
    """
    if delta < 0:
        raise ParameterError(f"delta must be >= 0, got {delta}")
    n = path.n
    if delta == 0.0:
        return IncrementStatistic(0.0, 0.0, "degenerate", 1.0)
    chosen = resolve_branch(branch, path.schedule, n, delta)
    sample = EmpiricalSample.from_path(path)
    xbar = float(np.mean(sample.values))
    pts = np.asarray([x, x + delta])
    fn = ecdf_eval(sample, pts)
    f_true = np.asarray(oracle.cdf(pts))
    dens = np.asarray(oracle.pdf(pts))
    s_vals = n * (fn - f_true + dens * xbar)
    raw = float(s_vals[1] - s_vals[0])
    if chosen == "gaussian":
        norm = math.sqrt(n * delta)
    else:
        sched = path.schedule
        if not isinstance(sched, LrdSchedule):
            raise DomainError("rosenblatt normalization needs a long-memory schedule")
        l_n = float(sched.slowly_varying(np.asarray(n)))
        norm = n ** (2.0 - 2.0 * sched.beta) * l_n**2 * delta
    return IncrementStatistic(raw=raw, normalized=raw / norm, branch=chosen,
                              norm_factor=norm)
