"""Innovation distributions with exact samplers and smooth density machinery.

Every family exposes the same surface: ``sample`` (inverse-CDF or exact
transform only, so a (seed, count) pair always consumes a fixed number of
stream values), ``cdf``, ``pdf`` and ``pdf_deriv`` in closed form, plus the
declared moment order ``alpha_moment`` (largest a with E|eps|^a < inf).

Location is fixed at 0.  ``scale`` means: standard deviation for gaussian,
support width for the uniforms, the usual scale parameter for student_t and
logistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ParameterError

# Declared margin below nu for the student_t moment order: E|t_nu|^a < inf
# iff a < nu, so the declarable order sits strictly below nu.
T_MOMENT_MARGIN = 1e-6

# Mollification width of the smoothed uniform, as a fraction of scale.
SMOOTHWRAP_RATIO = 1e-2

_SQRT2PI = math.sqrt(2.0 * math.pi)

# random() yields u in [0, 1); floor it away from 0 before inverse CDFs.
_U_FLOOR = 1e-300


def _norm_pdf(z):
    return np.exp(-0.5 * z * z) / _SQRT2PI


@dataclass(frozen=True)
class InnovationModel:
    """Common surface of all innovation families."""

    scale: float = 1.0

    family = "base"
    symmetric = True
    smooth = True  # bounded f_eps' and f_eps'' everywhere

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ParameterError(f"scale must be finite and > 0, got {self.scale}")

    # subclasses implement the standardized (scale=1) versions
    def _std_cdf(self, z):
        raise NotImplementedError

    def _std_pdf(self, z):
        raise NotImplementedError

    def _std_pdf_d1(self, z):
        raise NotImplementedError

    def _std_pdf_d2(self, z):
        raise NotImplementedError

    def _std_sample(self, stream, count):
        raise NotImplementedError

    @property
    def alpha_moment(self) -> float:
        return math.inf

    def variance(self) -> float:
        """Exact variance, inf when the declared moment order is below 2."""
        raise NotImplementedError

    def cdf(self, x):
        z = np.asarray(x, dtype=float) / self.scale
        return self._std_cdf(z)

    def pdf(self, x):
        z = np.asarray(x, dtype=float) / self.scale
        return self._std_pdf(z) / self.scale

    def pdf_deriv(self, x, order: int = 1):
        if order not in (1, 2):
            raise ParameterError(f"order must be 1 or 2, got {order}")
        z = np.asarray(x, dtype=float) / self.scale
        if order == 1:
            return self._std_pdf_d1(z) / self.scale**2
        return self._std_pdf_d2(z) / self.scale**3

    def sample(self, stream: np.random.Generator, count: int) -> np.ndarray:
        if count < 1:
            raise ParameterError(f"count must be >= 1, got {count}")
        return self._std_sample(stream, int(count)) * self.scale


@dataclass(frozen=True)
class Gaussian(InnovationModel):
    family = "gaussian"

    def _std_cdf(self, z):
        return special.ndtr(z)

    def _std_pdf(self, z):
        return _norm_pdf(z)

    def _std_pdf_d1(self, z):
        return -z * _norm_pdf(z)

    def _std_pdf_d2(self, z):
        return (z * z - 1.0) * _norm_pdf(z)

    def _std_sample(self, stream, count):
        u = np.maximum(stream.random(count), _U_FLOOR)
        return special.ndtri(u)

    def variance(self):
        return self.scale**2


@dataclass(frozen=True)
class Uniform(InnovationModel):
    """Pure uniform on (-scale/2, scale/2).

    The density has jumps at the support edges, so the smooth-density
    conditions the other families satisfy do not hold here; it exists for
    i.i.d. experiments where the innovation density never enters
    analytically.  ``pdf_deriv`` returns the almost-everywhere value 0.
    """

    family = "uniform"
    smooth = False

    def _std_cdf(self, z):
        return np.clip(z + 0.5, 0.0, 1.0)

    def _std_pdf(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(np.abs(z) <= 0.5, 1.0, 0.0)

    def _std_pdf_d1(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def _std_pdf_d2(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def _std_sample(self, stream, count):
        return stream.random(count) - 0.5

    def variance(self):
        return self.scale**2 / 12.0


@dataclass(frozen=True)
class SmoothedUniform(InnovationModel):
    """Uniform on (-scale/2, scale/2) convolved with N(0, (ratio*scale)^2).

    The narrow Gaussian mollification makes the density twice continuously
    differentiable with bounded derivatives while staying within O(ratio)
    of the flat density.  Consumes two stream values per draw.
    """

    family = "uniform_smoothwrap"
    mollify_ratio: float = SMOOTHWRAP_RATIO

    def __post_init__(self):
        super().__post_init__()
        if not (0 < self.mollify_ratio < 0.5):
            raise ParameterError("mollify_ratio must be in (0, 0.5)")

    # standardized: U(-1/2, 1/2) + ratio * Z
    @property
    def _r(self):
        return self.mollify_ratio

    def _std_cdf(self, z):
        r = self._r
        z = np.asarray(z, dtype=float)
        zp = (z + 0.5) / r
        zm = (z - 0.5) / r
        g = lambda t: t * special.ndtr(t) + _norm_pdf(t)  # antiderivative of ndtr
        # g(t) = t + g(-t) exactly; splitting off the linear parts avoids
        # cancellation between two large terms (middle and right regimes)
        out = np.where(
            zm > 0,
            1.0 + r * (g(-zp) - g(-zm)),
            np.where(zp > 0,
                     (z + 0.5) + r * (g(-zp) - g(zm)),
                     r * (g(zp) - g(zm))),
        )
        return np.clip(out, 0.0, 1.0)

    def _std_pdf(self, z):
        r = self._r
        s = np.abs(np.asarray(z, dtype=float))  # even function, evaluate on |z|
        return special.ndtr((s + 0.5) / r) - special.ndtr((s - 0.5) / r)

    def _std_pdf_d1(self, z):
        r = self._r
        z = np.asarray(z, dtype=float)
        return (_norm_pdf((z + 0.5) / r) - _norm_pdf((z - 0.5) / r)) / r

    def _std_pdf_d2(self, z):
        r = self._r
        z = np.asarray(z, dtype=float)
        zp = (z + 0.5) / r
        zm = (z - 0.5) / r
        return (-zp * _norm_pdf(zp) + zm * _norm_pdf(zm)) / r**2

    def _std_sample(self, stream, count):
        u = stream.random((2, count))
        z = special.ndtri(np.maximum(u[1], _U_FLOOR))
        return (u[0] - 0.5) + self._r * z

    def variance(self):
        return self.scale**2 * (1.0 / 12.0 + self._r**2)


@dataclass(frozen=True)
class StudentT(InnovationModel):
    """Student t with tail index nu; heavy tails P(|eps|>x) ~ c x^-nu."""

    nu: float = 3.0
    family = "student_t"

    def __post_init__(self):
        super().__post_init__()
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise ParameterError(f"nu must be finite and > 0, got {self.nu}")

    @property
    def alpha_moment(self):
        return self.nu - T_MOMENT_MARGIN

    @property
    def _norm_const(self):
        nu = self.nu
        return math.gamma((nu + 1) / 2) / (math.sqrt(nu * math.pi) * math.gamma(nu / 2))

    def _std_cdf(self, z):
        return special.stdtr(self.nu, z)

    def _std_pdf(self, z):
        nu = self.nu
        z = np.asarray(z, dtype=float)
        return self._norm_const * (1.0 + z * z / nu) ** (-(nu + 1) / 2)

    def _std_pdf_d1(self, z):
        nu = self.nu
        z = np.asarray(z, dtype=float)
        return self._std_pdf(z) * (-(nu + 1) * z / (nu + z * z))

    def _std_pdf_d2(self, z):
        nu = self.nu
        z = np.asarray(z, dtype=float)
        return self._std_pdf(z) * (nu + 1) * ((nu + 2) * z * z - nu) / (nu + z * z) ** 2

    def _std_sample(self, stream, count):
        u = np.maximum(stream.random(count), _U_FLOOR)
        return special.stdtrit(self.nu, u)

    def variance(self):
        if self.nu <= 2:
            return math.inf
        return self.scale**2 * self.nu / (self.nu - 2.0)


@dataclass(frozen=True)
class Logistic(InnovationModel):
    family = "logistic"

    def _std_cdf(self, z):
        return special.expit(z)

    def _std_pdf(self, z):
        # even function: evaluate on -|z| so pdf(x) == pdf(-x) bitwise
        p = special.expit(-np.abs(np.asarray(z, dtype=float)))
        return p * (1.0 - p)

    def _std_pdf_d1(self, z):
        p = special.expit(np.asarray(z, dtype=float))
        f = p * (1.0 - p)
        return f * (1.0 - 2.0 * p)

    def _std_pdf_d2(self, z):
        p = special.expit(np.asarray(z, dtype=float))
        f = p * (1.0 - p)
        return f * ((1.0 - 2.0 * p) ** 2 - 2.0 * f)

    def _std_sample(self, stream, count):
        u = np.maximum(stream.random(count), _U_FLOOR)
        return np.log(u) - np.log1p(-u)

    def variance(self):
        return self.scale**2 * math.pi**2 / 3.0


_FAMILIES = {
    "gaussian": Gaussian,
    "uniform": Uniform,
    "uniform_smoothwrap": SmoothedUniform,
    "student_t": StudentT,
    "logistic": Logistic,
}


def make_innovation(family: str, **params) -> InnovationModel:
    """Build an innovation model from a family name and parameter map."""
    try:
        cls = _FAMILIES[family]
    except KeyError:
        known = ", ".join(sorted(_FAMILIES))
        raise ParameterError(f"unknown innovation family {family!r} (known: {known})")
    try:
        return cls(**params)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for family {family!r}: {exc}")


FAMILY_NAMES = tuple(sorted(_FAMILIES))
