"""Iterated-random-function time series.

Simulates X_n = G(X_{n-1}, eps_n) for contractive map families, measures the
geometric decay of coupled-path distances, and builds the m-dependent
coupled process (independent re-burned past, shared recent innovations)
together with its block empirical CDFs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import (
    NonFiniteError,
    ParameterError,
)
from .innovations import InnovationModel
from .seeding import make_stream

DEFAULT_BURN_IN = 512

#: stop fitting decay slopes once mean distances fall below this multiple of
#: machine epsilon
_DECAY_FLOOR_EPS = 10.0


def _e_log_abs(innovation: InnovationModel) -> float:
    """E log|eps| by quadrature against the model density."""
    f = lambda x: math.log(abs(x)) * float(innovation.pdf(x))
    total = 0.0
    s = innovation.scale
    for a, b in ((-np.inf, -s), (-s, 0.0), (0.0, s), (s, np.inf)):
        val, _ = integrate.quad(f, a, b, limit=200)
        total += val
    return total


@dataclass(frozen=True)
class IteratedMapModel:
    """A contractive bivariate recursion with its innovation law."""

    innovation: InnovationModel
    burn_in: int = DEFAULT_BURN_IN

    kind = "base"

    def __post_init__(self):
        if self.burn_in < 1:
            raise ParameterError(f"burn_in must be >= 1, got {self.burn_in}")
        self._check_contraction()

    def _check_contraction(self):
        raise NotImplementedError

    def step(self, x: np.ndarray, eps: np.ndarray) -> np.ndarray:
        """Vectorized G(x, eps)."""
        raise NotImplementedError


@dataclass(frozen=True)
class Ar1Map(IteratedMapModel):
    """G(x, eps) = a x + eps, |a| < 1."""

    a: float = 0.5
    kind = "ar1"

    def _check_contraction(self):
        if not abs(self.a) < 1:
            raise ParameterError(f"|a| must be < 1, got {self.a}")

    def step(self, x, eps):
        return self.a * x + eps


@dataclass(frozen=True)
class Arch1Map(IteratedMapModel):
    """G(x, eps) = eps sqrt(c0 + c1 x^2); contractive when
    E log(sqrt(c1) |eps|) < 0."""

    c0: float = 1.0
    c1: float = 0.3
    kind = "arch1"

    def _check_contraction(self):
        if self.c0 <= 0 or self.c1 <= 0:
            raise ParameterError("c0 and c1 must be > 0")
        lyap = 0.5 * math.log(self.c1) + _e_log_abs(self.innovation)
        if not lyap < 0:
            raise ParameterError(
                f"E log(sqrt(c1)|eps|) = {lyap:.4f} >= 0: not contractive"
            )

    def step(self, x, eps):
        return eps * np.sqrt(self.c0 + self.c1 * x * x)


@dataclass(frozen=True)
class TarMap(IteratedMapModel):
    """Threshold map G(x, eps) = phi_pos max(x,0) - phi_neg max(-x,0) + eps;
    Lipschitz constant max(|phi_pos|, |phi_neg|)."""

    phi_pos: float = 0.5
    phi_neg: float = 0.3
    kind = "tar"

    def _check_contraction(self):
        if not max(abs(self.phi_pos), abs(self.phi_neg)) < 1:
            raise ParameterError("max(|phi_pos|, |phi_neg|) must be < 1")

    def step(self, x, eps):
        return self.phi_pos * np.maximum(x, 0.0) - self.phi_neg * np.maximum(-x, 0.0) + eps


_MAPS = {"ar1": Ar1Map, "arch1": Arch1Map, "tar": TarMap}


def make_map(kind: str, innovation: InnovationModel, **params) -> IteratedMapModel:
    try:
        cls = _MAPS[kind]
    except KeyError:
        known = ", ".join(sorted(_MAPS))
        raise ParameterError(f"unknown map kind {kind!r} (known: {known})")
    try:
        return cls(innovation=innovation, **params)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for map {kind!r}: {exc}")


def _iterate(model, state, eps_matrix):
    """Run the recursion over the time axis of eps_matrix (steps, width)."""
    for t in range(eps_matrix.shape[0]):
        state = model.step(state, eps_matrix[t])
    return state


def simulate_chain(model: IteratedMapModel, n: int, seed: int) -> np.ndarray:
    """X_1..X_n after burn_in discarded iterations from a zero start."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    stream = make_stream(seed)
    eps = model.innovation.sample(stream, model.burn_in + n)
    x = 0.0
    for t in range(model.burn_in):
        x = float(model.step(np.asarray(x), np.asarray(eps[t])))
    out = np.empty(n)
    for t in range(n):
        x = float(model.step(np.asarray(x), np.asarray(eps[model.burn_in + t])))
        out[t] = x
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("recursion produced non-finite values")
    return out


def simulate_chains(model: IteratedMapModel, n: int, seeds) -> np.ndarray:
    """Independent chains, one per seed, vectorized across replicates.

    Returns an array (len(seeds), n).  Each chain consumes its own stream,
    so chain r is bit-identical to simulate_chain(model, n, seeds[r]).
    """
    seeds = list(seeds)
    r = len(seeds)
    total = model.burn_in + n
    eps = np.empty((r, total))
    for i, s in enumerate(seeds):
        eps[i] = model.innovation.sample(make_stream(s), total)
    state = np.zeros(r)
    for t in range(model.burn_in):
        state = model.step(state, eps[:, t])
    out = np.empty((r, n))
    for t in range(n):
        state = model.step(state, eps[:, model.burn_in + t])
        out[:, t] = state
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("recursion produced non-finite values")
    return out


@dataclass(eq=False)
class CoupledPaths:
    """Primary and shadow chains sharing innovations but with independent
    pasts, plus per-lag mean coupled distances |X_k - X'_k|^alpha."""

    primary: np.ndarray       # (replicates, lags+1)
    shadow: np.ndarray
    mean_distance: np.ndarray  # (lags+1,) averaged over replicates
    alpha: float


@dataclass(frozen=True)
class GmcReport:
    """Fitted geometric decay of coupled-moment distances."""

    lags: np.ndarray
    mean_distance: np.ndarray
    slope: float
    r_hat: float
    r_squared: float
    usable_lags: int
    degenerate: bool


def coupled_distances(model: IteratedMapModel, alpha: float, n_max: int,
                      replicates: int, seed: int) -> CoupledPaths:
    """Simulate coupled pairs: both chains burned in independently, then
    driven by the same innovations for n_max steps."""
    if replicates < 2:
        raise ParameterError("need at least 2 replicates")
    stream = make_stream(seed)
    innov = model.innovation
    burn = model.burn_in
    state_a = np.zeros(replicates)
    state_b = np.zeros(replicates)
    eps_a = innov.sample(stream, replicates * burn).reshape(burn, replicates)
    eps_b = innov.sample(stream, replicates * burn).reshape(burn, replicates)
    state_a = _iterate(model, state_a, eps_a)
    state_b = _iterate(model, state_b, eps_b)
    prim = np.empty((replicates, n_max + 1))
    shad = np.empty((replicates, n_max + 1))
    prim[:, 0] = state_a
    shad[:, 0] = state_b
    eps_shared = innov.sample(stream, replicates * n_max).reshape(n_max, replicates)
    for t in range(n_max):
        state_a = model.step(state_a, eps_shared[t])
        state_b = model.step(state_b, eps_shared[t])
        prim[:, t + 1] = state_a
        shad[:, t + 1] = state_b
    dist = np.mean(np.abs(prim - shad) ** alpha, axis=0)
    return CoupledPaths(primary=prim, shadow=shad, mean_distance=dist, alpha=alpha)


def estimate_gmc(model: IteratedMapModel, alpha: float, n_max: int = 40,
                 replicates: int = 2000, seed: int = 0) -> GmcReport:
    """Fit log E|X_k - X'_k|^alpha ~ k log r; r_hat = exp(slope).

    Requires alpha at or below the innovation's declared moment order.  If
    distances hit numerical zero before 5 usable lags the fit still runs on
    what is available and the report is flagged degenerate.
    """
    if alpha <= 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    if alpha > model.innovation.alpha_moment:
        raise ParameterError(
            f"alpha={alpha} exceeds the innovation moment order "
            f"{model.innovation.alpha_moment}"
        )
    if replicates < 100:
        raise ParameterError("GMC estimation needs >= 100 replicates")
    cp = coupled_distances(model, alpha, n_max, replicates, seed)
    dist = cp.mean_distance
    floor = _DECAY_FLOOR_EPS * np.finfo(float).eps * max(1.0, float(dist[0]))
    usable = dist > floor
    lags = np.arange(n_max + 1)[usable]
    vals = dist[usable]
    degenerate = lags.size < 5
    if lags.size < 2:
        return GmcReport(lags, vals, math.nan, math.nan, math.nan, lags.size, True)
    logs = np.log(vals)
    slope, intercept = np.polyfit(lags, logs, 1)
    pred = slope * lags + intercept
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - np.mean(logs)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan
    return GmcReport(
        lags=lags,
        mean_distance=vals,
        slope=float(slope),
        r_hat=float(math.exp(slope)),
        r_squared=r2,
        usable_lags=int(lags.size),
        degenerate=degenerate,
    )


@dataclass(eq=False)
class MDependentSample:
    """Original chain plus its m-dependent coupled companion.

    tilde[k] re-runs the recursion for m steps from an independently
    burned-in start, driven by the same innovations as the original, so
    tilde values more than m apart are independent while each keeps the
    stationary marginal.  start_gap records |independent start - X_{k-m}|.
    """

    original: np.ndarray
    tilde: np.ndarray
    m: int
    seed: int
    start_gap: np.ndarray


def simulate_m_dependent(model: IteratedMapModel, n: int, m: int,
                         seed: int) -> MDependentSample:
    if not (1 <= m < n):
        raise ParameterError(f"need 1 <= m < n, got m={m}, n={n}")
    stream = make_stream(seed)
    innov = model.innovation
    burn = model.burn_in
    presample = max(burn, m)
    eps = innov.sample(stream, presample + n)  # shared record, times 1-presample..n
    # original chain through the whole record
    x = 0.0
    hist = np.empty(presample + n + 1)  # hist[j] = X at time j - presample
    hist[0] = 0.0
    for t in range(presample + n):
        x = float(model.step(np.asarray(x), np.asarray(eps[t])))
        hist[t + 1] = x
    original = hist[presample + 1 :].copy()
    # independent starts: n separately burned-in states
    eps_ind = innov.sample(stream, n * burn).reshape(burn, n)
    starts = _iterate(model, np.zeros(n), eps_ind)
    # X_{k-m} for k = 1..n lives at hist index (k - m) + presample
    ref = hist[np.arange(1, n + 1) - m + presample]
    start_gap = np.abs(starts - ref)
    # drive each start with the shared eps_{k-m+1}..eps_k (eps index k-1+presample
    # holds eps_k); vectorize across k
    state = starts
    base = np.arange(1, n + 1) + presample - 1  # index of eps_k per column
    for s in range(m):
        idx = base - (m - 1) + s
        state = model.step(state, eps[idx])
    tilde = state
    if not (np.all(np.isfinite(tilde)) and np.all(np.isfinite(original))):
        raise NonFiniteError("recursion produced non-finite values")
    return MDependentSample(original=original, tilde=tilde, m=m, seed=int(seed),
                            start_gap=start_gap)


def block_ecdf(values, m: int, j: int, x) -> float:
    """Block empirical CDF over indices j, j+m, j+2m, ... (1-based).

    The block for offset j has 1 + A_n(j) members with A_n(j) = floor(n/m)
    when j <= n - m floor(n/m) and floor(n/m) - 1 otherwise.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if not (1 <= m <= n):
        raise ParameterError(f"need 1 <= m <= n, got m={m}, n={n}")
    if not (1 <= j <= m):
        raise IndexError(f"block offset j must be in [1, {m}], got {j}")
    q = n // m
    a_n = q if j <= n - m * q else q - 1
    idx = j + m * np.arange(a_n + 1)  # 1-based
    picked = values[idx - 1]
    x = np.asarray(x, dtype=float)
    out = np.mean(picked[None, :] <= np.atleast_1d(x)[:, None], axis=1)
    return out if np.ndim(x) else float(out[0])


def block_count(n: int, m: int, j: int) -> int:
    """1 + A_n(j): number of members of block j."""
    q = n // m
    a_n = q if j <= n - m * q else q - 1
    return a_n + 1
