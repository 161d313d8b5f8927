import math

import numpy as np
import pytest
from scipy import special, stats

from depquant.errors import (
    DivergentTailError,
    DomainError,
    ParameterError,
    UnsupportedCombinationError,
)
from depquant.innovations import Gaussian, StudentT, Uniform
from depquant.linear_process import (
    GeometricSchedule,
    IIDSchedule,
    LrdSchedule,
    PolynomialSchedule,
    PreparedFilter,
    build_marginal_oracle,
    load_oracle_table,
    make_schedule,
    plan_truncation,
    rate_function,
    save_oracle_table,
    simulate_path,
    tail_square_sum,
)
from depquant.seeding import make_stream

GEOM = GeometricSchedule(rho=0.5)
GAUSS = Gaussian()


# ---------------------------------------------------------------------------
# coefficients and tails
# ---------------------------------------------------------------------------


def test_coefficient_values():
    assert float(GEOM.coefficient(np.asarray(3))) == 0.125
    lrd = LrdSchedule(beta=0.6)
    direct = float(lrd.coefficient(np.asarray(4)))
    via_logs = math.exp(-0.6 * math.log(4.0))
    assert direct == pytest.approx(4.0**-0.6, rel=1e-14)
    assert direct == pytest.approx(via_logs, rel=1e-12)
    for sched in (IIDSchedule(), GEOM, PolynomialSchedule(r=3.0), lrd):
        assert float(sched.coefficient(np.asarray(0))) == 1.0


def test_iid_coefficients_vanish():
    sched = IIDSchedule()
    assert np.all(sched.coefficients(20)[1:] == 0.0)
    assert sched.tail_abs_sum(1) == 0.0
    assert sched.tail_abs_sum(7, 0.5) == 0.0


def test_geometric_tail_closed_form():
    assert GEOM.tail_abs_sum(2, 1.0) == pytest.approx(0.5, rel=1e-14)
    # exponent < 1: sum (1/2)^(i/2) from 3
    q = 0.5**0.5
    assert GEOM.tail_abs_sum(3, 0.5) == pytest.approx(q**3 / (1 - q), rel=1e-12)


def test_polynomial_tail_bracketed_vs_zeta():
    sched = PolynomialSchedule(r=3.0)
    exact = float(special.zeta(3.0)) - 1.0 - 2.0**-3
    assert sched.tail_abs_sum(3, 1.0) == pytest.approx(exact, rel=1e-7)
    with pytest.raises(DivergentTailError):
        sched.tail_abs_sum(5, 0.3)  # 3 * 0.3 < 1


def test_lrd_tail_always_divergent():
    with pytest.raises(DivergentTailError):
        LrdSchedule(beta=0.6).tail_abs_sum(2, 1.0)
    with pytest.raises(DivergentTailError):
        LrdSchedule(beta=0.95).tail_abs_sum(2, 0.9)


def test_lrd_coefficients_positive_eventually_decreasing():
    sched = LrdSchedule(beta=0.7, slowvary="log_power", gamma_log=1.5)
    coefs = sched.coefficients(5000)[1:]
    assert np.all(coefs > 0)
    assert np.all(np.diff(coefs[100:]) < 0)


def test_tail_square_sum_matches_direct():
    direct = float(np.sum(GEOM.coefficients(4000)[11:] ** 2))
    assert tail_square_sum(GEOM, 10) == pytest.approx(direct, rel=1e-12)
    lrd = LrdSchedule(beta=0.75)
    k = 3_000_000
    head = float(np.sum(lrd.coefficients(k)[101:] ** 2))
    # integral bracket for the remaining sum of i^(-1.5) beyond k
    rem_lo, rem_hi = 2.0 / math.sqrt(k + 1), 2.0 / math.sqrt(k)
    got = tail_square_sum(lrd, 100)
    assert head + rem_lo <= got <= head + rem_hi + 1e-9


def test_schedule_parameter_validation():
    with pytest.raises(ParameterError):
        GeometricSchedule(rho=0.0)
    with pytest.raises(ParameterError):
        GeometricSchedule(rho=1.0)
    with pytest.raises(ParameterError):
        PolynomialSchedule(r=1.0)
    with pytest.raises(ParameterError):
        LrdSchedule(beta=0.5)
    with pytest.raises(ParameterError):
        LrdSchedule(beta=1.2)
    with pytest.raises(ParameterError):
        make_schedule("unknown_kind")


# ---------------------------------------------------------------------------
# truncation planning and simulation
# ---------------------------------------------------------------------------


def test_plan_truncation_srd_meets_tolerance():
    plan = plan_truncation(GEOM, GAUSS, 100, 1e-4)
    assert plan.met
    assert GEOM.tail_abs_sum(plan.lag, 1.0) * GAUSS.scale < 1e-4
    assert GEOM.tail_abs_sum(plan.lag - 1, 1.0) * GAUSS.scale >= 1e-4


def test_plan_truncation_lrd_rules():
    lrd = LrdSchedule(beta=0.75)
    plan = plan_truncation(lrd, GAUSS, 2**14, 1e-4)
    assert plan.met
    assert plan.lag >= 2**14
    assert float(lrd.coefficient(np.asarray(plan.lag))) < 1e-4
    capped = plan_truncation(LrdSchedule(beta=0.55), GAUSS, 2**14, 1e-4, m_max=10_000)
    assert not capped.met
    assert capped.lag == 10_000
    assert capped.achieved_tolerance > 1e-4


def test_iid_path_is_innovation_sequence():
    path = simulate_path(IIDSchedule(), GAUSS, 64, 1e-4, seed=3)
    assert np.array_equal(path.values, path.innovations)
    assert np.all(path.lagged_locations == 0.0)


def test_path_identity_and_determinism():
    p1 = simulate_path(GEOM, GAUSS, 5000, 1e-4, seed=42)
    p2 = simulate_path(GEOM, GAUSS, 5000, 1e-4, seed=42)
    assert np.array_equal(p1.values, p2.values)
    assert np.array_equal(
        p1.values, p1.lagged_locations + p1.innovations[p1.truncation_lag:]
    )
    p3 = simulate_path(GEOM, GAUSS, 5000, 1e-4, seed=43)
    assert not np.array_equal(p1.values, p3.values)


def test_geometric_lag1_autocorrelation():
    # filter-sum oracle: rho(1) = sum a_i a_{i+1} / sum a_i^2
    a = GEOM.coefficients(200)
    target = float(np.sum(a[:-1] * a[1:]) / np.sum(a * a))
    path = simulate_path(GEOM, GAUSS, 10**5, 1e-4, seed=5)
    v = path.values
    emp = float(np.corrcoef(v[:-1], v[1:])[0, 1])
    assert abs(emp - target) < 0.01


def test_lrd_block_sum_variance_matches_truncated_formula():
    # exact finite-sum oracle from the truncated coefficient array
    n = 2**14
    tol = 1e-3
    lrd = LrdSchedule(beta=0.75)
    plan = plan_truncation(lrd, GAUSS, n, tol)
    m = plan.lag
    a = lrd.coefficients(m)
    prefix = np.concatenate(([0.0], np.cumsum(a)))
    head = np.sum(prefix[1 : n + 1] ** 2) if m >= n else None
    # weights of each innovation j in sum_{i=1..n} X_i for the truncated filter
    mm = np.arange(0, m)
    top = np.minimum(n + mm, m)
    target = float(np.sum(prefix[1 : min(n, m + 1)] ** 2)
                   + np.sum((prefix[top + 1] - prefix[mm + 1]) ** 2))
    prepared = PreparedFilter(a, n + m)
    reps = 6000
    sums = np.empty(reps)
    for r in range(reps):
        path = simulate_path(lrd, GAUSS, n, tol, seed=10_000 + r,
                             plan=plan, prepared=prepared)
        sums[r] = path.values.sum()
    assert np.var(sums) == pytest.approx(target, rel=0.05)


def test_path_marginal_ks_against_oracle():
    # thinned to near-independence so the i.i.d. KS band applies
    n = 10**5
    path = simulate_path(GEOM, GAUSS, n, 1e-4, seed=9)
    oracle = build_marginal_oracle(GEOM, GAUSS, seed=1)
    thinned = path.values[::8]
    d = stats.kstest(thinned, lambda t: np.asarray(oracle.cdf(t))).statistic
    assert d <= 1.63 / math.sqrt(thinned.size)


def test_aggregate_tail_restores_marginal_variance():
    lrd = LrdSchedule(beta=0.6)
    n, tol = 4096, 1e-3
    plan = plan_truncation(lrd, GAUSS, n, tol, m_max=50_000)
    reps = 400
    block = np.empty(reps)
    for r in range(reps):
        p = simulate_path(lrd, GAUSS, n, tol, seed=70_000 + r, plan=plan,
                          m_max=50_000, aggregate_tail=True)
        block[r] = p.values[0]
        assert p.aggregated_tail_sd > 0
        assert np.array_equal(
            p.values, p.lagged_locations + p.innovations[p.truncation_lag:]
        )
    full_var = float(np.sum(lrd.coefficients(plan.lag) ** 2)
                     + tail_square_sum(lrd, plan.lag))
    assert np.var(block) == pytest.approx(full_var, rel=0.25)


def test_aggregate_tail_rejects_infinite_variance():
    with pytest.raises(ParameterError):
        simulate_path(PolynomialSchedule(r=3.0), StudentT(nu=1.5), 100, 1e-4,
                      seed=1, aggregate_tail=True)


# ---------------------------------------------------------------------------
# marginal oracles
# ---------------------------------------------------------------------------


def test_iid_oracle_is_innovation_law():
    oracle = build_marginal_oracle(IIDSchedule(), GAUSS, seed=2)
    x = np.linspace(-3, 3, 11)
    assert np.array_equal(np.asarray(oracle.cdf(x)), np.asarray(GAUSS.cdf(x)))
    assert oracle.precision <= 1e-9


def test_gaussian_marginal_closed_form():
    oracle = build_marginal_oracle(GEOM, GAUSS, seed=2)
    assert oracle.sd == pytest.approx(math.sqrt(4.0 / 3.0), rel=1e-9)
    assert abs(float(oracle.quantile(0.5))) < 1e-3
    assert float(oracle.pdf(0.0)) == pytest.approx(
        1.0 / math.sqrt(2 * math.pi * 4 / 3), rel=1e-9
    )


def test_mc_oracle_cross_checks_closed_form():
    # the Monte Carlo construction against the exact gaussian marginal
    mc = build_marginal_oracle(GEOM, GAUSS, r_oracle=40_000, seed=3, method="mc")
    assert mc.method == "mc"
    assert abs(float(mc.quantile(0.5))) < 1e-2
    target = 1.0 / math.sqrt(2 * math.pi * 4 / 3)
    assert abs(float(mc.pdf(0.0)) - target) <= 3 * mc.precision
    exact = build_marginal_oracle(GEOM, GAUSS, seed=3)
    grid = np.linspace(-2, 2, 9)
    assert np.max(np.abs(mc.cdf(grid) - exact.cdf(grid))) <= 4 * mc.precision


def test_oracle_quantile_cdf_consistency():
    for oracle in (
        build_marginal_oracle(GEOM, GAUSS, seed=4),
        build_marginal_oracle(GEOM, StudentT(nu=3.0), r_oracle=20_000, seed=4),
    ):
        for p in (0.1, 0.25, 0.5, 0.75, 0.9):
            xi = float(oracle.quantile(p))
            assert abs(float(oracle.cdf(xi)) - p) <= 2 * max(oracle.precision, 1e-8)


def test_oracle_density_matches_cdf_derivative():
    oracle = build_marginal_oracle(GEOM, StudentT(nu=3.0), r_oracle=20_000, seed=5)
    h = 1e-4
    grid = np.linspace(-2, 2, 21)
    fd = (np.asarray(oracle.cdf(grid + h)) - np.asarray(oracle.cdf(grid - h))) / (2 * h)
    err = np.max(np.abs(np.asarray(oracle.pdf(grid)) - fd))
    assert err <= max(1e-3, 5 * oracle.precision)


def test_oracle_cdf_monotone_on_grid():
    oracle = build_marginal_oracle(GEOM, StudentT(nu=3.0), r_oracle=10_000, seed=6)
    grid = np.linspace(-6, 6, 301)
    assert np.all(np.diff(np.asarray(oracle.cdf(grid))) >= -1e-15)


def test_oracle_rejects_invalid_quantile_levels():
    oracle = build_marginal_oracle(GEOM, GAUSS, seed=1)
    with pytest.raises(DomainError):
        oracle.quantile(0.0)
    with pytest.raises(DomainError):
        oracle.quantile(1.5)


def test_exact_method_unavailable_for_nongaussian():
    with pytest.raises(UnsupportedCombinationError):
        build_marginal_oracle(GEOM, StudentT(nu=3.0), method="exact")


def test_oracle_table_roundtrip(tmp_path):
    oracle = build_marginal_oracle(GEOM, GAUSS, seed=7)
    path = tmp_path / "oracle.csv"
    save_oracle_table(oracle, path, num=2049)
    loaded = load_oracle_table(path)
    grid = np.linspace(-2.5, 2.5, 41)
    assert np.max(np.abs(loaded.cdf(grid) - oracle.cdf(grid))) < 1e-7
    assert np.max(np.abs(loaded.pdf(grid) - oracle.pdf(grid))) < 1e-7
    assert abs(float(loaded.quantile(0.3)) - float(oracle.quantile(0.3))) < 1e-5


# ---------------------------------------------------------------------------
# rate functions
# ---------------------------------------------------------------------------


def test_lrd_exponent_values():
    assert rate_function("lrd_exponent", beta=0.6) == pytest.approx(-0.3)
    both = rate_function("lrd_exponent", beta=0.7)
    assert both == pytest.approx(-0.6)
    assert both == pytest.approx(max(-0.7 / 2 - 0.25, 1.5 - 3 * 0.7))


def test_c_beta_quadrature_vs_beta_identity():
    got = rate_function("c_beta", beta=0.75, sigma_eps2=1.0)
    assert got == pytest.approx(float(special.beta(0.25, 0.5)), rel=1e-6)
    assert got == pytest.approx(5.2441, abs=5e-4)
    doubled = rate_function("c_beta", beta=0.75, sigma_eps2=2.0)
    assert doubled == pytest.approx(2 * got, rel=1e-12)


def test_kiefer_scale_and_ell_iota():
    n = 2**16
    assert rate_function("kiefer_scale", n) == pytest.approx(
        n**-0.75 * math.log(math.log(n)) ** 0.75
    )
    assert rate_function("ell_q", n, q=4.0) == pytest.approx(
        math.log(math.log(n)) ** 0.5
    )
    assert rate_function("ell_q", n, q=2.0) == pytest.approx(
        math.log(n) ** 1.5 * math.log(math.log(n))
    )
    assert rate_function("iota_q", n, q=4.0) == pytest.approx(
        math.log(n) ** 0.25 * math.log(math.log(n)) ** 0.5
    )


def test_rate_function_domain_guards():
    with pytest.raises(DomainError):
        rate_function("kiefer_scale", 8)
    with pytest.raises(DomainError):
        rate_function("ell_q", 15, q=4.0)
    with pytest.raises(DomainError):
        rate_function("lrd_exponent", beta=0.4)
    with pytest.raises(ParameterError):
        rate_function("no_such_kind", 100)
    with pytest.raises(ParameterError):
        rate_function("psi", 2**12, beta=0.75, bogus=1)


def test_sigma_kinds_reject_infinite_variance():
    with pytest.raises(DomainError):
        rate_function("sigma_n1_exact", 2**12, beta=0.6,
                      sigma_eps2=StudentT(nu=1.5).variance())
    with pytest.raises(DomainError):
        rate_function("c_beta", beta=0.6, sigma_eps2=math.inf)


def test_sigma_ratio_tends_to_one_monotonically():
    devs = []
    for e in range(12, 19):
        n = 2**e
        exact = rate_function("sigma_n1_exact", n, beta=0.6, sigma_eps2=1.0)
        asym = rate_function("sigma_n1_asym", n, beta=0.6, sigma_eps2=1.0)
        devs.append(abs(exact / asym - 1.0))
    assert devs[-1] < 0.10
    assert all(b <= a for a, b in zip(devs, devs[1:]))


def test_sigma_exact_truncated_vs_infinite():
    # a huge finite truncation approaches the untruncated value from below
    n = 2**10
    inf_val = rate_function("sigma_n1_exact", n, beta=0.6, sigma_eps2=1.0)
    fin_val = rate_function("sigma_n1_exact", n, beta=0.6, sigma_eps2=1.0,
                            M=2_000_000)
    assert fin_val < inf_val
    assert fin_val == pytest.approx(inf_val, rel=0.15)


def test_psi_regimes():
    # beta = 3/4: Psi_n / sqrt(n) tracks the harmonic-style slowly varying sum
    for e in (12, 14, 16, 18):
        n = 2**e
        psi = rate_function("psi", n, beta=0.75)
        lstar = float(np.sum(1.0 / np.arange(1, n + 1)))
        assert psi / math.sqrt(n) == pytest.approx(lstar, rel=0.02)
    # beta = 0.8: per-octave increments of Psi_n / sqrt(n) shrink (convergence)
    vals = [rate_function("psi", 2**e, beta=0.8) / math.sqrt(2**e)
            for e in (12, 14, 16, 18)]
    incs = np.diff(vals)
    assert np.all(incs > 0)
    assert incs[-1] < 0.8 * incs[0]


def test_b_thm3_composition():
    n = 2**14
    sigma = rate_function("sigma_n1_exact", n, beta=0.6, sigma_eps2=1.0)
    b = rate_function("b_thm3", n, beta=0.6, sigma_eps2=1.0)
    assert b == pytest.approx(
        sigma * math.log(n) ** 0.5 * math.log(math.log(n)) / n, rel=1e-12
    )


def test_a_beta_regime_switch():
    n = 2**14
    psi_low = rate_function("psi", n, beta=0.7)
    a_low = rate_function("A_beta", n, beta=0.7)
    assert a_low == pytest.approx(
        psi_low**2 * math.log(n) * math.log(math.log(n)) ** 2, rel=1e-12
    )
    psi_high = rate_function("psi", n, beta=0.8)
    a_high = rate_function("A_beta", n, beta=0.8)
    assert a_high == pytest.approx(
        psi_high**2 * math.log(n) ** 3 * math.log(math.log(n)) ** 2, rel=1e-12
    )
