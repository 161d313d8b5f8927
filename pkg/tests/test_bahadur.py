import math

import numpy as np
import pytest

from depquant import bahadur
from depquant.bahadur import (
    anchor,
    expansion_remainder,
    increment_statistic,
    kiefer_limit,
    remainder,
    remainder_at,
    resolve_branch,
    uniform_remainder,
)
from depquant.empirical import EmpiricalSample, decompose, ecdf_eval
from depquant.errors import (
    BoundaryRefusalError,
    DensityTooSmallError,
    DomainError,
)
from depquant.innovations import Gaussian, Uniform
from depquant.linear_process import (
    GeometricSchedule,
    IIDSchedule,
    LrdSchedule,
    build_marginal_oracle,
    plan_truncation,
    rate_function,
    simulate_path,
)
from depquant.seeding import make_stream

GAUSS = Gaussian()
GEOM = GeometricSchedule(0.5)


def test_kiefer_limit_values():
    assert kiefer_limit(0.5, 1.0) == pytest.approx(
        2**1.25 * 3**-0.75 * 0.5, rel=1e-14
    )
    assert kiefer_limit(0.5, 1.0) == pytest.approx(0.52171, abs=2e-5)
    assert kiefer_limit(0.3, 1.0) == pytest.approx(kiefer_limit(0.7, 1.0), rel=1e-14)
    assert kiefer_limit(0.5, 2.0) == pytest.approx(kiefer_limit(0.5, 1.0) / 2)
    with pytest.raises(DomainError):
        kiefer_limit(0.0, 1.0)
    with pytest.raises(DomainError):
        kiefer_limit(0.5, 0.0)


def test_remainder_stratified_sample_bound():
    oracle = build_marginal_oracle(GEOM, GAUSS, seed=1)
    n = 1000
    ps = (np.arange(1, n + 1) - 0.5) / n
    strat = EmpiricalSample.from_values(np.asarray(oracle.quantile(ps)))
    for p in (0.21, 0.37, 0.5, 0.84):
        dec = remainder(strat, p, oracle)
        fp = float(oracle.pdf(oracle.quantile(p)))
        assert abs(dec.remainder_srd) <= 1.0 / (2 * n * fp) * (1 + 10.0 / n)


def test_remainder_iid_uniform_direct_substitution():
    innov = Uniform()
    oracle = build_marginal_oracle(IIDSchedule(), innov, seed=1)
    path = simulate_path(IIDSchedule(), innov, 500, 1e-4, seed=2)
    s = EmpiricalSample.from_path(path)
    p = 0.4
    dec = remainder(s, p, oracle)
    xi_p = p - 0.5  # exact uniform quantile, f = 1
    expect = dec.xi_np - xi_p - (p - ecdf_eval(s, xi_p))
    assert dec.remainder_srd == pytest.approx(expect, abs=1e-9)


def test_remainder_field_identities_random_inputs():
    oracle = build_marginal_oracle(GEOM, GAUSS, seed=3)
    rng = make_stream(4)
    for seed in range(5):
        path = simulate_path(GEOM, GAUSS, 400, 1e-4, seed=100 + seed)
        s = EmpiricalSample.from_path(path)
        p = float(rng.random() * 0.8 + 0.1)
        dec = remainder(s, p, oracle)
        assert dec.remainder_srd - dec.remainder_lrd == pytest.approx(
            dec.correction_term, rel=1e-12, abs=1e-15
        )
        xbar = float(np.mean(s.values))
        assert dec.correction_term == pytest.approx(
            xbar**2 * float(oracle.pdf_deriv(dec.xi_p, 1)) / (2 * float(oracle.pdf(dec.xi_p))),
            rel=1e-12,
        )
        assert dec.remainder_srd == pytest.approx(
            dec.xi_np - dec.xi_p - dec.linear_term, rel=1e-12, abs=1e-15
        )
        # reconstruct the linear term from scratch
        assert dec.linear_term == pytest.approx(
            (p - ecdf_eval(s, dec.xi_p)) / float(oracle.pdf(dec.xi_p)), rel=1e-12
        )


def test_correction_vanishes_at_symmetric_median():
    oracle = build_marginal_oracle(GEOM, GAUSS, seed=5)
    path = simulate_path(GEOM, GAUSS, 300, 1e-4, seed=6)
    s = EmpiricalSample.from_path(path)
    dec = remainder(s, 0.5, oracle)
    assert abs(dec.correction_term) <= 10 * max(oracle.precision, 1e-12)


def test_density_too_small_guard():
    class ThinOracle:
        precision = 1e-3

        def quantile(self, p):
            return 0.0

        def pdf(self, x):
            return 1e-4

        def pdf_deriv(self, x, order=1):
            return 0.0

    s = EmpiricalSample.from_values([0.0, 1.0, 2.0])
    with pytest.raises(DensityTooSmallError):
        remainder(s, 0.5, ThinOracle())


def test_uniform_remainder_single_point_and_refinement():
    oracle = build_marginal_oracle(GEOM, GAUSS, seed=7)
    path = simulate_path(GEOM, GAUSS, 600, 1e-4, seed=8)
    s = EmpiricalSample.from_path(path)
    single = uniform_remainder(s, [0.4], oracle)
    dec = remainder(s, 0.4, oracle)
    assert single.sup == pytest.approx(abs(dec.remainder_srd), rel=1e-12)
    coarse = uniform_remainder(s, np.linspace(0.25, 0.75, 20), oracle)
    fine = uniform_remainder(s, np.linspace(0.25, 0.75, 191), oracle)
    assert fine.sup >= coarse.sup - 1e-15


def test_uniform_remainder_iid_pilot_band():
    # i.i.d. optimal-order scale: n^(-3/4) (log n)^(1/2) (log log n)^(1/4)
    innov = Uniform()
    oracle = build_marginal_oracle(IIDSchedule(), innov, seed=1)
    n = 2**14
    rate = n**-0.75 * math.log(n) ** 0.5 * math.log(math.log(n)) ** 0.25
    sups = []
    grid = np.linspace(0.25, 0.75, 200)
    for r in range(50):
        path = simulate_path(IIDSchedule(), innov, n, 1e-4, seed=3000 + r)
        s = EmpiricalSample.from_path(path)
        sups.append(uniform_remainder(s, grid, oracle).sup)
    med = float(np.median(sups))
    assert 0.2 * rate <= med <= 5.0 * rate


def test_expansion_identity_and_brute_force():
    oracle = build_marginal_oracle(GEOM, GAUSS, seed=9)
    path = simulate_path(GEOM, GAUSS, 50, 1e-4, seed=10)
    s = EmpiricalSample.from_path(path)
    rng = make_stream(11)
    for y in rng.normal(size=100) * 1.4:
        y = float(y)
        er = expansion_remainder(path, oracle, y)
        d = decompose(s, GAUSS, oracle, y)
        assert er.n_mn == pytest.approx(path.n * d.martingale, rel=1e-9, abs=1e-9)
        # brute force: the first-order expansion sum with U_{i,1} = X_i
        f_y = float(oracle.cdf(y))
        dens = float(oracle.pdf(y))
        direct = float(np.sum((path.values <= y) - f_y + dens * path.values))
        assert er.s1 == pytest.approx(direct, rel=1e-9, abs=1e-8)


def test_expansion_iid_h_is_linear_in_mean():
    innov = Gaussian()
    oracle = build_marginal_oracle(IIDSchedule(), innov, seed=1)
    path = simulate_path(IIDSchedule(), innov, 200, 1e-4, seed=12)
    y = 0.3
    er = expansion_remainder(path, oracle, y)
    # iid: F_n* == F exactly, so H_n(y) = n f(y) Xbar
    expect = path.n * float(oracle.pdf(y)) * float(np.mean(path.values))
    assert er.h == pytest.approx(expect, rel=1e-9, abs=1e-9)


def test_increment_zero_window_and_additivity():
    oracle = build_marginal_oracle(GEOM, GAUSS, seed=13)
    path = simulate_path(GEOM, GAUSS, 800, 1e-4, seed=14)
    z = increment_statistic(path, oracle, 0.1, 0.0)
    assert z.raw == 0.0 and z.normalized == 0.0
    a = increment_statistic(path, oracle, 0.1, 0.25, "gaussian")
    b = increment_statistic(path, oracle, 0.35, 0.15, "gaussian")
    ab = increment_statistic(path, oracle, 0.1, 0.40, "gaussian")
    assert a.raw + b.raw == pytest.approx(ab.raw, abs=1e-8)


def test_increment_normalizations():
    lrd = LrdSchedule(beta=0.75)
    plan = plan_truncation(lrd, GAUSS, 256, 1e-2, m_max=5000)
    path = simulate_path(lrd, GAUSS, 256, 1e-2, seed=15, plan=plan)
    oracle = build_marginal_oracle(lrd, GAUSS, m_oracle=plan.lag, seed=15)
    n, delta = 256, 0.05
    g = increment_statistic(path, oracle, 0.2, delta, "gaussian")
    assert g.norm_factor == pytest.approx(math.sqrt(n * delta))
    r = increment_statistic(path, oracle, 0.2, delta, "rosenblatt")
    assert r.norm_factor == pytest.approx(n ** (2 - 2 * 0.75) * delta)
    assert g.raw == pytest.approx(r.raw, rel=1e-12)


def test_branch_resolution_and_boundary_refusal():
    lrd06 = LrdSchedule(beta=0.6)
    n = 2**16
    # gamma = 4 beta - 3 exactly on the boundary -> refuse
    gamma_boundary = 4 * 0.6 - 3
    with pytest.raises(BoundaryRefusalError):
        resolve_branch("auto", lrd06, n, float(n) ** gamma_boundary)
    assert resolve_branch("auto", lrd06, n, float(n) ** (0.5 - 0.6)) == "rosenblatt"
    lrd085 = LrdSchedule(beta=0.85)
    assert resolve_branch("auto", lrd085, n, float(n) ** (0.5 - 0.85)) == "gaussian"
    # explicit branches bypass inference
    assert resolve_branch("gaussian", lrd06, n, 0.5) == "gaussian"
    assert resolve_branch("auto", GEOM, n, 0.01) == "gaussian"


def test_rosenblatt_branch_requires_lrd_schedule():
    oracle = build_marginal_oracle(GEOM, GAUSS, seed=16)
    path = simulate_path(GEOM, GAUSS, 300, 1e-4, seed=17)
    with pytest.raises(DomainError):
        increment_statistic(path, oracle, 0.0, 0.05, "rosenblatt")


def test_anchor_reuse_matches_direct():
    oracle = build_marginal_oracle(GEOM, GAUSS, seed=18)
    anc = anchor(oracle, 0.6)
    path = simulate_path(GEOM, GAUSS, 500, 1e-4, seed=19)
    s = EmpiricalSample.from_path(path)
    assert remainder_at(s, anc).remainder_srd == remainder(s, 0.6, oracle).remainder_srd
