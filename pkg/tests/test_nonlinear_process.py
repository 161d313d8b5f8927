import math

import numpy as np
import pytest
from scipy import stats

from depquant.errors import ParameterError
from depquant.innovations import Gaussian
from depquant.nonlinear_process import (
    Ar1Map,
    Arch1Map,
    TarMap,
    block_count,
    block_ecdf,
    coupled_distances,
    estimate_gmc,
    make_map,
    simulate_chain,
    simulate_chains,
    simulate_m_dependent,
)
from depquant.seeding import make_stream

GAUSS = Gaussian()


def test_contraction_checks_at_construction():
    with pytest.raises(ParameterError):
        Ar1Map(innovation=GAUSS, a=1.0)
    with pytest.raises(ParameterError):
        Ar1Map(innovation=GAUSS, a=-1.2)
    with pytest.raises(ParameterError):
        Arch1Map(innovation=GAUSS, c0=1.0, c1=4.0)  # E log(sqrt(c1)|eps|) >= 0
    Arch1Map(innovation=GAUSS, c0=1.0, c1=0.3)
    with pytest.raises(ParameterError):
        TarMap(innovation=GAUSS, phi_pos=1.1, phi_neg=0.2)
    TarMap(innovation=GAUSS, phi_pos=0.7, phi_neg=0.6)


def test_zero_coefficient_chain_reproduces_innovations():
    model = Ar1Map(innovation=GAUSS, a=0.0)
    x = simulate_chain(model, 64, seed=3)
    eps = GAUSS.sample(make_stream(3), model.burn_in + 64)
    assert np.array_equal(x, eps[model.burn_in:])


def test_ar1_stationary_variance():
    model = Ar1Map(innovation=GAUSS, a=0.5)
    x = simulate_chain(model, 10**5, seed=5)
    assert x.var() == pytest.approx(1.0 / (1 - 0.25), rel=0.02)


def test_arch1_symmetric_mean():
    model = Arch1Map(innovation=GAUSS, c0=1.0, c1=0.3)
    x = simulate_chain(model, 10**5, seed=6)
    se = x.std() / math.sqrt(x.size)
    assert abs(x.mean()) <= 4 * se


def test_chain_determinism_and_batch_equivalence():
    model = Ar1Map(innovation=GAUSS, a=0.5)
    a = simulate_chain(model, 200, seed=17)
    b = simulate_chain(model, 200, seed=17)
    assert np.array_equal(a, b)
    batch = simulate_chains(model, 200, [17, 18])
    assert np.array_equal(batch[0], a)
    assert np.array_equal(batch[1], simulate_chain(model, 200, seed=18))


def test_gmc_ar1_geometric_rate():
    model = Ar1Map(innovation=GAUSS, a=0.5)
    rep = estimate_gmc(model, 2.0, n_max=40, replicates=3000, seed=7)
    assert abs(rep.r_hat - 0.25) <= 0.03
    assert rep.r_squared >= 0.99
    # lag-4 coupled moment: a^8 * 2 Var(X)
    target = 0.25**4 * 2 / 0.75
    lag4 = rep.mean_distance[rep.lags == 4][0]
    assert lag4 == pytest.approx(target, rel=0.10)


def test_gmc_one_step_forgetting_degenerate():
    model = Ar1Map(innovation=GAUSS, a=0.0)
    cp = coupled_distances(model, 2.0, 10, 500, seed=8)
    assert np.all(cp.mean_distance[1:] == 0.0)
    rep = estimate_gmc(model, 2.0, n_max=10, replicates=500, seed=8)
    assert rep.degenerate


def test_gmc_parameter_guards():
    model = Ar1Map(innovation=GAUSS, a=0.5)
    with pytest.raises(ParameterError):
        estimate_gmc(model, 2.0, replicates=50)
    from depquant.innovations import StudentT

    heavy = Ar1Map(innovation=StudentT(nu=1.5), a=0.5)
    with pytest.raises(ParameterError):
        estimate_gmc(heavy, 2.0)  # alpha above the declared moment order


def test_ar1_coupled_ratio_is_exact():
    model = Ar1Map(innovation=GAUSS, a=0.5)
    cp = coupled_distances(model, 1.0, 10, 50, seed=9)
    d = np.abs(cp.primary - cp.shadow)
    nz = d[:, :-1] > 0
    ratios = d[:, 1:][nz] / d[:, :-1][nz]
    assert np.allclose(ratios, 0.5, rtol=1e-12)


def test_m_dependent_marginal_and_independence():
    model = Ar1Map(innovation=GAUSS, a=0.5)
    md = simulate_m_dependent(model, 10**4, 40, seed=11)
    # same-marginal check
    ks = stats.ks_2samp(md.tilde, md.original, method="asymp")
    assert ks.pvalue > 0.01
    # decorrelation beyond the dependence range
    lag = md.m + 5
    a, b = md.tilde[:-lag], md.tilde[lag:]
    corr = float(np.corrcoef(a, b)[0, 1])
    assert abs(corr) <= 4.0 / math.sqrt(a.size)


def test_m_dependent_contraction_bound_and_determinism():
    model = Ar1Map(innovation=GAUSS, a=0.5)
    md = simulate_m_dependent(model, 10**4, 40, seed=12)
    bound = 0.5**40 * float(np.max(md.start_gap))
    assert float(np.max(np.abs(md.tilde - md.original))) <= bound * (1 + 1e-9)
    md2 = simulate_m_dependent(model, 10**4, 40, seed=12)
    assert np.array_equal(md.tilde, md2.tilde)
    # coupling distance decays with m
    md_short = simulate_m_dependent(model, 10**4, 10, seed=12)
    assert np.max(np.abs(md.tilde - md.original)) < np.max(
        np.abs(md_short.tilde - md_short.original)
    )


def test_block_ecdf_index_bookkeeping():
    v = np.arange(1.0, 11.0)  # n = 10
    # m=3: A_n(1)=3 over {1,4,7,10}; A_n(2)=A_n(3)=2 over {2,5,8} / {3,6,9}
    assert block_count(10, 3, 1) == 4
    assert block_count(10, 3, 2) == 3
    assert block_ecdf(v, 3, 1, 6.5) == pytest.approx(2 / 4)
    assert block_ecdf(v, 3, 2, 6.5) == pytest.approx(2 / 3)
    assert block_ecdf(v, 3, 3, 1e9) == 1.0
    with pytest.raises(IndexError):
        block_ecdf(v, 3, 0, 1.0)
    with pytest.raises(IndexError):
        block_ecdf(v, 3, 4, 1.0)


def test_block_ecdf_recombination_identity():
    rng = make_stream(13)
    for _ in range(20):
        n = int(rng.integers(5, 200))
        m = int(rng.integers(1, n))
        v = rng.normal(size=n)
        x = float(rng.normal())
        combined = sum(
            block_count(n, m, j) * block_ecdf(v, m, j, x) for j in range(1, m + 1)
        ) / n
        assert combined == pytest.approx(float(np.mean(v <= x)), abs=1e-12)


def test_make_map_validation():
    with pytest.raises(ParameterError):
        make_map("pendulum", GAUSS)
    with pytest.raises(ParameterError):
        make_map("ar1", GAUSS, nonsense=2.0)
