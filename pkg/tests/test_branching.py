import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurofield.branching import (
    BranchingParams, StopTime, cv_lower_bound, empirical_cv_check, expected_stopped_sum,
    mean_stopped_sum, simulate_generations, simulate_stopped_sum, variance_lower_bound,
)

MU = 2.25


def params(stop, n_e=300, mu=MU):
    return BranchingParams(n_e, mu / n_e, stop)


def test_zero_offspring():
    s = simulate_stopped_sum(BranchingParams(300, 0.0, StopTime("uniform", 1, 5)), 1000, 1)
    assert (s == 0).all()


def test_single_generation_binomial():
    s = simulate_stopped_sum(params(StopTime("fixed", 1)), 20000, 2)
    se = s.std(ddof=1) / math.sqrt(s.size)
    assert abs(s.mean() - MU) < 4 * se


@pytest.mark.parametrize("n", [2, 4, 6])
def test_mean_identity(n):
    s = simulate_stopped_sum(params(StopTime("fixed", n)), 20000, n)
    want = MU * (MU ** n - 1) / (MU - 1)
    assert mean_stopped_sum(MU, n) == pytest.approx(want)
    se = s.std(ddof=1) / math.sqrt(s.size)
    assert abs(s.mean() - want) < 4 * se


def test_expected_stopped_sum_uniform():
    p = params(StopTime("uniform", 3, 6))
    want = np.mean([mean_stopped_sum(MU, n) for n in range(3, 7)])
    assert expected_stopped_sum(p) == pytest.approx(want)
    s = simulate_stopped_sum(p, 40000, 3)
    assert abs(s.mean() - want) < 4 * s.std(ddof=1) / math.sqrt(s.size)


def test_variance_lower_bound():
    n = 4
    s = simulate_stopped_sum(params(StopTime("fixed", n)), 40000, 4)
    sigma2 = MU * (1 - MU / 300)
    bound = variance_lower_bound(MU, sigma2, n)
    assert bound == pytest.approx(sigma2 * (MU ** (2 * n) - 1) / (MU ** 2 - 1))
    # SE of the sample variance from a bootstrap
    rng = np.random.default_rng(0)
    boots = [s[rng.integers(0, s.size, s.size)].var(ddof=1) for _ in range(100)]
    assert s.var(ddof=1) >= bound - 4 * np.std(boots, ddof=1)


def test_generation_covariances_nonnegative():
    z, _ = simulate_generations(params(StopTime("fixed", 4)), 20000, 5)
    rng = np.random.default_rng(1)
    for m in range(4):
        for n in range(m, 4):
            c = np.cov(z[:, m], z[:, n])[0, 1]
            boots = []
            for _ in range(50):
                idx = rng.integers(0, z.shape[0], z.shape[0])
                boots.append(np.cov(z[idx, m], z[idx, n])[0, 1])
            assert c >= -4 * np.std(boots, ddof=1)


def test_bound_at_default_heuristic():
    p = BranchingParams.uniform_voltage()
    assert p.mu == pytest.approx(MU)
    b = cv_lower_bound(p.mu, math.sqrt(p.sigma2))
    assert abs(b - 0.4) <= 0.02


def test_bound_edge_cases():
    assert cv_lower_bound(2.0, 0.0) == 0.0
    assert cv_lower_bound(1.0 + 1e-12, 1.0) < 1e-5
    for mu in (1.0, 0.5):
        with pytest.raises(ValueError):
            cv_lower_bound(mu, 1.0)


@pytest.mark.parametrize("stop", [StopTime("fixed", 4), StopTime("uniform", 3, 6)])
def test_cv_bound_holds(stop):
    rep = empirical_cv_check(params(stop), 100_000, 7)
    assert rep.holds and rep.cv >= 0.4 - 4 * rep.se
    assert rep.margin == pytest.approx(rep.cv - rep.bound + 4 * rep.se)


def test_cv_bound_near_critical():
    p = BranchingParams(1000, 1.1 / 1000, StopTime("uniform", 3, 6))
    sigma = math.sqrt(p.sigma2)
    assert cv_lower_bound(p.mu, sigma) == pytest.approx(sigma * math.sqrt(0.1) / (1.1 * math.sqrt(2.1)))
    assert empirical_cv_check(p, 50_000, 8).holds


def test_check_errors():
    with pytest.raises(ValueError):
        empirical_cv_check(params(StopTime("fixed", 3), mu=0.9), 100, 1)
    with pytest.raises(ValueError):
        # P(T = k) decays like 0.9^k, slower than mu^-2k grows: no MGF at 2 log mu
        empirical_cv_check(params(StopTime("geometric", q=0.1)), 100, 1)
    with pytest.raises(ValueError):
        StopTime("uniform", 5, 3)
    with pytest.raises(ValueError):
        BranchingParams(10, 1.5, StopTime("fixed", 1))
    with pytest.raises(ValueError):
        simulate_stopped_sum(params(StopTime("fixed", 1)), 0, 1)


def test_truncation_caps_growth():
    p = params(StopTime("fixed", 12))
    free = simulate_stopped_sum(p, 2000, 9)
    capped = simulate_stopped_sum(p, 2000, 9, truncate=True)
    assert capped.max() < free.max()
    # a cascade stops after the generation that pushes it past n_e
    assert (capped <= p.n_e * (1 + p.mu) + 5 * p.n_e).all()


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_determinism(seed):
    p = params(StopTime("uniform", 1, 4))
    assert np.array_equal(simulate_stopped_sum(p, 50, seed), simulate_stopped_sum(p, 50, seed))


def test_stop_time_moments():
    geo = StopTime("geometric", q=0.25)
    assert geo.mean == 4.0 and geo.var == pytest.approx(12.0)
    uni = StopTime("uniform", 3, 6)
    assert uni.mean == 4.5 and uni.var == pytest.approx(1.25)
    t = uni.sample(np.random.default_rng(0), 10000)
    assert set(np.unique(t)) == {3, 4, 5, 6}
    assert geo.mgf(math.log(1.2)) == pytest.approx(0.25 * 1.2 / (1 - 0.75 * 1.2))
    assert geo.mgf(math.log(2.0)) == math.inf
    assert geo.mgf(math.log(1 / 0.75)) == math.inf
