import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from meanfield.errors import BoundOverflow, ConfigError, ExponentViolation, OutOfRegime
from meanfield.hierarchy import (HierarchyParams, RecursionTrace, binomial_bound_holds, default_theta,
                                 existence_time, final_marginal_bound, growth_constant, induction_bound,
                                 lambda_constraints, lambda_min, lambda_schedule, picard_oracle,
                                 uniqueness_decay, verify_recursion)


def test_lambda_schedule():
    assert lambda_schedule(4, 0) == 0.25
    assert lambda_schedule(4, 1) == 0.125
    t = np.linspace(0, 5, 50)
    assert np.all(np.diff(lambda_schedule(4, t)) < 0)


def test_lambda_min_examples():
    assert lambda_constraints(2, 1) == (2.0, 4.0)
    assert lambda_min(2, 1) == 4.0
    assert lambda_min(2, 2) == 8.0
    assert lambda_constraints(2, 2)[1] == pytest.approx(2.5)


def test_lambda_min_is_not_monotone_in_q():
    # the second constraint dips near q = 1 + sqrt(2) where (q-2)q - 1 = 0
    qs = np.linspace(2, 10, 801)
    vals = np.array([lambda_min(q, 1.0) for q in qs])
    assert lambda_min(2.1, 1.0) < lambda_min(2.0, 1.0)
    q0 = 1 + math.sqrt(2)
    assert lambda_min(q0, 1.0) == pytest.approx(max(q0 / (q0 - 1), q0))
    assert np.all(np.diff(vals[qs >= 2.5]) > 0)


def test_growth_constant_examples():
    p = HierarchyParams(q=2, p=2, d=2, sigma=1, Lambda=4, theta_exp=1, K_lp_norm=1)
    assert growth_constant(p) == pytest.approx(8.0)
    assert growth_constant(HierarchyParams(K_lp_norm=0.0)) == 0.0
    assert default_theta(2, 2) == 1.0
    assert HierarchyParams(q=2, d=2).theta_exp == 1.0
    assert HierarchyParams(sigma=1.0).Lambda == 4.0


def test_params_validation():
    with pytest.raises(ExponentViolation):
        HierarchyParams(q=2, p=1.5)
    with pytest.raises(ConfigError):
        HierarchyParams(q=2, sigma=1.0, Lambda=3.0)
    assert HierarchyParams.from_dict(HierarchyParams().to_dict()) == HierarchyParams()


def test_existence_time_examples():
    assert existence_time(1, 1, 1) == 0.25
    assert existence_time(0.1, 2, 1) == 1.0
    assert existence_time(0, 1, 1) == 1.0


@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.01, 10), st.floats(1.0, 3.0))
def test_existence_time_antitone(L, F0, F, c):
    T = existence_time(L, F0, F)
    assert existence_time(c * L, F0, F) <= T
    assert existence_time(L, c * F0, F) <= T
    assert existence_time(L, F0, c * F) <= T


def test_induction_bound_trivial_cases():
    assert induction_bound(3, 3, 0.5, 1.7, 2.0, 0.0) == pytest.approx(1.7**3)
    # F0 = 0 leaves only the tail: L^{m+1-k} m!/((k-1)!(m-k)!) * c t^{m-k+1}/(m-k+1)
    k, m, t, L, c = 2, 4, 0.3, 0.8, 2.0
    expected = L**3 * math.factorial(4) / (math.factorial(1) * math.factorial(2)) * c * t**3 / 3
    assert induction_bound(k, m, t, 0.0, L, c) == pytest.approx(expected, rel=1e-12)
    s = np.linspace(0, t, 2001)
    assert induction_bound(k, m, t, 0.0, L, np.full(s.size, c)) == pytest.approx(expected, rel=1e-6)


def test_induction_bound_against_picard_oracle():
    trace = picard_oracle(12, 0.1, 0.5, 1.0, 1.0, J=10_000)
    for k in range(1, 12):
        bound = induction_bound(k, 11, 0.1, 1.0, 0.5, trace.X(12), trace.times)
        assert trace.X(k)[-1] <= bound * (1 + 1e-6)


def test_final_bound_against_picard_oracle():
    N, L, t = 10, 0.5, 0.4
    trace = picard_oracle(N, t, L, 1.0, 1.0, J=10_000)
    for k in range(1, N + 1):
        assert trace.X(k)[-1] <= final_marginal_bound(k, N, 1.0, 1.0, L, t)
    assert final_marginal_bound(N, N, 1.5, 0.5, L, 0.2) == pytest.approx(2**N * 1.5**N + 0.5**N * 2 ** (N - 1))


def test_final_bound_regime():
    L = 1.01 / (4 * 0.5 * 2.0)
    with pytest.raises(OutOfRegime):
        final_marginal_bound(1, 5, 2.0, 1.0, L, 0.5)


def test_induction_chain_implies_final_bound():
    rng = np.random.default_rng(0)
    for _ in range(50):
        N = int(rng.integers(2, 20))
        F0, F = rng.uniform(0.2, 3, 2)
        L = rng.uniform(0.05, 2)
        t = rng.uniform(0, 0.999) * existence_time(L, F0, F)
        for k in range(1, N):
            ib = induction_bound(k, N - 1, t, F0, L, F**N)
            assert ib <= final_marginal_bound(k, N, F0, F, L, t) * (1 + 1e-9)


def test_bound_overflow_reports_term():
    with pytest.raises(BoundOverflow) as info:
        induction_bound(1, 200, 1.0, 1e10, 1.0, 0.0)
    assert info.value.term is not None


def test_verify_recursion():
    t = np.linspace(0, 1, 11)
    const = RecursionTrace(t, np.full((3, 11), 2.0), 1, 0.7)
    assert verify_recursion(const).passed
    oracle = picard_oracle(6, 0.2, 1.3, 1.1, 2.0, J=2000)
    rep = verify_recursion(oracle)
    assert rep.passed
    assert np.max(np.abs(rep.margins - rep.rel_tol * (rep.margins + oracle.values[:-1]))) < 1e-6
    grows = RecursionTrace(t, np.vstack([1 + 10 * t, np.ones(11)]), 1, 0.5)
    assert not verify_recursion(grows).passed


def test_uniqueness_decay():
    L, M = 0.5, 1.0
    t = 0.5                                # 2 L M t = 0.5
    vals = [uniqueness_decay(1, m, t, L, M) for m in range(1, 8)]
    np.testing.assert_allclose(np.array(vals[1:]) / vals[:-1], 0.5)
    assert uniqueness_decay(2, 5, 0.0, L, M) == 0.0
    m = 8
    trace = picard_oracle(m + 2, 0.4, L, lambda k: 0.0, M ** (m + 2), J=4000)
    for k in range(1, m + 1):
        assert trace.X(k)[-1] <= uniqueness_decay(k, m, 0.4, L, M)


def test_binomial_bound():
    assert binomial_bound_holds(60)
