"""Tests for Student t p-values and the incomplete beta function."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from ..analysis.tdist import regularized_incomplete_beta, t_pvalue, two_sample_t_test
from ..utils.errors import ContractError, DegreesOfFreedomError


def t_density(x, dof):
    log_c = math.lgamma((dof + 1) / 2.0) - math.lgamma(dof / 2.0) - 0.5 * math.log(dof * math.pi)
    return math.exp(log_c - (dof + 1) / 2.0 * math.log1p(x * x / dof))


def integrated_pvalue(t, dof):
    """1 - 2 * integral of the density over [0, |t|], by adaptive quadrature."""
    inner, _ = integrate.quad(t_density, 0.0, abs(t), args=(dof,), epsabs=1e-14, epsrel=1e-13, limit=200)
    return 1.0 - 2.0 * inner


GRID = [(t, dof) for t in (0.1, 0.5, 1.0, 1.5, 2.0, 2.228, 3.0, 4.0, 6.0, 9.0)
        for dof in (1, 2, 5, 10, 60)]


@pytest.mark.parametrize("t,dof", GRID)
def test_matches_numerical_integration(t, dof):
    assert t_pvalue(t, dof) == pytest.approx(integrated_pvalue(t, dof), abs=1e-9)


def test_reference_point():
    assert abs(t_pvalue(2.228, 10) - 0.05) < 5e-4


def test_center_and_tails():
    for dof in (1, 3, 30, 1000):
        assert t_pvalue(0.0, dof) == 1.0
    assert t_pvalue(1e6, 10) < 1e-12
    assert t_pvalue(-1e6, 10) < 1e-12
    assert t_pvalue(math.inf, 5) == 0.0


def test_matches_scipy_survival_function():
    for dof in (1, 4, 17, 250, 1020):
        for t in (0.01, 0.7, 2.5, 8.0, 25.0):
            expected = 2.0 * stats.t.sf(t, dof)
            assert t_pvalue(t, dof) == pytest.approx(expected, rel=1e-9, abs=1e-300)


@given(st.floats(0.0, 50.0), st.floats(0.0, 50.0), st.integers(1, 500))
@settings(max_examples=100, deadline=None)
def test_monotone_in_abs_t_and_symmetric(a, b, dof):
    low, high = sorted((a, b))
    assert t_pvalue(high, dof) <= t_pvalue(low, dof) + 1e-14
    assert t_pvalue(-a, dof) == t_pvalue(a, dof)
    assert 0.0 <= t_pvalue(a, dof) <= 1.0


def test_invalid_arguments():
    with pytest.raises(DegreesOfFreedomError):
        t_pvalue(1.0, 0)
    with pytest.raises(ContractError):
        t_pvalue(math.nan, 4)
    with pytest.raises(ContractError):
        regularized_incomplete_beta(0.0, 1.0, 0.5)


@given(st.floats(0.05, 60.0), st.floats(0.05, 60.0), st.floats(0.0, 1.0))
@settings(max_examples=100, deadline=None)
def test_incomplete_beta_matches_scipy(a, b, x):
    assert regularized_incomplete_beta(a, b, x) == pytest.approx(special.betainc(a, b, x), rel=1e-9, abs=1e-13)


def test_two_sample_matches_scipy(rng):
    a = rng.normal(0.0, 1.0, size=40)
    b = rng.normal(0.5, 1.5, size=25)
    t, p, dof = two_sample_t_test(a, b)
    reference = stats.ttest_ind(b, a, equal_var=True)
    assert dof == 63
    assert t == pytest.approx(reference.statistic, rel=1e-12)
    assert p == pytest.approx(reference.pvalue, rel=1e-9)


def test_two_sample_constant_groups():
    assert two_sample_t_test([1.0, 1.0], [1.0, 1.0]) == (0.0, 1.0, 2)
    t, p, _ = two_sample_t_test([1.0, 1.0], [2.0, 2.0])
    assert t == math.inf and p == 0.0


def test_two_sample_needs_degrees_of_freedom():
    with pytest.raises(DegreesOfFreedomError):
        two_sample_t_test([1.0], [2.0])
