import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fitsim import theory
from fitsim.model import derive_constants
from fitsim.theory import DomainError

REF = derive_constants(0.8, 0.8)
HEAVY = derive_constants(0.8, 0.4)
C_TWO = derive_constants(0.8, 0.625)  # c = 2

transient_points = st.tuples(st.floats(0.55, 0.98), st.floats(0.05, 0.95)).filter(
    lambda pr: derive_constants(*pr).transient and derive_constants(*pr).c < 60
)


# -- special functions ------------------------------------------------------------


def test_beta_small_values():
    assert theory.beta_function(1, 1) == pytest.approx(1.0, rel=1e-15)
    assert theory.beta_function(2, 3) == pytest.approx(1 / 12, rel=1e-14)


@pytest.mark.parametrize("x, y", [(0.5, 0.5), (3.7, 1.25), (12.0, 2.5), (1e3, 0.3), (1e6, 100.0),
                                  (2.0, 1e5), (9.99, 10.01), (1e8, 1.25)])
def test_log_beta_against_arbitrary_precision(x, y):
    mpmath.mp.dps = 40
    exact = float(mpmath.log(mpmath.beta(x, y)))
    assert theory.log_beta(x, y) == pytest.approx(exact, rel=1e-13, abs=1e-12)


@given(st.floats(1e-3, 1e7), st.floats(1e-3, 1e3))
def test_log_beta_matches_scipy_lgamma_route(x, y):
    ref = math.lgamma(x) + math.lgamma(y) - math.lgamma(x + y)
    assert theory.log_beta(x, y) == pytest.approx(ref, rel=1e-9, abs=1e-7)


def test_beta_large_argument_asymptotics():
    x, y = 1e5, 2.5
    assert theory.beta_function(x, y) * x**y / math.gamma(y) == pytest.approx(1.0, abs=1e-4)


def test_beta_rejects_nonpositive():
    with pytest.raises(DomainError):
        theory.log_beta(0.0, 1.0)


@given(st.floats(0.05, 20))
def test_yule_simon_first_mass(rho):
    assert theory.yule_simon_pmf(rho, 1) == pytest.approx(rho / (rho + 1), rel=1e-13)


def test_yule_simon_unit_shape():
    ks = np.arange(1, 50)
    assert np.allclose(theory.yule_simon_pmf(1.0, ks), 1 / (ks * (ks + 1)), rtol=1e-13)


def test_shifted_conditioned_hand_value():
    assert theory.shifted_conditioned_pmf(2.0, 1) == pytest.approx(0.5, rel=1e-14)


@given(st.floats(0.05, 20), st.integers(1, 10_000))
def test_shifted_conditioned_is_conditioned_yule_simon(rho, k):
    lhs = theory.shifted_conditioned_pmf(rho, k)
    rhs = theory.yule_simon_pmf(rho, k + 1) / (1 - rho / (rho + 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_yule_simon_partial_sums_increase_to_one():
    ks = np.arange(1, 10**6 + 1)
    cum = np.cumsum(theory.yule_simon_pmf(1.5, ks))
    assert np.all(np.diff(cum) > 0)
    # tail of YS(rho) beyond K is K B(K, rho + 1) ~ Gamma(rho + 1) K^-rho
    tail = math.gamma(2.5) * 1e6**-1.5
    assert cum[-1] == pytest.approx(1 - tail, abs=1e-10)


# -- limit laws -------------------------------------------------------------------


def test_beta_one_both_routes():
    expected = 0.5 * (1 / 4.75) * 4
    assert theory.beta_k(REF, 0.5, 1) == pytest.approx(expected, rel=1e-12)
    assert theory.beta_k_product(REF, 0.5, 1) == pytest.approx(0.421053, abs=1e-6)
    via_limit = (0.5 / 0.6875) * (2.75 / 4.75)
    assert theory.beta_k(REF, 0.5, 1) == pytest.approx(via_limit, rel=1e-12)


def _beta_by_recursion(constants, f, K):
    c, r = constants.c, constants.r
    out = [(1 - f) * r / ((1 - r) * (1 + c))]
    for k in range(2, K + 1):
        out.append(out[-1] / (1 + c / k))
    return np.array(out)


@given(transient_points, st.floats(0.0, 1.0))
def test_beta_matches_recursion(pr, u):
    constants = derive_constants(*pr)
    f = constants.f_c + (1 - constants.f_c) * (0.01 + 0.98 * u)
    got = theory.beta_k(constants, f, np.arange(1, 301))
    assert np.allclose(got, _beta_by_recursion(constants, f, 300), rtol=1e-10, atol=0)


def test_beta_routes_agree_to_large_k():
    ks = np.arange(1, 10_001)
    for p, r in [(0.8, 0.4), (0.8, 0.8), (0.6, 0.9), (0.95, 0.1)]:
        constants = derive_constants(p, r)
        for f in (constants.f_c + 1e-3, 0.5 * (constants.f_c + 1), 0.999):
            a = theory.beta_k(constants, f, ks)
            b = theory.beta_k_product(constants, f, ks)
            assert np.max(np.abs(a - b) / b) < 1e-10


def test_beta_needs_threshold_above_critical():
    with pytest.raises(DomainError):
        theory.beta_k(REF, 0.3, 1)


def test_limit_laws_need_transient_regime():
    with pytest.raises(DomainError):
        theory.beta_k(derive_constants(0.6, 0.4), 0.9, 1)


def test_rho_for_c_two():
    ks = np.arange(1, 100)
    assert theory.rho_k(2.0, 1) == pytest.approx(1 / 3, rel=1e-14)
    assert np.allclose(theory.rho_k(2.0, ks), 2 / ((ks + 1) * (ks + 2)), rtol=1e-13)


@pytest.mark.parametrize("c", [1.05, 1.25, 2.0, 3.75, 12.0])
def test_rho_sums_to_one(c):
    s = theory.rho_sum(c)
    assert s.value == pytest.approx(1.0, abs=1e-8)
    assert s.remainder <= 1e-12 * s.partial or s.terms >= theory.SUM_MAX_TERMS


def test_rho_tail_asymptote():
    c = 1.25
    ratio = theory.rho_k(c, 10**6) / theory.rho_tail_asymptote(c, 10**6)
    assert ratio == pytest.approx(1.0, rel=1e-3)


@pytest.mark.parametrize("p, r, f", [(0.8, 0.8, 0.5), (0.8, 0.4, 0.8), (0.7, 0.9, 0.99)])
def test_beta_total_mass(p, r, f):
    constants = derive_constants(p, r)
    s = theory.beta_sum(constants, f)
    assert s.value == pytest.approx((1 - f) / (1 - constants.f_c), abs=1e-8)


def test_site_proportion_independent_of_threshold():
    ks = np.arange(1, 200)
    a = theory.site_proportion_limit(REF, ks, 0.5)
    b = theory.site_proportion_limit(REF, ks, 0.8)
    assert np.allclose(a, b, rtol=1e-10, atol=0)


def test_site_proportion_for_c_two():
    ks = np.arange(1, 200)
    expected = 4 / (ks * (ks + 1) * (ks + 2))
    assert np.allclose(theory.site_proportion_limit(C_TWO, ks), expected, rtol=1e-10)


@settings(max_examples=15)
@given(transient_points)
def test_site_proportion_closed_form(pr):
    # sum_k rho_k / k = (c - 1)/c, so the site law is c^2 B(k + 1, c) / k
    constants = derive_constants(*pr)
    c = constants.c
    ks = np.arange(1, 60)
    expected = c * c * np.exp(theory.log_beta(ks + 1.0, c)) / ks
    assert np.allclose(theory.site_proportion_limit(constants, ks), expected, rtol=1e-9)


def test_fitness_marginal():
    assert theory.fitness_marginal_cdf(REF, REF.f_c) == 0.0
    assert theory.fitness_marginal_cdf(REF, 1.0) == 1.0
    assert theory.fitness_marginal_cdf(REF, 0.65625) == pytest.approx(0.5, abs=1e-15)
    grid = np.linspace(0, 1, 1001)
    assert np.all(np.diff(theory.fitness_marginal_cdf(REF, grid)) >= 0)


def test_geometric_parameter():
    assert theory.geometric_variant_param(0.8, 0.8) == pytest.approx(0.44 / 0.6, rel=1e-14)
    assert theory.geometric_variant_param(0.8, 1.0) == pytest.approx(1.0, rel=1e-14)
    assert 0 < theory.geometric_variant_param(0.8, 0.25 + 1e-9) < 1e-7


@given(transient_points)
def test_mutation_ratio_identity(pr):
    k = derive_constants(*pr)
    assert (k.r / (1 - k.r)) / (k.c - 1) == pytest.approx(1 / (1 - k.f_c), rel=1e-12)


@given(transient_points, st.floats(0.01, 0.99))
def test_balance_residuals_vanish(pr, u):
    constants = derive_constants(*pr)
    f = constants.f_c + (1 - constants.f_c) * u
    assert np.max(np.abs(theory.balance_residuals(constants, f, 50))) < 1e-10


def test_balance_residuals_domain():
    # f = 0.5 lies below f_c = 0.625 at (0.8, 0.4)
    with pytest.raises(DomainError):
        theory.balance_residuals(HEAVY, 0.5, 50)
    assert np.max(np.abs(theory.balance_residuals(HEAVY, 0.8, 50))) < 1e-10


def test_consecutive_beta_ratio():
    ks = np.arange(1, 51)
    b = theory.beta_k(REF, 0.5, ks)
    assert np.allclose(b[:-1] / b[1:], 1 + REF.c / ks[1:], rtol=1e-12)


def test_limit_law_objects():
    law = theory.LimitLaw("beta_k", REF, 0.5)
    assert law.total == pytest.approx(0.5 / 0.6875)
    assert theory.LimitLaw("rho_k", HEAVY).table(5).shape == (5,)
    with pytest.raises(DomainError):
        theory.LimitLaw("cubic", REF)
