import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from scancov.matrix_ops import NotPositiveDefiniteError
from scancov.models import Auto, Common
from scancov.mvnt import IntegrationConfig, _richtmyer, mvn_cdf, mvt_cdf

CFG = IntegrationConfig(abs_err=2e-4, seed=11)


def _random_corr(m, rng):
    b = rng.standard_normal((m, m + 2))
    c = b @ b.T
    d = np.sqrt(np.diag(c))
    return c / np.outer(d, d)


def test_dim1_normal_half():
    est = mvn_cdf([0.0], [0.0], [[1.0]])
    assert est.value == pytest.approx(0.5, abs=1e-15)
    assert est.error == 0.0


def test_dim1_t_half_and_quantile():
    assert mvt_cdf([0.0], [0.0], [[1.0]], 7).value == pytest.approx(0.5, abs=1e-15)
    q = stats.t.ppf(0.95, 7)
    est = mvt_cdf([q], [0.0], [[1.0]], 7)
    assert abs(est.value - 0.95) <= max(est.error, 1e-10)  # ppf round trip


@settings(max_examples=50, deadline=None)
@given(st.floats(-6, 6), st.floats(-2, 2), st.floats(0.1, 10), st.floats(0.5, 50))
def test_dim1_matches_univariate(b, mu, var, df):
    z = (b - mu) / math.sqrt(var)
    assert mvn_cdf([b], [mu], [[var]]).value == pytest.approx(stats.norm.cdf(z), abs=1e-6)
    assert mvt_cdf([b], [mu], [[var]], df).value == pytest.approx(stats.t.cdf(z, df), abs=1e-6)


def test_independent_orthant():
    est = mvn_cdf([0.0, 0.0], [0.0, 0.0], np.eye(2), CFG)
    assert abs(est.value - 0.25) <= est.error + 1e-12


def test_orthant_half_correlation():
    est = mvn_cdf([0.0, 0.0], [0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], CFG)
    exact = 0.25 + math.asin(0.5) / (2 * math.pi)
    assert exact == pytest.approx(1 / 3)
    assert abs(est.value - exact) <= est.error


def test_trivariate_orthant():
    r = np.array([[1.0, 0.3, -0.2], [0.3, 1.0, 0.4], [-0.2, 0.4, 1.0]])
    exact = 1 / 8 + (math.asin(0.3) + math.asin(-0.2) + math.asin(0.4)) / (4 * math.pi)
    est = mvn_cdf(np.zeros(3), np.zeros(3), r, CFG)
    assert abs(est.value - exact) <= est.error + 1e-5


def test_large_df_approaches_normal():
    rng = np.random.default_rng(5)
    cov = _random_corr(5, rng)
    b = rng.uniform(-0.5, 1.5, 5)
    n = mvn_cdf(b, 0.0, cov, CFG)
    t = mvt_cdf(b, 0.0, cov, 1e6, CFG)
    assert abs(n.value - t.value) <= 2 * (n.error + t.error)


def test_monotone_in_limits():
    cov = Auto(0.6).matrix(6)
    prev = 0.0
    for s in np.linspace(-1, 3, 9):
        est = mvn_cdf(np.full(6, s), 0.0, cov, CFG)
        assert est.value >= prev - 2 * est.error - 1e-12
        prev = est.value


def test_block_diagonal_product():
    rng = np.random.default_rng(2)
    c1, c2 = _random_corr(3, rng), _random_corr(4, rng)
    cov = np.zeros((7, 7))
    cov[:3, :3], cov[3:, 3:] = c1, c2
    b = rng.uniform(-0.5, 1.5, 7)
    whole = mvn_cdf(b, 0.0, cov, CFG)
    p1, p2 = mvn_cdf(b[:3], 0.0, c1, CFG), mvn_cdf(b[3:], 0.0, c2, CFG)
    combined = whole.error + p1.error * p2.value + p2.error * p1.value
    assert abs(whole.value - p1.value * p2.value) <= combined
    tw = mvt_cdf(b[:3], 0.0, c1, 5.0, CFG)
    # t blocks are not independent, so only the normal case factorises
    assert 0.0 <= tw.value <= 1.0


def test_reproducible_bits():
    cov = Common(0.3).matrix(5)
    a = mvt_cdf(np.ones(5), 0.0, cov, 4.0, CFG)
    b = mvt_cdf(np.ones(5), 0.0, cov, 4.0, CFG)
    assert a == b
    c = mvt_cdf(np.ones(5), 0.0, cov, 4.0, IntegrationConfig(abs_err=2e-4, seed=12))
    assert c.value != a.value


@pytest.mark.parametrize("seed", range(5))
def test_against_scipy(seed):
    rng = np.random.default_rng(100 + seed)
    m = 2 + seed
    cov = _random_corr(m, rng) * rng.uniform(0.5, 3.0)
    mean = rng.normal(0, 0.5, m)
    b = rng.uniform(-1, 2, m)
    est = mvn_cdf(b, mean, cov, CFG)
    ref = stats.multivariate_normal.cdf(b, mean, cov, maxpts=10**7, abseps=1e-6, releps=1e-6)
    assert abs(est.value - ref) <= est.error + 2e-5


def test_semidefinite_common_one():
    # rho = 1 makes all sums equal, so P(max > 3) = 1 - Phi(3 / 3)
    from scancov.covariance import build_sum_covariance
    from scancov.models import ProcessModel
    law = build_sum_covariance(ProcessModel(7, Common(1.0)), 3)
    est = mvn_cdf(np.full(5, 3.0), law.mean, law.cov, CFG)
    assert 1 - est.value == pytest.approx(1 - stats.norm.cdf(1.0), abs=est.error + 1e-6)


def test_infinite_limits():
    cov = Auto(0.4).matrix(3)
    est = mvn_cdf([np.inf, np.inf, 0.0], 0.0, cov, CFG)
    assert est.value == pytest.approx(0.5, abs=est.error + 1e-12)
    assert mvn_cdf([-np.inf, 1.0, 1.0], 0.0, cov, CFG).value == 0.0


def test_high_dimension_natural_order_agrees():
    cov = 4.0 * Auto(0.5).matrix(80)
    b = np.full(80, 6.0)
    cfg = IntegrationConfig(abs_err=1e-3, seed=1)
    natural = mvn_cdf(b, 0.0, cov, IntegrationConfig(abs_err=1e-3, seed=1, reorder=False))
    ordered = mvn_cdf(b, 0.0, cov, IntegrationConfig(abs_err=1e-3, seed=1, reorder=True))
    default = mvn_cdf(b, 0.0, cov, cfg)
    assert default == natural
    assert abs(natural.value - ordered.value) <= natural.error + ordered.error


def test_budget_exhaustion_flags():
    cov = _random_corr(8, np.random.default_rng(0))
    est = mvn_cdf(np.zeros(8), 0.0, cov, IntegrationConfig(abs_err=1e-9, min_points=64, max_points=64 * 12 * 4))
    assert not est.converged
    assert est.samples <= 64 * 12 * 4


def test_validation():
    with pytest.raises(ValueError):
        mvn_cdf([0.0, 0.0], 0.0, np.eye(3))
    with pytest.raises(ValueError):
        mvt_cdf([0.0], 0.0, [[1.0]], 0.0)
    with pytest.raises(ValueError):
        mvn_cdf([np.nan], 0.0, [[1.0]])
    with pytest.raises(NotPositiveDefiniteError):
        mvn_cdf([0.0, 0.0], 0.0, [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        IntegrationConfig(replications=1)
    with pytest.raises(ValueError):
        IntegrationConfig(abs_err=0.0)


def test_lattice_generator():
    a = _richtmyer(4)
    np.testing.assert_allclose(a, np.sqrt([2, 3, 5, 7]) % 1.0)
    assert _richtmyer(1000).shape == (1000,)
