import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scancov.matrix_ops import (
    NearestPDError,
    NotPositiveDefiniteError,
    cholesky,
    eigen_clip_correlation,
    is_positive_definite,
    nearest_pd,
    symmetrize,
)
from scancov.models import Common
from scancov.simulation import GENERAL_EXAMPLE


def _random_symmetric_unit(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, (n, n))
    a = np.triu(a, 1)
    a = a + a.T
    np.fill_diagonal(a, 1.0)
    return a


def test_identity_is_pd():
    assert is_positive_definite(np.eye(5))


def test_common_lower_bound():
    # smallest eigenvalue of a common-correlation matrix is 1 - rho, the other 1 + (n-1) rho
    assert not is_positive_definite(Common(-0.2).matrix(7))
    assert is_positive_definite(Common(-0.14).matrix(7))
    vals = np.linalg.eigvalsh(Common(-0.2).matrix(7))
    assert vals[0] == pytest.approx(1 + 6 * -0.2)


def test_cholesky_identity():
    np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_hand_factor():
    np.testing.assert_allclose(cholesky([[4.0, 2.0], [2.0, 3.0]]), [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-15)


def test_cholesky_round_trip_common():
    a = Common(0.5).matrix(4)
    L = cholesky(a)
    assert np.abs(L @ L.T - a).max() <= 1e-12
    assert np.allclose(L, np.tril(L))


def test_cholesky_reports_pivot():
    a = np.ones((3, 3))
    with pytest.raises(NotPositiveDefiniteError) as info:
        cholesky(a)
    assert info.value.pivot == 1


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        cholesky(Common(-0.2).matrix(7))


def test_symmetrize_tolerance():
    a = np.array([[1.0, 0.5], [0.5 + 1e-9, 1.0]])
    np.testing.assert_allclose(symmetrize(a, tol=1e-8), [[1.0, 0.5 + 5e-10], [0.5 + 5e-10, 1.0]])
    with pytest.raises(ValueError):
        symmetrize(np.array([[1.0, 0.5], [0.4, 1.0]]), tol=1e-8)
    with pytest.raises(ValueError):
        symmetrize(np.ones((2, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_cholesky_round_trip_random(n, seed):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((n, n))
    a = b @ b.T + n * np.eye(n)
    L = cholesky(a)
    assert np.linalg.norm(L @ L.T - a) <= 1e-10 * np.linalg.norm(a)


def test_nearest_pd_identity_unchanged():
    np.testing.assert_array_equal(nearest_pd(np.eye(4)), np.eye(4))


def test_nearest_pd_all_ones():
    a = np.ones((3, 3))
    x = nearest_pd(a)
    assert is_positive_definite(x)
    np.testing.assert_allclose(np.diag(x), 1.0)
    naive = eigen_clip_correlation(a)
    assert np.linalg.norm(x - a) <= np.linalg.norm(naive - a) + 1e-8


def test_nearest_pd_example_matrix():
    assert not is_positive_definite(GENERAL_EXAMPLE)
    x = nearest_pd(GENERAL_EXAMPLE)
    assert is_positive_definite(x)
    # the printed matrix is a 3-decimal rounding of a PD matrix
    assert np.abs(x - GENERAL_EXAMPLE).max() < 2e-3


def test_nearest_pd_nonconvergence():
    a = _random_symmetric_unit(8, 3)
    with pytest.raises(NearestPDError) as info:
        nearest_pd(a, max_iter=1, tol=0.0)
    assert info.value.last.shape == (8, 8)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_nearest_pd_properties(n, seed):
    a = _random_symmetric_unit(n, seed)
    floor = 1e-8
    x = nearest_pd(a, eig_floor=floor)
    np.testing.assert_array_equal(x, x.T)
    np.testing.assert_allclose(np.diag(x), 1.0, atol=1e-14)
    assert np.linalg.eigvalsh(x)[0] >= floor
    assert is_positive_definite(x)
    naive = eigen_clip_correlation(a, floor)
    assert np.linalg.norm(x - a) <= np.linalg.norm(naive - a) + 1e-8
    np.testing.assert_allclose(nearest_pd(x, eig_floor=floor), x, atol=1e-8)
