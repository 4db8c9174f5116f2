"""Variances and covariances of the moving-sums process.

For windows ``Y(t) = X_t + ... + X_{t+w-1}`` and ``Y(t+g)`` the covariance
is assembled from correlation sums over three regions of the two windows:
``A`` (first window only), ``B`` (shared, nonempty iff ``g < w``) and ``C``
(second window only).  Closed forms are provided for a general correlation
matrix, for AR(1)-type auto-correlation and for a common correlation; the
brute-force double summation is kept alongside as an independent check.

Window starts ``t`` are 1-based at this API.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import toeplitz

from .models import Auto, Common, General, MovingSumLaw, ProcessModel, WindowGeometry


# ---------------------------------------------------------------------------
# general structure

class _RegionSums:
    """Correlation sums over index rectangles via a summed-area table.

    Intervals are 0-based and half open.  All methods broadcast over arrays
    of interval endpoints.
    """

    def __init__(self, corr: np.ndarray):
        n = corr.shape[0]
        self.sat = np.zeros((n + 1, n + 1))
        self.sat[1:, 1:] = corr.cumsum(axis=0).cumsum(axis=1)

    def cross(self, i0, i1, j0, j1):
        s = self.sat
        return s[i1, j1] - s[i0, j1] - s[i1, j0] + s[i0, j0]

    def within(self, i0, i1):
        """Sum over pairs ``i < j`` inside ``[i0, i1)`` (unit diagonal assumed)."""
        return 0.5 * (self.cross(i0, i1, i0, i1) - (np.asarray(i1) - np.asarray(i0)))


def _general_cov(rs: _RegionSums, w: int, t0, g: int):
    """sigma=1 covariance of windows starting at 0-based ``t0`` and ``t0 + g``."""
    t0 = np.asarray(t0)
    if g == 0:
        return w + 2.0 * rs.within(t0, t0 + w)
    if g >= w:
        return rs.cross(t0, t0 + w, t0 + g, t0 + g + w)
    return _overlapping_general(rs, w, t0, g)


def _overlapping_general(rs: _RegionSums, w: int, t0, g: int):
    """Region form for ``1 <= g <= w``; at ``g = w`` region B is empty."""
    a0, a1 = t0, t0 + g
    b0, b1 = t0 + g, t0 + w
    c0, c1 = t0 + w, t0 + g + w
    return (
        rs.within(a0, a1)
        + rs.within(c0, c1)
        + rs.cross(a0, a1, c0, c1)
        + 2.0 * (2.0 * rs.within(b0, b1) + rs.cross(a0, a1, b0, b1) + rs.cross(b0, b1, c0, c1))
        - rs.within(t0, t0 + w)
        - rs.within(t0 + g, t0 + g + w)
        + (w - g)
    )


def _as_corr(structure) -> np.ndarray:
    if isinstance(structure, General):
        return structure.corr
    a = np.asarray(structure, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square correlation matrix, got shape {a.shape}")
    return a


def moving_sum_cov_general(structure, sigma: float, w: int, t: int, g: int) -> float:
    """Covariance of ``Y(t)`` and ``Y(t+g)`` for an explicit correlation matrix.

    Overlapping windows (``g < w``) use the region decomposition; disjoint
    windows (``g >= w``) reduce to ``sigma**2`` times the cross-window sum.

    Parameters
    ----------
    structure : General or ndarray
        n x n correlation matrix.
    sigma : float
    w : int
        Window size.
    t : int
        1-based start of the first window.
    g : int
        Gap between the window starts, ``g >= 1``.
    """
    corr = _as_corr(structure)
    n = corr.shape[0]
    if g < 1:
        raise ValueError(f"gap must be >= 1, got {g}")
    WindowGeometry(w, t, g).check_fits(n)
    return float(sigma**2 * _general_cov(_RegionSums(corr), w, t - 1, g))


# ---------------------------------------------------------------------------
# auto-correlation

def _pair_series(rho: float, length: int) -> float:
    """Sum over ``i < j`` in an interval of ``length``: sum_{i=1}^{l-1} (l-i) rho^i."""
    return math.fsum((length - i) * rho**i for i in range(1, length))


def _lag_block(rho: float, d: int, l1: int, l2: int) -> float:
    """sum_{i=1}^{l1} sum_{j=1}^{l2} rho^|d+j-i|, grouped by lag ``j - i``."""
    terms = []
    for k in range(1 - l1, l2):
        count = min(l1, l2 - k) - max(1, 1 - k) + 1
        if count > 0:
            terms.append(count * rho ** abs(d + k))
    return math.fsum(terms)


def _check_rho(rho: float, lower: float = -1.0) -> None:
    if not lower <= rho <= 1.0:
        raise ValueError(f"correlation {rho} outside [{lower:.6g}, 1]")


def auto_variance(rho: float, sigma: float, w: int) -> float:
    """``var Y(t) = sigma^2 (w + 2 sum_{i=1}^{w-1} (w-i) rho^i)``."""
    _check_rho(rho)
    return sigma**2 * (w + 2.0 * _pair_series(rho, w))


def moving_sum_cov_auto(rho: float, sigma: float, w: int, g: int) -> float:
    """Covariance of two window sums ``g >= 1`` apart under ``rho_ij = rho^|i-j|``.

    Does not depend on the window start.
    """
    _check_rho(rho)
    if w < 1 or g < 1:
        raise ValueError(f"need w >= 1 and g >= 1, got w={w}, g={g}")
    if g >= w:
        return sigma**2 * _lag_block(rho, g, w, w)
    return _overlapping_auto(rho, sigma, w, g)


def _overlapping_auto(rho: float, sigma: float, w: int, g: int) -> float:
    inner = (
        2.0 * _pair_series(rho, w - g)
        + _lag_block(rho, g, g, w - g)
        + _lag_block(rho, w - g, w - g, g)
        + _pair_series(rho, g)
        - _pair_series(rho, w)
    )
    return sigma**2 * (_lag_block(rho, w, g, g) + 2.0 * inner + (w - g))


# ---------------------------------------------------------------------------
# common correlation

def common_variance(rho: float, sigma: float, w: int) -> float:
    return sigma**2 * w * (1.0 + (w - 1) * rho)


def moving_sum_cov_common(rho: float, sigma: float, w: int, g: int, n: int | None = None) -> float:
    """Covariance of two window sums ``g >= 1`` apart under a common correlation.

    When the process length ``n`` is given, ``rho`` is checked against the
    positive-definiteness bound ``-1/(n-1)``.
    """
    _check_rho(rho, -1.0 / (n - 1) if n else -1.0)
    if w < 1 or g < 1:
        raise ValueError(f"need w >= 1 and g >= 1, got w={w}, g={g}")
    if g >= w:
        return sigma**2 * w * w * rho
    return _overlapping_common(rho, sigma, w, g)


def _overlapping_common(rho: float, sigma: float, w: int, g: int) -> float:
    return sigma**2 * (rho * (g * (2 * g - 1) + 2 * (w - g) * (w + g - 1) - w * (w - 1)) + w - g)


# ---------------------------------------------------------------------------
# dispatch

def _check_window(n: int, w: int, t: int = 1) -> None:
    if not 1 <= w <= n:
        raise ValueError(f"window size must be in [1, {n}], got {w}")
    if not 1 <= t <= n - w + 1:
        raise ValueError(f"window start must be in [1, {n - w + 1}], got {t}")


def moving_sum_variance(model: ProcessModel, w: int, t: int = 1) -> float:
    """Variance of the window sum starting at 1-based ``t``."""
    _check_window(model.n, w, t)
    s = model.structure
    if isinstance(s, Common):
        return common_variance(s.rho, model.sigma, w)
    if isinstance(s, Auto):
        return auto_variance(s.rho, model.sigma, w)
    return float(model.sigma**2 * _general_cov(_RegionSums(s.corr), w, t - 1, 0))


def moving_sum_cov(model: ProcessModel, w: int, t: int, g: int) -> float:
    """Covariance of ``Y(t)`` and ``Y(t+g)``; ``g = 0`` gives the variance."""
    _check_window(model.n, w, t)
    if g == 0:
        return moving_sum_variance(model, w, t)
    WindowGeometry(w, t, g).check_fits(model.n)
    s = model.structure
    if isinstance(s, Common):
        return moving_sum_cov_common(s.rho, model.sigma, w, g, model.n)
    if isinstance(s, Auto):
        return moving_sum_cov_auto(s.rho, model.sigma, w, g)
    return moving_sum_cov_general(s, model.sigma, w, t, g)


def build_sum_covariance(model: ProcessModel, w: int) -> MovingSumLaw:
    """Law of the moving sums of window ``w``: mean ``w * theta0`` and ``Sigma_Y``.

    For Student-t models ``Sigma_Y`` is the scale matrix of the (again
    multivariate t) sums.
    """
    _check_window(model.n, w)
    m = model.n - w + 1
    s = model.structure
    if isinstance(s, (Common, Auto)):
        first = np.empty(m)
        first[0] = moving_sum_variance(model, w)
        for g in range(1, m):
            first[g] = moving_sum_cov(model, w, 1, g)
        cov = toeplitz(first)
    else:
        rs = _RegionSums(s.corr)
        cov = np.empty((m, m))
        for g in range(m):
            t0 = np.arange(m - g)
            vals = model.sigma**2 * _general_cov(rs, w, t0, g)
            cov[t0, t0 + g] = vals
            cov[t0 + g, t0] = vals
    return MovingSumLaw(
        n=model.n,
        w=w,
        mean=np.full(m, w * model.theta0),
        cov=cov,
        family=model.family,
    )


def brute_force_sum_covariance(corr, sigma: float, w: int) -> np.ndarray:
    """``Sigma_Y`` by direct double summation over every pair of windows."""
    corr = np.asarray(corr, dtype=float)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {corr.shape}")
    n = corr.shape[0]
    if not 1 <= w <= n:
        raise ValueError(f"window size must be in [1, {n}], got {w}")
    m = n - w + 1
    out = np.empty((m, m))
    for a in range(m):
        for b in range(m):
            out[a, b] = sigma**2 * corr[a:a + w, b:b + w].sum()
    return out
