"""Rectangular multivariate normal and Student-t probabilities.

Genz's separation-of-variables transform maps ``P(X <= b)`` to an integral
over the unit cube using the Cholesky factor of the covariance.  The cube
integral is estimated with a randomly shifted Richtmyer (Kronecker) lattice
under the baker's transform; ``K`` independent shifts give the estimate
(their mean) and its error (three standard errors).  The Student-t case adds
one radial coordinate, ``r = sqrt(chi2_df / df)``, which rescales the limits.

Only upper limits are supported: every probability here is a CDF value.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import log_ndtr, ndtr, ndtri

from .matrix_ops import NotPositiveDefiniteError, cholesky, is_positive_definite, symmetrize

_REORDER_MAX_DIM = 64
_CHUNK_ENTRIES = 1 << 22
_PROFILE_TOL = 1e-13
_U_LO = np.finfo(float).tiny
_U_HI = 1.0 - 2.0**-53


@dataclass(frozen=True)
class IntegrationConfig:
    """Accuracy and budget of a cube integration.

    Attributes
    ----------
    abs_err : float
        Target for the reported error (3 standard errors across shifts).
    replications : int
        Number of independent random shifts, at least 2.
    min_points : int
        Lattice points per shift in the first pass; doubled until the
        target or the budget is met.
    max_points : int
        Total point budget over all shifts.
    seed : int
    reorder : bool or None
        Sort variables by expected conditional probability before
        factorising.  ``None`` reorders up to 64 dimensions and keeps the
        natural (banded) order above that.
    ridge : float
        A singular covariance gets ``ridge * trace / m`` added to its diagonal.
    """

    abs_err: float = 5e-4
    replications: int = 12
    min_points: int = 2**10
    max_points: int = 2**22 * 12
    seed: int = 0
    reorder: bool | None = None
    ridge: float = 1e-10

    def __post_init__(self):
        if not self.abs_err > 0:
            raise ValueError("abs_err must be positive")
        if self.replications < 2:
            raise ValueError("at least two replications are needed for an error estimate")
        if self.min_points < 1 or self.max_points < self.min_points * self.replications:
            raise ValueError("max_points must cover one pass of min_points per replication")


@dataclass(frozen=True)
class TailProbEstimate:
    """A probability with its error estimate and the number of integrand evaluations."""

    value: float
    error: float
    samples: int
    converged: bool = True


# ---------------------------------------------------------------------------
# lattice

@functools.lru_cache(maxsize=8)
def _richtmyer(dim: int) -> np.ndarray:
    """Fractional parts of square roots of the first ``dim`` primes."""
    limit = max(16, int(dim * (math.log(dim + 2) + math.log(math.log(dim + 2)) + 3)))
    while True:
        sieve = np.ones(limit + 1, dtype=bool)
        sieve[:2] = False
        for p in range(2, int(limit**0.5) + 1):
            if sieve[p]:
                sieve[p * p::p] = False
        primes = np.flatnonzero(sieve)
        if primes.size >= dim:
            break
        limit *= 2
    roots = np.sqrt(primes[:dim].astype(float))
    return roots - np.floor(roots)


# ---------------------------------------------------------------------------
# factorisation

class _Key:
    __slots__ = ("a", "h")

    def __init__(self, a: np.ndarray):
        self.a = a
        self.h = hash((a.shape, a.tobytes()))

    def __hash__(self):
        return self.h

    def __eq__(self, other):
        return self.a.shape == other.a.shape and np.array_equal(self.a, other.a)


@functools.lru_cache(maxsize=32)
def _plain_factor(key: _Key) -> tuple[np.ndarray, np.ndarray]:
    L = cholesky(key.a, tol=0.0)
    return L, _profile(L)


def _profile(L: np.ndarray) -> np.ndarray:
    """First column per row of ``L`` whose entry matters (``|L_kj| > tol * L_kk``)."""
    m = L.shape[0]
    big = np.abs(L) > _PROFILE_TOL * np.diag(L)[:, None]
    lo = np.argmax(big, axis=1)
    lo[~big.any(axis=1)] = np.arange(m)[~big.any(axis=1)]
    return lo


def _truncated_mean(bt: float) -> float:
    """``E[Z | Z <= bt]`` for a standard normal ``Z``."""
    if np.isposinf(bt):
        return 0.0
    if np.isneginf(bt):
        return -np.inf
    return -math.exp(stats.norm.logpdf(bt) - log_ndtr(bt))


def _reordered_factor(cov: np.ndarray, b: np.ndarray):
    """Cholesky factor with greedy Genz-Bretz variable ordering.

    At each step the remaining variable with the smallest conditional
    probability ``Phi(b_i)`` is placed next.
    """
    m = cov.shape[0]
    c = cov.copy()
    b = b.copy()
    L = np.zeros((m, m))
    y = np.zeros(m)
    for k in range(m):
        resid = np.diag(c)[k:] - np.einsum("ij,ij->i", L[k:, :k], L[k:, :k])
        sd = np.sqrt(np.maximum(resid, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            bt = (b[k:] - L[k:, :k] @ y[:k]) / sd
        bt = np.where(sd > 0, bt, np.where(b[k:] - L[k:, :k] @ y[:k] >= 0, np.inf, -np.inf))
        i = k + int(np.argmin(ndtr(bt)))
        if i != k:
            c[[k, i], :] = c[[i, k], :]
            c[:, [k, i]] = c[:, [i, k]]
            L[[k, i], :k] = L[[i, k], :k]
            b[[k, i]] = b[[i, k]]
            resid[[0, i - k]] = resid[[i - k, 0]]
            bt[[0, i - k]] = bt[[i - k, 0]]
        if resid[0] <= 0:
            raise NotPositiveDefiniteError("covariance is not positive definite", pivot=k)
        L[k, k] = math.sqrt(resid[0])
        if k + 1 < m:
            L[k + 1:, k] = (c[k + 1:, k] - L[k + 1:, :k] @ L[k, :k]) / L[k, k]
        y[k] = _truncated_mean(bt[0])
        if not np.isfinite(y[k]):
            y[k] = b[k] / L[k, k] if np.isfinite(b[k]) else 0.0
    return b, L, _profile(L)


def _prepare(upper, mean, cov, cfg: IntegrationConfig):
    upper = np.asarray(upper, dtype=float).ravel()
    mean = np.broadcast_to(np.asarray(mean, dtype=float), upper.shape)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    m = upper.size
    if cov.shape != (m, m):
        raise ValueError(f"dimension mismatch: {m} limits, covariance of shape {cov.shape}")
    if np.isnan(upper).any() or not np.isfinite(mean).all():
        raise ValueError("limits must not be NaN and the mean must be finite")
    cov = symmetrize(cov)
    if not is_positive_definite(cov):
        cov = cov + cfg.ridge * np.trace(cov) / m * np.eye(m)
        if not is_positive_definite(cov):
            raise NotPositiveDefiniteError("covariance is not positive semidefinite")
    b = upper - mean
    reorder = cfg.reorder if cfg.reorder is not None else m <= _REORDER_MAX_DIM
    if reorder:
        return _reordered_factor(cov, b)
    L, lo = _plain_factor(_Key(cov))
    return b, L, lo


# ---------------------------------------------------------------------------
# integration

def _integrand(b, L, lo, df, alpha, idx, shifts) -> np.ndarray:
    """Genz integrand at lattice points ``idx`` for every random shift.

    ``shifts`` has shape ``(dims, K)``; the result has shape ``(K, idx.size)``.
    """
    m = b.size
    diag = np.diag(L)
    idx = idx.astype(float)[None, :]
    K = shifts.shape[1]

    def uniform(k):
        x = idx * alpha[k] + shifts[k][:, None]
        x -= np.floor(x)
        return np.abs(2.0 * x - 1.0)

    off = 0
    scale = 1.0
    if df is not None:
        u0 = np.clip(uniform(0), _U_LO, _U_HI)
        scale = np.sqrt(stats.chi2.ppf(u0, df) / df)
        off = 1

    y = np.empty((m, K * idx.size))
    e = np.broadcast_to(ndtr(b[0] * scale / diag[0]), (K, idx.size))
    f = e.copy()
    for k in range(1, m):
        y[k - 1] = ndtri(np.clip(uniform(off + k - 1) * e, _U_LO, _U_HI)).ravel()
        c = (L[k, lo[k]:k] @ y[lo[k]:k]).reshape(e.shape)
        e = ndtr((b[k] * scale - c) / diag[k])
        f *= e
    return f


def _integrate(upper, mean, cov, df, cfg: IntegrationConfig) -> TailProbEstimate:
    b, L, lo = _prepare(upper, mean, cov, cfg)
    m = b.size
    if m == 1:
        z = b[0] / L[0, 0]
        value = float(ndtr(z) if df is None else stats.t.cdf(z, df))
        return TailProbEstimate(value, 0.0, 0, True)

    dims = m - 1 + (df is not None)
    alpha = _richtmyer(dims)
    K = cfg.replications
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    shift = rng.random((dims, K))

    sums = np.zeros(K)
    done = 0
    batch = cfg.min_points
    chunk = max(1, _CHUNK_ENTRIES // (m * K))
    while True:
        for start in range(done + 1, done + batch + 1, chunk):
            idx = np.arange(start, min(start + chunk, done + batch + 1))
            sums += _integrand(b, L, lo, df, alpha, idx, shift).sum(axis=1)
        done += batch
        per_rep = sums / done
        value = float(per_rep.mean())
        error = float(3.0 * per_rep.std(ddof=1) / math.sqrt(K))
        if error <= cfg.abs_err:
            converged = True
            break
        if K * 2 * done > cfg.max_points:
            converged = False
            break
        batch = done
    return TailProbEstimate(min(max(value, 0.0), 1.0), error, K * done, converged)


def mvn_cdf(upper, mean, cov, config: IntegrationConfig | None = None) -> TailProbEstimate:
    """``P(Z <= upper)`` componentwise for ``Z ~ N(mean, cov)``.

    A positive semidefinite ``cov`` is ridged before factorisation.  The
    result is deterministic for a fixed ``config.seed``.
    """
    return _integrate(upper, mean, cov, None, config or IntegrationConfig())


def mvt_cdf(upper, loc, scale, df: float, config: IntegrationConfig | None = None) -> TailProbEstimate:
    """``P(T <= upper)`` for a multivariate t with ``df`` degrees of freedom,
    location ``loc`` and scale matrix ``scale``."""
    if not df > 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    return _integrate(upper, loc, scale, float(df), config or IntegrationConfig())
