"""Dense symmetric matrix utilities: symmetrisation, Cholesky factorisation,
positive-definiteness testing and nearest correlation matrix repair."""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be positive definite is not.

    ``pivot`` is the 0-based index of the failing pivot when known.
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class NearestPDError(RuntimeError):
    """Alternating projections did not converge; ``last`` holds the final iterate."""

    def __init__(self, message: str, last: np.ndarray):
        super().__init__(message)
        self.last = last


def symmetrize(a, tol: float | None = None) -> np.ndarray:
    """Return ``(a + a.T) / 2``.

    If ``tol`` is given, inputs whose largest asymmetry ``|a_ij - a_ji|``
    exceeds it are rejected.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if tol is not None:
        asym = np.max(np.abs(a - a.T)) if a.size else 0.0
        if asym > tol:
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g} > {tol:.3g})")
    return 0.5 * (a + a.T)


def cholesky(a, tol: float = 1e-12) -> np.ndarray:
    """Lower-triangular ``L`` with ``a = L @ L.T``.

    Raises
    ------
    NotPositiveDefiniteError
        If a pivot ``L_kk**2`` is not above ``tol * max(diag(a))``.
    """
    a = symmetrize(a)
    n = a.shape[0]
    if n == 0:
        return a.copy()
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (pivot {info - 1})", pivot=info - 1
        )
    if info < 0:
        raise ValueError(f"invalid argument {-info} to dpotrf")
    pivots = np.diag(c) ** 2
    scale = max(np.max(np.diag(a)), 0.0)
    bad = np.flatnonzero(pivots <= tol * scale)
    if bad.size:
        raise NotPositiveDefiniteError(
            f"matrix is numerically singular (pivot {bad[0]})", pivot=int(bad[0])
        )
    return np.tril(c)


def is_positive_definite(a, tol: float = 1e-12) -> bool:
    """True when Cholesky succeeds with every pivot above ``tol * max(diag(a))``."""
    try:
        cholesky(a, tol=tol)
    except NotPositiveDefiniteError:
        return False
    return True


def _clip_eigen(a: np.ndarray, floor: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(a)
    vals = np.maximum(vals, floor)
    return symmetrize((vecs * vals) @ vecs.T)


def _unit_diagonal(a: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.diag(a))
    out = a / np.outer(d, d)
    np.fill_diagonal(out, 1.0)
    return out


def eigen_clip_correlation(a, eig_floor: float = 1e-8) -> np.ndarray:
    """Naive repair: clip eigenvalues at ``eig_floor`` and rescale to unit diagonal."""
    return _unit_diagonal(_clip_eigen(symmetrize(a), eig_floor))


def nearest_pd(
    a,
    eig_floor: float = 1e-8,
    max_iter: int = 200,
    tol: float = 1e-9,
) -> np.ndarray:
    """Nearest positive definite correlation matrix (Higham 2002).

    Alternating projections with Dykstra's correction between the unit
    diagonal matrices and the symmetric matrices with every eigenvalue at
    least ``eig_floor``.  Iteration stops once the Frobenius change between
    successive iterates is at most ``tol``.  Inputs that are already
    correlation matrices with smallest eigenvalue ``>= eig_floor`` are
    returned unchanged.

    Raises
    ------
    NearestPDError
        If ``max_iter`` iterations pass without convergence.
    """
    a = symmetrize(a)
    n = a.shape[0]
    if np.allclose(np.diag(a), 1.0, rtol=0, atol=1e-14) and np.linalg.eigvalsh(a)[0] >= eig_floor:
        return a.copy()

    y = a.copy()
    ds = np.zeros_like(a)
    for _ in range(max_iter):
        r = y - ds
        x = _clip_eigen(r, eig_floor)
        ds = x - r
        y_next = x.copy()
        np.fill_diagonal(y_next, 1.0)
        change = np.linalg.norm(y_next - y, "fro")
        y = y_next
        if change <= tol:
            break
    else:
        raise NearestPDError(f"nearest_pd did not converge in {max_iter} iterations", last=y)

    # The unit-diagonal iterate can sit a hair below the eigenvalue floor.
    # Shrinking towards the identity keeps the diagonal and lifts every
    # eigenvalue linearly, so the smallest sufficient step is known.
    eye = np.eye(n)
    for k in range(60):
        lam = np.linalg.eigvalsh(y)[0]
        if lam >= eig_floor:
            return y
        step = (eig_floor - lam) / (1.0 - lam) * (1.0 + 2.0**k * 1e-6) + 2.0**k * np.finfo(float).eps
        y = (1.0 - step) * y + step * eye
        np.fill_diagonal(y, 1.0)
    raise NearestPDError("could not enforce the eigenvalue floor", last=y)
