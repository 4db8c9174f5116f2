"""Process models: correlation structures, distribution families and the
law of the moving-sums process.

Indices at the public API are 1-based (window start ``t`` runs over
``1..n-w+1``); everything internal is 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .matrix_ops import NotPositiveDefiniteError, is_positive_definite, symmetrize


@dataclass(frozen=True)
class Normal:
    """Gaussian process variables."""

    name = "normal"


@dataclass(frozen=True)
class StudentT:
    """Multivariate Student-t variables with ``df`` degrees of freedom.

    ``sigma`` and the correlations of a :class:`ProcessModel` then describe
    the scale matrix, not the covariance (which is ``scale * df / (df - 2)``).
    """

    df: float
    name = "t"

    def __post_init__(self):
        if not self.df > 0:
            raise ValueError(f"degrees of freedom must be positive, got {self.df}")


Family = Union[Normal, StudentT]


@dataclass(frozen=True)
class Common:
    """Equal correlation ``rho`` between every pair of variables."""

    rho: float
    kind = "common"

    def validate(self, n: int) -> None:
        lower = -1.0 / (n - 1)
        if not lower <= self.rho <= 1.0:
            raise ValueError(
                f"common correlation must lie in [{lower:.6g}, 1] for n={n}, got {self.rho}"
            )

    def matrix(self, n: int) -> np.ndarray:
        return (1.0 - self.rho) * np.eye(n) + self.rho


@dataclass(frozen=True)
class Auto:
    """AR(1)-type decay: ``cor(X_i, X_j) = rho ** |i - j|``."""

    rho: float
    kind = "auto"

    def validate(self, n: int) -> None:
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"auto-correlation must lie in [-1, 1], got {self.rho}")

    def matrix(self, n: int) -> np.ndarray:
        lags = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
        return float(self.rho) ** lags


@dataclass(frozen=True, eq=False)
class General:
    """An explicit n x n correlation matrix.

    The matrix is symmetrised on construction and must have a unit diagonal
    and entries in [-1, 1].  Positive definiteness is checked unless
    ``check_pd`` is false (use :func:`scancov.matrix_ops.nearest_pd` to
    repair an indefinite input first).
    """

    corr: np.ndarray
    check_pd: bool = True
    kind = "general"

    def __post_init__(self):
        a = symmetrize(np.asarray(self.corr, dtype=float), tol=1e-8)
        if not np.allclose(np.diag(a), 1.0, atol=1e-12):
            raise ValueError("correlation matrix must have a unit diagonal")
        if np.any(np.abs(a) > 1.0 + 1e-12):
            raise ValueError("correlations must lie in [-1, 1]")
        np.fill_diagonal(a, 1.0)
        a.setflags(write=False)
        object.__setattr__(self, "corr", a)
        if self.check_pd and not is_positive_definite(a):
            raise NotPositiveDefiniteError(
                "correlation matrix is not positive definite; repair it with nearest_pd"
            )

    @property
    def size(self) -> int:
        return self.corr.shape[0]

    def validate(self, n: int) -> None:
        if self.size != n:
            raise ValueError(f"correlation matrix is {self.size}x{self.size}, process length is {n}")

    def matrix(self, n: int) -> np.ndarray:
        self.validate(n)
        return np.array(self.corr)

    def __eq__(self, other):
        return isinstance(other, General) and np.array_equal(self.corr, other.corr)

    def __hash__(self):
        return hash((self.corr.shape, self.corr.tobytes()))


CovarianceStructure = Union[Common, Auto, General]


@dataclass(frozen=True)
class ProcessModel:
    """Null law of a process ``X_1..X_n``.

    Parameters
    ----------
    n : int
        Process length, at least 2.
    structure : Common, Auto or General
        Correlation structure of the variables.
    sigma : float
        Common scale; ``var(X_i) = sigma**2`` for normal processes.
    family : Normal or StudentT
    theta0 : float
        Null location of every variable.
    """

    n: int
    structure: CovarianceStructure
    sigma: float = 1.0
    family: Family = field(default_factory=Normal)
    theta0: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"process length must be an integer >= 2, got {self.n}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not np.isfinite(self.theta0):
            raise ValueError("theta0 must be finite")
        self.structure.validate(self.n)

    def correlation(self) -> np.ndarray:
        return self.structure.matrix(self.n)

    def covariance(self) -> np.ndarray:
        """Covariance (normal) or scale matrix (Student-t) of the process."""
        return self.sigma**2 * self.correlation()

    def with_length(self, n: int) -> "ProcessModel":
        return replace(self, n=n)


@dataclass(frozen=True)
class WindowGeometry:
    """Two windows of size ``w`` starting at ``t`` and ``t + g`` (1-based).

    Regions: ``A = [t, t+g-1]`` (first window only), ``B = [t+g, t+w-1]``
    (shared) and ``C = [t+w, t+g+w-1]`` (second window only).  ``B`` is
    empty unless ``g < w``.
    """

    w: int
    t: int
    g: int

    def __post_init__(self):
        if self.w < 1 or self.t < 1 or self.g < 0:
            raise ValueError(f"invalid window geometry w={self.w}, t={self.t}, g={self.g}")

    @property
    def overlapping(self) -> bool:
        return self.g < self.w

    @property
    def region_a(self) -> range:
        return range(self.t, self.t + min(self.g, self.w))

    @property
    def region_b(self) -> range:
        return range(self.t + self.g, self.t + self.w)

    @property
    def region_c(self) -> range:
        return range(max(self.t + self.w, self.t + self.g), self.t + self.g + self.w)

    def check_fits(self, n: int) -> None:
        if self.t + self.g + self.w - 1 > n:
            raise ValueError(
                f"windows starting at {self.t} and {self.t + self.g} with w={self.w} exceed n={n}"
            )


@dataclass(frozen=True, eq=False)
class MovingSumLaw:
    """Joint law of ``Y_w(1), ..., Y_w(n-w+1)``."""

    n: int
    w: int
    mean: np.ndarray
    cov: np.ndarray
    family: Family

    @property
    def m(self) -> int:
        return self.n - self.w + 1
