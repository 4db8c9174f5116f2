"""Scan statistics, their null tail probabilities and batch p-values."""

from __future__ import annotations

import functools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .covariance import build_sum_covariance
from .models import MovingSumLaw, ProcessModel, StudentT
from .mvnt import IntegrationConfig, TailProbEstimate, mvn_cdf, mvt_cdf

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Series:
    """An observed sequence with an identifier."""

    id: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError(f"series {self.id!r} must be a vector of length >= 2")
        if not np.isfinite(v).all():
            raise ValueError(f"series {self.id!r} contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    def __eq__(self, other):
        return isinstance(other, Series) and self.id == other.id and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class ScanResult:
    """Scan statistic ``S_w``, the 1-based start of its window and ``w``."""

    statistic: float
    t_star: int
    w: int


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, Series) else np.asarray(x, dtype=float)


def _prefix_sums(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Neumaier-compensated prefix sums as (high, low) parts, with a leading 0."""
    hi = np.zeros(x.size + 1)
    lo = np.zeros(x.size + 1)
    s = c = 0.0
    for i, v in enumerate(x.tolist(), start=1):
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        hi[i] = s
        lo[i] = c
    return hi, lo


def moving_sums(x, w: int) -> np.ndarray:
    """Sums of every window of ``w`` consecutive values (length ``n - w + 1``)."""
    v = _values(x)
    n = v.size
    if not 1 <= w <= n:
        raise ValueError(f"window size must be in [1, {n}], got {w}")
    hi, lo = _prefix_sums(v)
    a, b = hi[w:], -hi[:-w]
    d = a + b
    bb = d - a
    err = (a - (d - bb)) + (b - bb)  # TwoSum: d + err == a + b exactly
    return d + (err + (lo[w:] - lo[:-w]))


def scan_statistic(x, w: int) -> ScanResult:
    """Largest moving sum; ties go to the earliest window."""
    y = moving_sums(x, w)
    t = int(np.argmax(y))
    return ScanResult(float(y[t]), t + 1, w)


@functools.lru_cache(maxsize=64)
def _sum_law(model: ProcessModel, w: int) -> MovingSumLaw:
    return build_sum_covariance(model, w)


def tail_probability(
    model: ProcessModel, w: int, s: float, config: IntegrationConfig | None = None
) -> TailProbEstimate:
    """``P(S_w > s)`` under ``model``: one minus the joint CDF of the sums at ``(s, ..., s)``."""
    law = _sum_law(model, w)
    upper = np.full(law.m, float(s))
    if isinstance(model.family, StudentT):
        cdf = mvt_cdf(upper, law.mean, law.cov, model.family.df, config)
    else:
        cdf = mvn_cdf(upper, law.mean, law.cov, config)
    return TailProbEstimate(1.0 - cdf.value, cdf.error, cdf.samples, cdf.converged)


def bh_adjust(p) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("p-values must be a vector")
    if np.isnan(p).any() or (p < 0).any() or (p > 1).any():
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    ranked = p[order] * (m / np.arange(1, m + 1))  # m / rank >= 1 keeps q >= p under rounding
    q = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(q, 1.0)
    return out


@dataclass
class BatchRow:
    id: str
    n: int
    scan: ScanResult | None
    p: float = float("nan")
    p_error: float = float("nan")
    p_bh: float = float("nan")
    error: str | None = None


@dataclass
class BatchReport:
    rows: list[BatchRow]
    meta: dict = field(default_factory=dict)

    def pvalues(self) -> np.ndarray:
        return np.array([r.p for r in self.rows])

    def adjusted(self) -> np.ndarray:
        return np.array([r.p_bh for r in self.rows])


ModelSpec = Union[ProcessModel, Callable[[Series], ProcessModel]]


def _resolve_model(spec: ModelSpec, series: Series) -> ProcessModel:
    if isinstance(spec, ProcessModel):
        return spec if spec.n == series.n else spec.with_length(series.n)
    return spec(series)


def batch_pvalues(
    series: Sequence[Series],
    model: ModelSpec,
    w: int,
    config: IntegrationConfig | None = None,
    workers: int = 1,
) -> BatchReport:
    """Scan statistic and null p-value for every series, plus BH adjustment.

    ``model`` is either one shared :class:`ProcessModel` (its length is
    replaced by each series' length) or a callable returning the null model
    of a series.  Every series is integrated with the same ``config``, so
    identical inputs give identical p-values.  Failures are recorded on the
    row and excluded from the adjustment.
    """
    config = config or IntegrationConfig()

    def one(x: Series) -> BatchRow:
        try:
            scan = scan_statistic(x, w)
        except ValueError as exc:
            return BatchRow(x.id, x.n, None, error=str(exc))
        try:
            est = tail_probability(_resolve_model(model, x), w, scan.statistic, config)
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("series %s failed: %s", x.id, exc)
            return BatchRow(x.id, x.n, scan, error=str(exc))
        return BatchRow(x.id, x.n, scan, est.value, est.error)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, series))
    else:
        rows = [one(x) for x in series]

    ok = [r for r in rows if r.error is None]
    for r, q in zip(ok, bh_adjust([r.p for r in ok])):
        r.p_bh = float(q)
    meta = {
        "w": w,
        "seed": config.seed,
        "abs_err": config.abs_err,
        "replications": config.replications,
        "failed": len(rows) - len(ok),
    }
    return BatchReport(rows, meta)
