"""Monte-Carlo checks of the closed forms and the simulation experiments.

Random streams are Philox generators keyed by ``(seed, *key)`` through
``SeedSequence.spawn_key``, so every realisation is reproducible on its own
and results do not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.special import ndtri

from .covariance import moving_sum_cov, moving_sum_cov_auto, moving_sum_cov_common
from .covariance import auto_variance, common_variance
from .matrix_ops import NotPositiveDefiniteError, cholesky, is_positive_definite, nearest_pd
from .models import Auto, Common, General, ProcessModel, StudentT
from .mvnt import IntegrationConfig, TailProbEstimate
from .scan import Series, batch_pvalues, bh_adjust, tail_probability


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator for ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def correlation_factor(model: ProcessModel) -> np.ndarray:
    """A matrix ``F`` with ``F @ F.T`` equal to the model's correlation matrix.

    Cholesky when positive definite; singular but semidefinite structures
    (e.g. ``rho = 1``) fall back to a symmetric eigen square root.
    """
    corr = model.correlation()
    if is_positive_definite(corr):
        return cholesky(corr)
    vals, vecs = np.linalg.eigh(corr)
    if vals[0] < -1e-8 * max(vals[-1], 1.0):
        raise NotPositiveDefiniteError("correlation matrix is indefinite; repair it with nearest_pd")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_processes(model: ProcessModel, rng: np.random.Generator, size: int,
                     factor: np.ndarray | None = None) -> np.ndarray:
    """``size`` independent draws of the process, shape ``(size, n)``.

    Student-t draws use one chi-square variable per process vector.
    """
    f = correlation_factor(model) if factor is None else factor
    z = rng.standard_normal((size, f.shape[1])) @ f.T
    if isinstance(model.family, StudentT):
        df = model.family.df
        z /= np.sqrt(rng.chisquare(df, size) / df)[:, None]
    return model.theta0 + model.sigma * z


def sample_process(model: ProcessModel, rng: np.random.Generator, id: str = "sim") -> Series:
    return Series(id, sample_processes(model, rng, 1)[0])


def _window_sums(x: np.ndarray, w: int) -> np.ndarray:
    c = np.zeros((x.shape[0], x.shape[1] + 1))
    np.cumsum(x, axis=1, out=c[:, 1:])
    return c[:, w:] - c[:, :-w]


# ---------------------------------------------------------------------------
# verification against simulation

@dataclass(frozen=True)
class SimPlan:
    """``N`` realisations, each of ``J`` sampled processes."""

    model: ProcessModel
    w: int
    s: float
    N: int = 1000
    J: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.J < 1:
            raise ValueError("N and J must be positive")
        if not 1 <= self.w <= self.model.n:
            raise ValueError(f"window size must be in [1, {self.model.n}]")


@dataclass
class SimEstimates:
    cov: np.ndarray
    cov_se: np.ndarray
    p: float
    p_se: float


def simulate_plan(plan: SimPlan) -> SimEstimates:
    """Average per-realisation sum covariances and exceedance proportions.

    Standard errors are taken across the ``N`` realisations.  ``cov`` needs
    ``J >= 2``; with ``J == 1`` it is returned as NaN.
    """
    f = correlation_factor(plan.model)
    m = plan.model.n - plan.w + 1
    covs = np.empty((plan.N, m, m))
    props = np.empty(plan.N)
    for i in range(plan.N):
        x = sample_processes(plan.model, stream(plan.seed, i), plan.J, f)
        y = _window_sums(x, plan.w)
        covs[i] = np.cov(y, rowvar=False).reshape(m, m) if plan.J > 1 else np.nan
        props[i] = np.mean(y.max(axis=1) > plan.s)
    se = (lambda a: a.std(axis=0, ddof=1) / math.sqrt(plan.N)) if plan.N > 1 else (lambda a: np.full(a.shape[1:], np.nan))
    return SimEstimates(covs.mean(axis=0), se(covs), float(props.mean()), float(se(props)))


def estimate_sum_covariance(plan: SimPlan) -> tuple[np.ndarray, np.ndarray]:
    est = simulate_plan(plan)
    return est.cov, est.cov_se


def estimate_tail_probability(plan: SimPlan) -> tuple[float, float]:
    est = simulate_plan(plan)
    return est.p, est.p_se


def random_general_structure(n: int, seed: int) -> np.ndarray:
    """Uniform[-1, 1] off-diagonal correlations, repaired with ``nearest_pd`` if needed."""
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = stream(seed)
    a = np.eye(n)
    iu = np.triu_indices(n, 1)
    a[iu] = rng.uniform(-1.0, 1.0, iu[0].size)
    a = a + np.triu(a, 1).T
    return a if is_positive_definite(a) else nearest_pd(a)


# ---------------------------------------------------------------------------
# effects and the multi-process experiment

@dataclass(frozen=True)
class EffectSpec:
    """Raise ``length`` values from 1-based position ``start`` by ``height``."""

    start: int
    length: int
    height: float


def inject_effect(x: Series, effect: EffectSpec) -> Series:
    if effect.start < 1 or effect.length < 0 or effect.start + effect.length - 1 > x.n:
        raise ValueError(f"effect {effect} does not fit a series of length {x.n}")
    v = np.array(x.values)
    v[effect.start - 1:effect.start - 1 + effect.length] += effect.height
    return Series(x.id, v)


@dataclass(frozen=True)
class ExperimentConfig:
    """Family of auto-correlated t processes, a fraction carrying an effect.

    Defaults are a desk-scale version (500 series) of the 6000-series setup.
    """

    n_series: int = 500
    lengths: tuple[int, ...] = (100, 500, 1000)
    length_probs: tuple[float, ...] = (0.4, 0.5, 0.1)
    effect_fraction: float = 0.04
    effect_length: int = 10
    heights: tuple[float, ...] = (12.0, 14.0, 16.0, 18.0)
    rho: float = 0.2
    sigma: float = 4.0
    df: float = 7.0
    w: int = 10
    q: float = 0.05
    seed: int = 0
    abs_err: float = 1e-2
    max_points: int = 2**11 * 12
    # second pass for p-values that can matter to BH: relative error target,
    # floored at a tenth of the smallest step-up threshold q / n_series
    refine_below: float = 5e-3
    refine_rel_err: float = 0.1
    refine_max_points: int = 2**16 * 12

    def full_scale(self) -> "ExperimentConfig":
        return replace(self, n_series=6000)

    def integration(self) -> IntegrationConfig:
        return IntegrationConfig(abs_err=self.abs_err, max_points=self.max_points, seed=self.seed)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    ids: list[str]
    lengths: np.ndarray
    has_effect: np.ndarray
    statistics: np.ndarray
    p: np.ndarray
    p_error: np.ndarray
    p_bh: np.ndarray
    discoveries: int
    fdp: float
    power: float
    null_ks_pvalue: float

    def sorted_curves(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sorted raw p-values, their BH values and the uniform quantiles ``i/(m+1)``."""
        order = np.argsort(self.p, kind="stable")
        m = self.p.size
        return self.p[order], self.p_bh[order], np.arange(1, m + 1) / (m + 1)


def experiment_multi_process(config: ExperimentConfig) -> ExperimentReport:
    """Simulate the family, compute BH-adjusted scan p-values and score them
    against the known effect locations."""
    rng = stream(config.seed, 0)
    lengths = rng.choice(np.asarray(config.lengths), size=config.n_series, p=config.length_probs)
    n_effects = int(round(config.effect_fraction * config.n_series))
    effect_idx = set(rng.choice(config.n_series, size=n_effects, replace=False).tolist())

    family = StudentT(config.df)
    series = []
    for i, n in enumerate(lengths.tolist()):
        model = ProcessModel(n, Auto(config.rho), config.sigma, family)
        r = stream(config.seed, 1, i)
        x = sample_process(model, r, id=f"s{i:05d}")
        if i in effect_idx:
            start = int(r.integers(1, n - config.effect_length + 2))
            x = inject_effect(x, EffectSpec(start, config.effect_length, float(r.choice(config.heights))))
        series.append(x)

    base = ProcessModel(int(lengths[0]), Auto(config.rho), config.sigma, family)
    report = batch_pvalues(series, base, config.w, config.integration())
    floor = config.q / (10 * config.n_series)
    for row in report.rows:
        if row.error is None and row.p - row.p_error <= config.refine_below:
            cfg = IntegrationConfig(abs_err=max(config.refine_rel_err * row.p, floor),
                                    max_points=config.refine_max_points, seed=config.seed)
            est = tail_probability(base.with_length(row.n), config.w, row.scan.statistic, cfg)
            row.p, row.p_error = est.value, est.error
    p = report.pvalues()
    p_bh = np.full(p.shape, np.nan)
    ok = ~np.isnan(p)
    p_bh[ok] = bh_adjust(p[ok])
    has_effect = np.array([i in effect_idx for i in range(config.n_series)])
    reject = p_bh <= config.q
    discoveries = int(reject.sum())
    false = int((reject & ~has_effect).sum())
    fdp = false / discoveries if discoveries else 0.0
    power = float((reject & has_effect).sum() / n_effects) if n_effects else float("nan")
    null_p = p[~has_effect]
    ks = float(stats.kstest(null_p, "uniform").pvalue) if null_p.size else float("nan")
    return ExperimentReport(
        config=config,
        ids=[x.id for x in series],
        lengths=lengths,
        has_effect=has_effect,
        statistics=np.array([r.scan.statistic for r in report.rows]),
        p=p,
        p_error=np.array([r.p_error for r in report.rows]),
        p_bh=p_bh,
        discoveries=discoveries,
        fdp=fdp,
        power=power,
        null_ks_pvalue=ks,
    )


# ---------------------------------------------------------------------------
# normal scores

def normal_scores(x, df: float) -> np.ndarray:
    """``Phi^{-1}(F_t(x; df))``, evaluated through the upper tail for ``x > 0``."""
    if not df > 0:
        raise ValueError("df must be positive")
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise ValueError("normal scores need finite input")
    lower = ndtri(stats.t.cdf(np.minimum(x, 0.0), df))
    upper = -ndtri(stats.t.sf(np.maximum(x, 0.0), df))
    return np.where(x > 0, upper, lower)


@dataclass
class ScoreSummary:
    """Variance, sd and correlation of normal scores, with SEs across repetitions."""

    variance: float
    variance_se: float
    sd: float
    sd_se: float
    corr: float
    corr_se: float


def normal_score_covariance(model: ProcessModel, n_processes: int = 1000, reps: int = 100,
                            seed: int = 0) -> ScoreSummary:
    """Simulate t processes, transform to normal scores and estimate their
    marginal variance and correlation.

    The correlation is the mean over all off-diagonal pairs for a common
    structure and the mean lag-one correlation otherwise.
    """
    if not isinstance(model.family, StudentT):
        raise ValueError("normal scores are defined for Student-t processes")
    f = correlation_factor(model)
    var, sd, cor = [], [], []
    for r in range(reps):
        x = sample_processes(model, stream(seed, r), n_processes, f)
        z = normal_scores(x, model.family.df)
        v = z.var(axis=0, ddof=1)
        var.append(v.mean())
        sd.append(np.sqrt(v).mean())
        c = np.corrcoef(z, rowvar=False)
        if isinstance(model.structure, Common):
            cor.append(c[np.triu_indices_from(c, 1)].mean())
        else:
            cor.append(np.diag(c, 1).mean())

    def mse(a):
        a = np.asarray(a)
        return float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else float("nan")

    return ScoreSummary(*mse(var), *mse(sd), *mse(cor))


# ---------------------------------------------------------------------------
# scan distribution and covariance sensitivity

@dataclass
class MomentSummary:
    """Moments of simulated scan statistics.

    ``skewness`` is ``m3 / m2**1.5`` and ``kurtosis`` is ``m4 / m2**2``
    (biased moment estimators); ``excess_kurtosis`` is ``kurtosis - 3``.
    """

    mean: float
    sd: float
    skewness: float
    kurtosis: float
    excess_kurtosis: float
    threshold: float
    tail: TailProbEstimate | None = None


def simulate_scan_statistics(model: ProcessModel, w: int, reps: int, seed: int) -> np.ndarray:
    x = sample_processes(model, stream(seed), reps)
    return _window_sums(x, w).max(axis=1)


def scan_distribution_summary(
    model: ProcessModel,
    w: int,
    reps: int = 10000,
    seed: int = 0,
    threshold: float | None = None,
    config: IntegrationConfig | None = None,
    with_tail: bool = True,
) -> MomentSummary:
    """Moments of ``S_w`` by simulation and its tail probability at ``threshold``.

    The default threshold is the simulated mean of ``S_w`` for the same model
    without correlation.
    """
    if reps < 2:
        raise ValueError("need at least two repetitions")
    s = simulate_scan_statistics(model, w, reps, seed)
    if threshold is None:
        indep = replace(model, structure=Common(0.0))
        threshold = float(simulate_scan_statistics(indep, w, reps, seed).mean())
    tail = tail_probability(model, w, threshold, config) if with_tail else None
    skew = float(stats.skew(s, bias=True))
    kurt = float(stats.kurtosis(s, fisher=False, bias=True))
    return MomentSummary(
        mean=float(s.mean()),
        sd=float(s.std(ddof=1)),
        skewness=skew,
        kurtosis=kurt,
        excess_kurtosis=kurt - 3.0,
        threshold=threshold,
        tail=tail,
    )


def covariance_sensitivity_grid(kind: str, sigma: float, windows, gaps, rhos, n: int = 16) -> list[dict]:
    """Closed-form window-sum covariances over a ``rho x w x g`` grid.

    One row per combination.  ``overlap`` is the shared fraction ``(w-g)/w``
    of the two windows (0 once they no longer overlap).  Rows outside the
    structure's admissible ``rho`` range or whose windows do not fit in
    ``n`` are kept with ``valid = False`` and a ``note``.
    """
    if kind not in ("common", "auto"):
        raise ValueError(f"unknown structure kind {kind!r}")
    rows = []
    for rho in rhos:
        for w in windows:
            for g in gaps:
                row = {
                    "structure": kind,
                    "rho": float(rho),
                    "w": int(w),
                    "g": int(g),
                    "overlap": max(w - g, 0) / w,
                    "covariance": float("nan"),
                    "valid": True,
                    "note": "",
                }
                try:
                    structure = Common(float(rho)) if kind == "common" else Auto(float(rho))
                    model = ProcessModel(n, structure, sigma)
                    row["covariance"] = moving_sum_cov(model, int(w), 1, int(g))
                except ValueError as exc:
                    row["valid"] = False
                    row["note"] = str(exc)
                rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# exact-versus-simulated verification tables

# 7 x 7 example correlation matrix (3-decimal print of a repaired random draw;
# slightly indefinite as printed, so it is passed through nearest_pd before use).
GENERAL_EXAMPLE = np.array([
    [1.000, -0.314, -0.454, -0.154, -0.107, 0.395, 0.650],
    [-0.314, 1.000, 0.050, 0.452, 0.095, 0.474, -0.230],
    [-0.454, 0.050, 1.000, 0.110, 0.538, -0.342, 0.210],
    [-0.154, 0.452, 0.110, 1.000, -0.359, -0.045, -0.127],
    [-0.107, 0.095, 0.538, -0.359, 1.000, -0.312, -0.035],
    [0.395, 0.474, -0.342, -0.045, -0.312, 1.000, 0.495],
    [0.650, -0.230, 0.210, -0.127, -0.035, 0.495, 1.000],
])

NORMAL_GRID = (
    [("general", None)]
    + [("common", r) for r in (-0.1, 0.0, 0.1, 0.25, 0.5, 0.75, 1.0)]
    + [("auto", r) for r in (-1.0, -0.75, -0.5, -0.25, -0.1, 0.1, 0.25, 0.5, 0.75)]
)
T_GRID = [("common", r) for r in (0.0, 0.25, 0.5, 0.75)] + [("auto", r) for r in (0.25, 0.5, 0.75)]

VERIFY_COLUMNS = [
    "structure", "rho", "p_exact", "p_exact_error", "p_hat", "p_se", "p_z",
    "cov_g2", "cov_g2_hat", "cov_g2_se", "cov_g2_z",
    "cov_g4", "cov_g4_hat", "cov_g4_se", "cov_g4_z",
]


def verification_model(kind: str, rho, family: str = "normal", n: int = 7) -> ProcessModel:
    if kind == "general":
        return ProcessModel(n, General(nearest_pd(GENERAL_EXAMPLE) if rho is None else rho))
    structure = Common(rho) if kind == "common" else Auto(rho)
    if family == "t":
        return ProcessModel(n, structure, sigma=4.0, family=StudentT(7.0))
    return ProcessModel(n, structure)


def verification_row(model: ProcessModel, w: int = 3, s: float = 3.0, N: int = 1000, J: int = 1000,
                     seed: int = 0, config: IntegrationConfig | None = None) -> dict:
    """Exact tail probability and covariances (``t = 1``, gaps 2 and 4) next to
    their simulation estimates.

    ``*_z`` columns hold ``|exact - estimate| / SE``.  For Student-t models the
    exact covariance is the scale entry times ``df / (df - 2)``.
    """
    exact_p = tail_probability(model, w, s, config)
    est = simulate_plan(SimPlan(model, w, s, N, J, seed))
    factor = 1.0
    if isinstance(model.family, StudentT):
        df = model.family.df
        factor = df / (df - 2.0) if df > 2 else float("nan")
    s_kind = model.structure.kind
    row = {
        "structure": s_kind,
        "rho": getattr(model.structure, "rho", float("nan")),
        "p_exact": exact_p.value,
        "p_exact_error": exact_p.error,
        "p_hat": est.p,
        "p_se": est.p_se,
        "p_z": abs(exact_p.value - est.p) / est.p_se if est.p_se > 0 else float("nan"),
    }
    for g in (2, 4):
        if g + w > model.n:
            row.update({f"cov_g{g}": float("nan"), f"cov_g{g}_hat": float("nan"),
                        f"cov_g{g}_se": float("nan"), f"cov_g{g}_z": float("nan")})
            continue
        exact = moving_sum_cov(model, w, 1, g) * factor
        hat, se = est.cov[0, g], est.cov_se[0, g]
        row.update({
            f"cov_g{g}": exact,
            f"cov_g{g}_hat": float(hat),
            f"cov_g{g}_se": float(se),
            f"cov_g{g}_z": abs(exact - hat) / se if se > 0 else float("nan"),
        })
    return row


def verification_table(family: str = "normal", N: int = 1000, J: int | None = None, seed: int = 0,
                       config: IntegrationConfig | None = None) -> list[dict]:
    """Rows for the normal (``J`` default 1000) or Student-t (``J`` default 500) grid."""
    grid = NORMAL_GRID if family == "normal" else T_GRID
    J = J if J is not None else (1000 if family == "normal" else 500)
    return [
        verification_row(verification_model(kind, rho, family), N=N, J=J, seed=seed, config=config)
        for kind, rho in grid
    ]
