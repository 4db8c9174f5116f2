"""Command-line interface.

Every subcommand resolves a :class:`RunConfig` from built-in defaults, an
optional flat JSON ``--config`` file and explicit flags (in that order of
precedence, flags last), validates it, and writes one report that embeds
the resolved configuration.

Exit codes: 0 success, 2 validation error, 3 numerical failure.  Failures
print a JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .covariance import build_sum_covariance
from .io import Report, SeriesFormatError, _jsonable, parse_series_csv, read_matrix_csv, render_report
from .matrix_ops import NearestPDError, NotPositiveDefiniteError, is_positive_definite, nearest_pd
from .models import Auto, Common, General, Normal, ProcessModel, StudentT
from .mvnt import IntegrationConfig
from .scan import batch_pvalues, scan_statistic, tail_probability
from .simulation import (
    VERIFY_COLUMNS,
    ExperimentConfig,
    covariance_sensitivity_grid,
    experiment_multi_process,
    scan_distribution_summary,
    verification_table,
)

log = logging.getLogger("scancov")

COMMANDS = ("cov", "tailprob", "scan", "pvalues", "verify", "sensitivity", "experiment")
THREADS_ENV = "SCANCOV_THREADS"

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


class NumericalFailure(RuntimeError):
    """Raised for results that do not meet the requested accuracy in strict mode."""


@dataclass
class RunConfig:
    """Everything a run needs.  ``None`` means "use the subcommand default"."""

    command: str | None = None
    # model
    structure: str | None = None
    rho: float | None = None
    matrix: str | None = None
    repair: bool | None = None
    sigma: float | None = None
    family: str | None = None
    df: float | None = None
    theta0: float | None = None
    n: int | None = None
    w: int | None = None
    s: float | None = None
    # integration
    seed: int | None = None
    abs_err: float | None = None
    replications: int | None = None
    min_points: int | None = None
    max_points: int | None = None
    strict: bool | None = None
    # io
    input: str | None = None
    output: str | None = None
    format: str | None = None
    threads: int | None = None
    # verify / simulation
    table: str | None = None
    N: int | None = None
    J: int | None = None
    kind: str | None = None
    rhos: list | None = None
    windows: list | None = None
    gaps: list | None = None
    reps: int | None = None
    # experiment
    n_series: int | None = None
    effect_fraction: float | None = None
    q: float | None = None
    full_scale: bool | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def integration(self) -> IntegrationConfig:
        return IntegrationConfig(abs_err=self.abs_err, replications=self.replications,
                                 min_points=self.min_points, max_points=self.max_points, seed=self.seed)

    def merged(self, other: "RunConfig") -> "RunConfig":
        """Values of ``other`` win wherever they are set."""
        return RunConfig(**{
            f.name: getattr(other, f.name) if getattr(other, f.name) is not None else getattr(self, f.name)
            for f in fields(self)
        })


_BASE = dict(
    structure="common", rho=0.0, repair=False, sigma=1.0, family="normal", df=7.0, theta0=0.0,
    seed=0, abs_err=5e-4, replications=12, min_points=2**10, max_points=2**22 * 12, strict=False,
    format="csv", N=1000, reps=10000, q=0.05, full_scale=False,
)
_EXPERIMENT = ExperimentConfig()
_PER_COMMAND = {
    "tailprob": dict(format="json"),
    "verify": dict(table="normal"),
    "sensitivity": dict(kind="covariance", windows=[5, 10], gaps=list(range(1, 11)),
                        rhos=[round(0.1 * i, 10) for i in range(11)]),
    "experiment": dict(rho=_EXPERIMENT.rho, sigma=_EXPERIMENT.sigma, df=_EXPERIMENT.df, w=_EXPERIMENT.w,
                       abs_err=_EXPERIMENT.abs_err, max_points=_EXPERIMENT.max_points,
                       n_series=_EXPERIMENT.n_series, effect_fraction=_EXPERIMENT.effect_fraction,
                       q=_EXPERIMENT.q),
}


def resolve(config: RunConfig) -> RunConfig:
    """Fill defaults and validate.  Raises ``ValueError`` on bad input."""
    if config.command not in COMMANDS:
        raise ValueError(f"subcommand must be one of {', '.join(COMMANDS)}, got {config.command!r}")
    defaults = RunConfig(**{**_BASE, **_PER_COMMAND.get(config.command, {})})
    if config.threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                defaults.threads = int(env)
            except ValueError:
                raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    defaults.threads = defaults.threads or 1
    c = defaults.merged(config)

    if c.structure not in ("common", "auto", "general"):
        raise ValueError(f"structure must be common, auto or general, got {c.structure!r}")
    if c.family not in ("normal", "t"):
        raise ValueError(f"family must be normal or t, got {c.family!r}")
    if c.format not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {c.format!r}")
    if c.structure == "general" and c.matrix is None and c.command in ("cov", "tailprob", "scan", "pvalues"):
        raise ValueError("a general structure needs --matrix")
    if c.threads < 1:
        raise ValueError("threads must be >= 1")
    need = {
        "cov": ("w",),
        "tailprob": ("w", "s"),
        "scan": ("w", "input"),
        "pvalues": ("w", "input"),
        "sensitivity": (),
        "verify": (),
        "experiment": (),
    }[c.command]
    missing = [k for k in need if getattr(c, k) is None]
    if c.command in ("cov", "tailprob") and c.n is None and c.structure != "general":
        missing.append("n")
    if c.command == "sensitivity" and c.kind == "moments":
        missing += [k for k in ("n", "w") if getattr(c, k) is None]
    if missing:
        raise ValueError(f"{c.command} needs: {', '.join('--' + m.replace('_', '-') for m in missing)}")
    if c.w is not None and c.w < 1:
        raise ValueError(f"window size must be >= 1, got {c.w}")
    if c.table not in (None, "normal", "t"):
        raise ValueError(f"table must be normal or t, got {c.table!r}")
    if c.kind not in (None, "covariance", "moments"):
        raise ValueError(f"kind must be covariance or moments, got {c.kind!r}")
    c.integration()  # validates the integration fields
    return c


def _structure(c: RunConfig, rho: float | None = None):
    if c.structure == "general":
        a = read_matrix_csv(c.matrix)
        if c.repair and not is_positive_definite(a):
            a = nearest_pd(a)
        return General(a)
    rho = c.rho if rho is None else rho
    return Common(rho) if c.structure == "common" else Auto(rho)


def _model(c: RunConfig, n: int | None = None, rho: float | None = None) -> ProcessModel:
    structure = _structure(c, rho)
    if n is None:
        n = c.n if c.n is not None else structure.size
    family = StudentT(c.df) if c.family == "t" else Normal()
    return ProcessModel(n, structure, c.sigma, family, c.theta0)


def _meta(c: RunConfig, **extra) -> dict:
    return {"config": asdict(c), "seed": c.seed, **extra}


# ---------------------------------------------------------------------------
# subcommands

def cmd_cov(c: RunConfig):
    law = build_sum_covariance(_model(c), c.w)
    cols = [f"y{i + 1}" for i in range(law.m)]
    return Report("cov", cols, law.cov.tolist(), _meta(c))


def cmd_tailprob(c: RunConfig):
    est = tail_probability(_model(c), c.w, c.s, c.integration())
    if c.strict and not est.converged:
        raise NumericalFailure(f"integration error {est.error:.3g} above target {c.abs_err:.3g}")
    doc = {
        "value": est.value,
        "error": est.error,
        "samples": est.samples,
        "converged": est.converged,
        "config": asdict(c),
        "seed": c.seed,
        "version": __version__,
    }
    return json.dumps(_jsonable(doc), indent=2, allow_nan=False) + "\n"


def cmd_scan(c: RunConfig):
    rows = []
    for x in parse_series_csv(c.input):
        r = scan_statistic(x, c.w)
        rows.append([x.id, r.statistic, r.t_star])
    return Report("scan", ["id", "S", "t_star"], rows, _meta(c))


def cmd_pvalues(c: RunConfig):
    series = parse_series_csv(c.input)
    cfg = c.integration()
    model = _model(c) if c.structure == "general" else _model(c, n=series[0].n)
    report = batch_pvalues(series, model, c.w, cfg, workers=c.threads)
    if c.strict:
        bad = [r.id for r in report.rows if r.error is None and r.p_error > c.abs_err]
        if bad:
            raise NumericalFailure(f"integration did not reach {c.abs_err:.3g} for: {', '.join(bad)}")
    rows = []
    for r in report.rows:
        s = r.scan.statistic if r.scan else float("nan")
        t = r.scan.t_star if r.scan else None
        rows.append([r.id, r.n, s, t, r.p, r.p_bh, r.p_error, r.error or ""])
    cols = ["id", "n", "S", "t_star", "p", "p_bh", "p_error", "error"]
    return Report("pvalues", cols, rows, _meta(c, **report.meta), display={"p": 5, "p_bh": 5})


def cmd_verify(c: RunConfig):
    table = verification_table(c.table, N=c.N, J=c.J, seed=c.seed, config=c.integration())
    rows = [[r[k] for k in VERIFY_COLUMNS] for r in table]
    shown = {k: 5 for k in ("p_exact", "p_hat", "p_se", "cov_g2", "cov_g2_hat", "cov_g4", "cov_g4_hat")}
    return Report(f"verify-{c.table}", list(VERIFY_COLUMNS), rows, _meta(c), display=shown)


_MOMENT_COLUMNS = ["structure", "rho", "mean", "sd", "skewness", "kurtosis", "excess_kurtosis",
                   "threshold", "p", "p_error"]


def cmd_sensitivity(c: RunConfig):
    if c.kind == "covariance":
        if c.structure == "general":
            raise ValueError("covariance sensitivity grids are defined for common and auto structures")
        n = c.n or max(c.windows) + max(c.gaps)
        grid = covariance_sensitivity_grid(c.structure, c.sigma, c.windows, c.gaps, c.rhos, n=n)
        cols = ["structure", "rho", "w", "g", "overlap", "covariance", "valid", "note"]
        rows = [[r[k] for k in cols] for r in grid]
        return Report("sensitivity-covariance", cols, rows, _meta(c, n=n), display={"covariance": 4})
    rows = []
    for rho in c.rhos:
        m = scan_distribution_summary(_model(c, rho=rho), c.w, reps=c.reps, seed=c.seed,
                                      threshold=c.s, config=c.integration())
        rows.append([c.structure, float(rho), m.mean, m.sd, m.skewness, m.kurtosis, m.excess_kurtosis,
                     m.threshold, m.tail.value, m.tail.error])
    return Report("sensitivity-moments", _MOMENT_COLUMNS, rows, _meta(c), display={"p": 5})


def cmd_experiment(c: RunConfig):
    ec = ExperimentConfig(
        n_series=c.n_series, effect_fraction=c.effect_fraction, rho=c.rho, sigma=c.sigma, df=c.df,
        w=c.w, q=c.q, seed=c.seed, abs_err=c.abs_err, max_points=c.max_points,
    )
    if c.full_scale:
        ec = ec.full_scale()
    rep = experiment_multi_process(ec)
    p, p_bh, expected = rep.sorted_curves()
    order = np.argsort(rep.p, kind="stable")
    rows = [
        [k + 1, rep.ids[i], int(rep.lengths[i]), bool(rep.has_effect[i]), rep.statistics[i],
         p[k], p_bh[k], expected[k]]
        for k, i in enumerate(order.tolist())
    ]
    cols = ["rank", "id", "n", "effect", "S", "p", "p_bh", "expected"]
    summary = {"discoveries": rep.discoveries, "fdp": rep.fdp, "power": rep.power,
               "null_ks_pvalue": rep.null_ks_pvalue, "experiment": asdict(ec)}
    return Report("experiment", cols, rows, _meta(c, **summary), display={"p": 5, "p_bh": 5})


HANDLERS = {
    "cov": cmd_cov,
    "tailprob": cmd_tailprob,
    "scan": cmd_scan,
    "pvalues": cmd_pvalues,
    "verify": cmd_verify,
    "sensitivity": cmd_sensitivity,
    "experiment": cmd_experiment,
}


def _emit(text: str, c: RunConfig) -> None:
    if c.output:
        try:
            Path(c.output).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write report to {c.output}: {exc}") from exc
    else:
        sys.stdout.write(text)


def _fail(code: int, exc: BaseException) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    row = getattr(exc, "row", None)
    if row is not None:
        err["row"] = row
    sys.stderr.write(json.dumps(err) + "\n")
    return code


def run(config: RunConfig) -> int:
    """Resolve, execute and write; returns the process exit status."""
    try:
        c = resolve(config)
        out = HANDLERS[c.command](c)
        _emit(out if isinstance(out, str) else render_report(out, c.format), c)
    except (NotPositiveDefiniteError, NearestPDError, NumericalFailure, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except (ValueError, SeriesFormatError, FileNotFoundError, OSError, KeyError) as exc:
        return _fail(EXIT_INVALID, exc)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            a, b = part.split(":")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    common.add_argument("--config", help="flat JSON file with RunConfig fields")
    m = common.add_argument_group("model")
    m.add_argument("--structure", choices=["common", "auto", "general"])
    m.add_argument("--rho", type=float)
    m.add_argument("--matrix", help="CSV correlation matrix for a general structure")
    m.add_argument("--repair", action="store_true", help="replace an indefinite matrix by its nearest PD one")
    m.add_argument("--sigma", type=float, help="standard deviation (normal) or scale (t)")
    m.add_argument("--family", choices=["normal", "t"])
    m.add_argument("--df", type=float)
    m.add_argument("--theta0", type=float)
    m.add_argument("-n", "--n", type=int, help="process length")
    m.add_argument("-w", "--w", type=int, help="window size")
    m.add_argument("-s", "--s", type=float, help="threshold")
    g = common.add_argument_group("integration")
    g.add_argument("--seed", type=int)
    g.add_argument("--abs-err", dest="abs_err", type=float)
    g.add_argument("--replications", type=int)
    g.add_argument("--min-points", dest="min_points", type=int)
    g.add_argument("--max-points", dest="max_points", type=int)
    g.add_argument("--strict", action="store_true", help="treat non-convergence as failure (exit 3)")
    o = common.add_argument_group("output")
    o.add_argument("-o", "--output")
    o.add_argument("--format", choices=["csv", "json"])
    o.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="scancov", description="Scan-statistic covariances and tail probabilities.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("cov", parents=[common], help="covariance matrix of the moving sums")
    sub.add_parser("tailprob", parents=[common], help="P(S_w > s) as JSON")
    for name, text in (("scan", "scan statistic per series"), ("pvalues", "batch p-values with BH adjustment")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("-i", "--input", help="series CSV (id,values)", default=S)
    p = sub.add_parser("verify", parents=[common], help="exact values against simulation")
    p.add_argument("--table", choices=["normal", "t"], default=S)
    p.add_argument("--N", dest="N", type=int, default=S, help="outer realisations")
    p.add_argument("--J", dest="J", type=int, default=S, help="processes per realisation")
    p = sub.add_parser("sensitivity", parents=[common], help="covariance or moment grids")
    p.add_argument("--kind", choices=["covariance", "moments"], default=S)
    p.add_argument("--rhos", type=_floats, default=S)
    p.add_argument("--windows", type=_ints, default=S)
    p.add_argument("--gaps", type=_ints, default=S, help="list or a:b ranges")
    p.add_argument("--reps", type=int, default=S)
    p = sub.add_parser("experiment", parents=[common], help="multi-process FDR experiment")
    p.add_argument("--n-series", dest="n_series", type=int, default=S)
    p.add_argument("--effect-fraction", dest="effect_fraction", type=float, default=S)
    p.add_argument("--q", type=float, default=S)
    p.add_argument("--full-scale", dest="full_scale", action="store_true", default=S)
    return parser


def config_from_args(argv=None) -> tuple[RunConfig, bool]:
    ns = vars(build_parser().parse_args(argv))
    verbose = ns.pop("verbose", False)
    base = RunConfig()
    path = ns.pop("config", None)
    if path is not None:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ValueError("config file must hold a JSON object")
        doc.pop("command", None)
        base = RunConfig.from_dict(doc)
    return base.merged(RunConfig.from_dict(ns)), verbose


def main(argv=None) -> int:
    try:
        config, verbose = config_from_args(argv)
    except (ValueError, OSError) as exc:
        return _fail(EXIT_INVALID, exc)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
