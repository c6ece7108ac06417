"""Seeded replication studies for the full selection-and-test pipeline."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats

from .datagen import (
    CoefficientSpec,
    CoefficientVector,
    DesignSpec,
    RegimeReport,
    check_regime,
    make_coefficients,
    rn_proxy,
    sample_dataset,
)
from .errors import HdpsError, RegimeError
from .lasso import default_lambda, fit_lasso
from .lintest import MC_DRAWS, RANK_TOL, Hypothesis, decide, linear_test, nonzero_eigenvalues
from .postsel import default_tau, fit_post_ols, rescaled_error, select_support

DENSE_PROJECTION_WIDTH = 50


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Everything a replication study depends on.

    ``hypothesis`` is kept as its JSON mapping because ``b`` may be given
    relative to the realised truth (``b_offset``).  ``projection_vectors``
    are dense ``p``-vectors; ``None`` selects the default set.
    """

    design: DesignSpec
    coefficients: CoefficientSpec
    hypothesis: Mapping[str, Any] | None = None
    replications: int = 100
    alpha: float = 0.05
    lambda_c: float = 1.0
    tau: float | str = "auto"
    rn_c: float = 1.0
    mc_draws: int = MC_DRAWS
    master_seed: int = 0
    projection_vectors: tuple[tuple[float, ...], ...] | None = None
    lasso_tol: float = 1e-8
    lasso_max_iter: int = 10_000
    rank_tol: float = RANK_TOL
    method: str = "monte-carlo"

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise HdpsError(f"replications must be at least 1, got {self.replications}")
        if not 0 < self.alpha < 1:
            raise HdpsError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.design.p != self.coefficients.p:
            raise HdpsError(f"design p = {self.design.p} but coefficients p = {self.coefficients.p}")
        if self.tau != "auto" and not (isinstance(self.tau, (int, float)) and self.tau > 0):
            raise HdpsError(f"tau must be 'auto' or a positive number, got {self.tau!r}")
        if self.projection_vectors is not None:
            for u in self.projection_vectors:
                if len(u) != self.design.p:
                    raise HdpsError(f"projection vector has length {len(u)}, expected {self.design.p}")
                if abs(math.fsum(x * x for x in u) - 1.0) > 1e-9:
                    raise HdpsError("projection vectors must have unit l2 norm")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {**self.design.to_dict(), **self.coefficients.to_dict()}
        d.update(
            seed=self.master_seed,
            replications=self.replications,
            alpha=self.alpha,
            lambda_c=self.lambda_c,
            tau=self.tau,
            rn_c=self.rn_c,
            mc_draws=self.mc_draws,
            lasso_tol=self.lasso_tol,
            lasso_max_iter=self.lasso_max_iter,
            rank_tol=self.rank_tol,
            method=self.method,
            hypothesis=None if self.hypothesis is None else dict(self.hypothesis),
            projection_vectors=None
            if self.projection_vectors is None
            else [list(u) for u in self.projection_vectors],
        )
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ExperimentConfig:
        design = DesignSpec.from_dict(d)
        coefs = CoefficientSpec.from_dict(d)
        pv = d.get("projection_vectors")
        if pv is not None:
            pv = tuple(tuple(float(x) for x in _dense_vector(u, design.p)) for u in pv)
        tau = d.get("tau", "auto")
        return cls(
            design=design,
            coefficients=coefs,
            hypothesis=d.get("hypothesis"),
            replications=int(d.get("replications", 100)),
            alpha=float(d.get("alpha", 0.05)),
            lambda_c=float(d.get("lambda_c", 1.0)),
            tau=tau if tau == "auto" else float(tau),
            rn_c=float(d.get("rn_c", 1.0)),
            mc_draws=int(d.get("mc_draws", MC_DRAWS)),
            master_seed=int(d.get("seed", 0)),
            projection_vectors=pv,
            lasso_tol=float(d.get("lasso_tol", 1e-8)),
            lasso_max_iter=int(d.get("lasso_max_iter", 10_000)),
            rank_tol=float(d.get("rank_tol", RANK_TOL)),
            method=str(d.get("method", "monte-carlo")),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> ExperimentConfig:
        with Path(path).open() as fh:
            return cls.from_dict(json.load(fh))


def _dense_vector(u: Any, p: int) -> list[float]:
    # accepts a dense list or a {1-based index: value} map
    if isinstance(u, Mapping):
        out = [0.0] * p
        for j, v in u.items():
            out[int(j) - 1] = float(v)
        return out
    return [float(x) for x in u]


@dataclass
class ReplicationRecord:
    seed: int
    support_equals_Tgamma: bool
    support_size: int
    theta_inf_err: float
    post_inf_err: float
    sigma2_hat: float
    projections: list[float]
    lasso_lambda: float
    lasso_iterations: int
    lasso_max_kkt: float
    lasso_converged: bool
    W: float | None = None
    c_hat_mc: float | None = None
    c_hat_mm: float | None = None
    reject_mc: bool | None = None
    reject_mm: bool | None = None
    rank: int | None = None
    spectrum_err: float | None = None
    degenerate: bool | None = None


@dataclass(frozen=True, eq=False)
class _Context:
    """Per-experiment quantities shared by every replication."""

    config: ExperimentConfig
    truth: CoefficientVector
    lam: float
    tau: float
    U: np.ndarray
    hypothesis: Hypothesis | None
    true_lambdas: np.ndarray | None
    regime: RegimeReport = field(repr=False, default=None)


def default_projection_vectors(truth: CoefficientVector) -> np.ndarray:
    """Canonical basis on the strong set, then one flat vector on the first coordinates."""
    p = truth.p
    vecs = []
    for j in truth.strong_set:
        e = np.zeros(p)
        e[j] = 1.0
        vecs.append(e)
    m = min(p, DENSE_PROJECTION_WIDTH)
    u = np.zeros(p)
    u[:m] = 1.0 / math.sqrt(m)
    vecs.append(u)
    return np.array(vecs)


def true_spectrum(hyp: Hypothesis, truth: CoefficientVector, design: DesignSpec, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Nonzero eigenvalues of ``A_T J_TT^{-1} A_T^T`` with the closed-form ``J``."""
    idx = truth.strong_set
    if idx.size == 0:
        return np.zeros(0)
    J = design.population_gram(idx)
    A_T = hyp.A[:, idx]
    S = A_T @ np.linalg.solve(J, A_T.T)
    return nonzero_eigenvalues(0.5 * (S + S.T), rank_tol)


def projection_sd(u: np.ndarray, truth: CoefficientVector, design: DesignSpec) -> float:
    """Limit standard deviation ``sigma * sqrt(u_T^T J_TT^{-1} u_T)`` of ``<u, R_n>``."""
    idx = truth.strong_set
    if idx.size == 0:
        return 0.0
    u_T = np.asarray(u)[idx]
    J = design.population_gram(idx)
    v = float(u_T @ np.linalg.solve(J, u_T))
    return math.sqrt(design.sigma2 * max(v, 0.0))


def resolve_tau(config: ExperimentConfig, rn: float) -> float:
    if config.tau != "auto":
        return float(config.tau)
    spec = config.coefficients
    try:
        return default_tau(rn, spec.eta, spec.gamma)
    except RegimeError:
        # the midpoint does not depend on rn; prepare() rejects this case unless forced
        return 0.5 * (spec.eta + spec.gamma)


def prepare(config: ExperimentConfig, force: bool = False) -> _Context:
    """Realise the truth, resolve tuning parameters, and check the regime."""
    design, spec = config.design, config.coefficients
    truth = make_coefficients(spec, config.master_seed)
    rn = rn_proxy(design.n, design.p, config.rn_c)
    tau = resolve_tau(config, rn)
    report = check_regime(design, spec, rn, tau)
    if not report.ok and not force:
        lo, hi = report.tau_window
        raise RegimeError(
            f"configuration outside the selection regime: tau={tau:.6g}, window=({lo:.6g}, {hi:.6g}), "
            f"lambda_min={report.lambda_min_gram}; pass force to run anyway"
        )
    lam = default_lambda(design.n, design.p, math.sqrt(design.sigma2), config.lambda_c)
    if config.projection_vectors is None:
        U = default_projection_vectors(truth)
    else:
        U = np.array(config.projection_vectors, dtype=float).reshape(-1, design.p)
    hyp = None
    true_lam = None
    if config.hypothesis is not None:
        hyp = Hypothesis.from_dict(config.hypothesis, p=design.p, theta0=truth.theta)
        true_lam = true_spectrum(hyp, truth, design, config.rank_tol)
    return _Context(config, truth, lam, tau, U, hyp, true_lam, report)


def replicate(ctx: _Context, seed: int) -> ReplicationRecord:
    """Run the pipeline once on the dataset drawn with ``seed``."""
    cfg = ctx.config
    truth = ctx.truth
    data = sample_dataset(cfg.design, truth, seed)
    est = fit_lasso(data, ctx.lam, tol=cfg.lasso_tol, max_iter=cfg.lasso_max_iter)
    support = select_support(est, ctx.tau)
    fit = fit_post_ols(data, support)
    R = rescaled_error(fit, truth)
    rec = ReplicationRecord(
        seed=int(seed),
        support_equals_Tgamma=bool(np.array_equal(support.indices, truth.strong_set)),
        support_size=len(support),
        theta_inf_err=float(np.abs(est.theta_hat - truth.theta).max()),
        post_inf_err=float(np.abs(fit.theta_tilde - truth.theta).max()),
        sigma2_hat=fit.sigma2_hat,
        projections=[float(v) for v in ctx.U @ R],
        lasso_lambda=est.lam,
        lasso_iterations=est.iterations,
        lasso_max_kkt=est.max_kkt_violation,
        lasso_converged=est.converged,
    )
    if ctx.hypothesis is not None:
        res = linear_test(
            fit,
            ctx.hypothesis,
            alpha=cfg.alpha,
            method=cfg.method,
            mc_draws=cfg.mc_draws,
            mc_seed=int(seed),
            rank_tol=cfg.rank_tol,
        )
        est_lam = np.asarray(res.spectrum.lambdas)
        k = max(est_lam.size, ctx.true_lambdas.size)
        a = np.pad(est_lam, (0, k - est_lam.size))
        b = np.pad(ctx.true_lambdas, (0, k - ctx.true_lambdas.size))
        rec.W = res.W
        rec.c_hat_mc = res.c_hat_mc
        rec.c_hat_mm = res.c_hat_mm
        rec.reject_mc = decide(res.W, res.c_hat_mc)
        rec.reject_mm = decide(res.W, res.c_hat_mm)
        rec.rank = res.spectrum.rank
        rec.spectrum_err = float(np.abs(a - b).max()) if k else 0.0
        rec.degenerate = res.degenerate
    return rec


def run_replications(
    config: ExperimentConfig, workers: int = 1, force: bool = False
) -> list[ReplicationRecord]:
    """Replication ``k`` uses seed ``master_seed + k``; output order is by ``k``."""
    ctx = prepare(config, force=force)
    seeds = [config.master_seed + k for k in range(config.replications)]
    job = partial(replicate, ctx)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunk = max(1, len(seeds) // (4 * workers))
            return list(ex.map(job, seeds, chunksize=chunk))
    return [job(s) for s in seeds]


def selection_frequency(records: Sequence[ReplicationRecord]) -> float:
    if not records:
        raise ValueError("no records")
    return sum(r.support_equals_Tgamma for r in records) / len(records)


def empirical_size(records: Sequence[ReplicationRecord]) -> dict[str, float]:
    """Rejection rate per quantile method.  This is the size when H0 holds."""
    if not records:
        raise ValueError("no records")
    if any(r.W is None for r in records):
        raise ValueError("records carry no test results")
    m = len(records)
    return {
        "monte-carlo": sum(bool(r.reject_mc) for r in records) / m,
        "moment-match": sum(bool(r.reject_mm) for r in records) / m,
    }


def ks_distance(samples: Sequence[float], target_sd: float) -> float:
    """Kolmogorov-Smirnov distance between ``samples / target_sd`` and N(0, 1)."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    if not target_sd > 0:
        raise ValueError(f"target_sd must be positive, got {target_sd}")
    return float(stats.kstest(x / target_sd, "norm").statistic)


def summarize(records: Sequence[ReplicationRecord], config: ExperimentConfig) -> dict[str, Any]:
    ctx = prepare(config, force=True)
    design = config.design
    proj = np.array([r.projections for r in records])
    ks: dict[str, float | None] = {}
    mean_abs: dict[str, float] = {}
    for k, u in enumerate(ctx.U):
        key = f"u{k + 1}"
        sd = projection_sd(u, ctx.truth, design)
        ks[key] = ks_distance(proj[:, k], sd) if sd > 0 else None
        mean_abs[key] = float(np.abs(proj[:, k]).mean())
    s2 = np.array([r.sigma2_hat for r in records])
    out: dict[str, Any] = {
        "replications": len(records),
        "lambda": ctx.lam,
        "tau": ctx.tau,
        "regime": ctx.regime.to_dict(),
        "selection_frequency": selection_frequency(records),
        "mean_support_size": float(np.mean([r.support_size for r in records])),
        "median_theta_inf_err": float(np.median([r.theta_inf_err for r in records])),
        "lasso_nonconverged": sum(not r.lasso_converged for r in records),
        "ks_distance": ks,
        "projection_mean_abs": mean_abs,
        "mean_sigma2_hat": float(s2.mean()),
        "mean_abs_sigma2_err": float(np.abs(s2 - design.sigma2).mean()),
    }
    if ctx.hypothesis is not None:
        holds = bool(np.allclose(ctx.hypothesis.A @ ctx.truth.theta, ctx.hypothesis.b, rtol=0, atol=1e-12))
        out["hypothesis_holds"] = holds
        out["rejection_rate"] = empirical_size(records)
        out["true_spectrum"] = [float(v) for v in ctx.true_lambdas]
        out["mean_spectrum_err"] = float(np.mean([r.spectrum_err for r in records]))
        out["degenerate_nulls"] = sum(bool(r.degenerate) for r in records)
    out["note"] = "experiment parameters are harness choices; no reference simulation design exists"
    return out


def _columns(records: Sequence[ReplicationRecord]) -> list[str]:
    k = len(records[0].projections) if records else 0
    cols = [
        "seed",
        "support_equals_Tgamma",
        "support_size",
        "theta_inf_err",
        "post_inf_err",
        "sigma2_hat",
        "lasso_lambda",
        "lasso_iterations",
        "lasso_max_kkt",
        "lasso_converged",
    ]
    cols += [f"proj_{j + 1}" for j in range(k)]
    if records and records[0].W is not None:
        cols += ["W", "c_hat_mc", "c_hat_mm", "reject_mc", "reject_mm", "rank", "spectrum_err", "degenerate"]
    return cols


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_csv(records: Sequence[ReplicationRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = _columns(records)
    w.writerow(cols)
    for r in records:
        row = []
        for c in cols:
            if c.startswith("proj_"):
                row.append(_fmt(r.projections[int(c[5:]) - 1]))
            else:
                row.append(_fmt(getattr(r, c)))
        w.writerow(row)
    return buf.getvalue()


def write_report(
    records: Sequence[ReplicationRecord],
    summary: Mapping[str, Any],
    out_dir: str | Path,
    config: ExperimentConfig | None = None,
) -> list[Path]:
    """Write ``records.csv``, ``summary.json`` and (if given) ``config.json``."""
    out = Path(out_dir)
    files = {
        "records.csv": records_csv(records),
        "summary.json": json.dumps(summary, indent=2) + "\n",
    }
    if config is not None:
        files["config.json"] = json.dumps(config.to_dict(), indent=2) + "\n"
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            path = out / name
            path.write_text(text)
            written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return written


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path | None = None, workers: int = 1, force: bool = False
) -> tuple[list[ReplicationRecord], dict[str, Any]]:
    records = run_replications(config, workers=workers, force=force)
    summary = summarize(records, config)
    if out_dir is not None:
        write_report(records, summary, out_dir, config)
    return records, summary
