"""Wald-type test of ``H0: A theta = b`` after selection.

The statistic ``W = n ||A theta_tilde - b||^2`` is compared with the upper
``alpha`` quantile of ``sigma^2 * sum_j Lambda_j chi2_1``, where ``Lambda``
are the nonzero eigenvalues of ``A_T J_TT^{-1} A_T^T``.  Both ``sigma^2``
and ``Lambda`` are replaced by plug-in estimates on the selected support.
Eigenvalues are kept in descending order throughout.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateNullWarning, HdpsError, SingularDesignError
from .postsel import PostFit, SupportSet

RANK_TOL = 1e-8
MC_DRAWS = 200_000
MC_MIN_DRAWS = 10_000
# fixed shard size, so the shard plan depends only on the number of draws
MC_SHARD = 1 << 16

METHODS = ("monte-carlo", "moment-match")


@dataclass(frozen=True, eq=False)
class Hypothesis:
    """Linear restriction ``A theta = b`` with ``A`` of shape ``(q, p)``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
            raise HdpsError(f"A has shape {A.shape} but b has shape {b.shape}")
        if A.shape[0] > A.shape[1]:
            raise HdpsError(f"q = {A.shape[0]} exceeds p = {A.shape[1]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def q(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[1]

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], p: int | None = None, theta0: np.ndarray | None = None) -> Hypothesis:
        """Build from JSON.

        ``A`` is either a dense ``"A"`` (list of rows) or sparse ``"rows"``
        (list of ``{1-based index: coefficient}`` maps, requires ``p``).
        ``b`` is taken from ``"b"``; otherwise, given the truth ``theta0``,
        ``b = A theta0 + b_offset * 1/sqrt(q)`` so ``||A theta0 - b|| = b_offset``.
        """
        if "A" in d:
            A = np.asarray(d["A"], dtype=float)
        elif "rows" in d:
            if p is None:
                raise HdpsError("sparse hypothesis rows need the dimension p")
            A = np.zeros((len(d["rows"]), p))
            for i, row in enumerate(d["rows"]):
                for j, v in row.items():
                    j = int(j)
                    if not 1 <= j <= p:
                        raise HdpsError(f"hypothesis index {j} outside [1, {p}]")
                    A[i, j - 1] = float(v)
        else:
            raise HdpsError("hypothesis needs 'A' or 'rows'")
        A = np.atleast_2d(A)
        if p is not None and A.shape[1] != p:
            raise HdpsError(f"hypothesis has {A.shape[1]} columns, data has p = {p}")
        if "b" in d:
            b = np.asarray(d["b"], dtype=float)
        elif theta0 is not None:
            offset = float(d.get("b_offset", 0.0))
            b = A @ theta0 + offset / math.sqrt(A.shape[0])
        else:
            raise HdpsError("hypothesis needs 'b' when the truth is unknown")
        return cls(A=A, b=b)


@dataclass(frozen=True)
class NullSpectrum:
    sigma2_hat: float
    lambdas: tuple[float, ...]
    rank_tol: float = RANK_TOL

    @property
    def rank(self) -> int:
        return len(self.lambdas)


@dataclass(frozen=True)
class TestResult:
    """Outcome of one test; ``reject`` uses ``c_hat`` from ``method``."""

    W: float
    spectrum: NullSpectrum
    alpha: float
    method: str
    c_hat: float
    reject: bool
    c_hat_mc: float
    c_hat_mm: float
    mc_draws: int
    mc_seed: int
    degenerate: bool = False
    notes: tuple[str, ...] = field(default_factory=tuple)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict[str, Any]:
        return {
            "W": self.W,
            "alpha": self.alpha,
            "method": self.method,
            "c_hat": self.c_hat,
            "reject": self.reject,
            "c_hat_mc": self.c_hat_mc,
            "c_hat_mm": self.c_hat_mm,
            "reject_mc": decide(self.W, self.c_hat_mc),
            "reject_mm": decide(self.W, self.c_hat_mm),
            "sigma2_hat": self.spectrum.sigma2_hat,
            "lambdas": list(self.spectrum.lambdas),
            "rank": self.spectrum.rank,
            "rank_tol": self.spectrum.rank_tol,
            "mc_draws": self.mc_draws,
            "mc_seed": self.mc_seed,
            "degenerate": self.degenerate,
            "notes": list(self.notes),
        }


def test_statistic(fit: PostFit, hyp: Hypothesis) -> float:
    """``n * ||A theta_tilde - b||_2^2``."""
    theta = fit.theta_tilde
    if hyp.p != theta.shape[0]:
        raise HdpsError(f"hypothesis has p = {hyp.p}, fit has p = {theta.shape[0]}")
    d = hyp.A @ theta - hyp.b
    return float(fit.n * (d @ d))


test_statistic.__test__ = False


def plugin_sigma_A(hyp: Hypothesis, support: SupportSet, gram_sub: np.ndarray) -> np.ndarray:
    """``A_T G^{-1} A_T^T`` on the selected columns ``T``, symmetrised."""
    idx = support.indices
    if idx.size == 0:
        return np.zeros((hyp.q, hyp.q))
    G = np.asarray(gram_sub, dtype=float)
    if G.shape != (idx.size, idx.size):
        raise HdpsError(f"gram_sub has shape {G.shape}, support has size {idx.size}")
    A_T = hyp.A[:, idx]
    try:
        X = cho_solve(cho_factor(G, lower=True), A_T.T)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(f"Gram block is not positive definite: {exc}") from None
    S = A_T @ X
    return 0.5 * (S + S.T)


def nonzero_eigenvalues(M: np.ndarray, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Eigenvalues above ``rank_tol * max``, sorted in descending order."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros(0)
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > 1e-10 * scale:
        raise HdpsError("matrix is not symmetric")
    ev = np.linalg.eigvalsh(M)[::-1]
    top = ev[0]
    if top <= 0:
        return np.zeros(0)
    return ev[ev > rank_tol * top].copy()


def _shard_plan(draws: int) -> list[int]:
    full, rest = divmod(draws, MC_SHARD)
    return [MC_SHARD] * full + ([rest] if rest else [])


def _shard(lambdas: np.ndarray, seed: int, k: int, size: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
    x = rng.standard_normal((size, lambdas.size))
    return (x * x) @ lambdas


def weighted_chi2_draws(lambdas: Sequence[float], draws: int, seed: int, workers: int = 1) -> np.ndarray:
    """Draws of ``sum_j lambdas_j chi2_1``.

    Shard ``k`` uses the substream ``SeedSequence(seed, spawn_key=(k,))``,
    so the result is the same for any ``workers``.
    """
    lam = np.asarray(lambdas, dtype=float)
    plan = _shard_plan(int(draws))
    if workers > 1 and len(plan) > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda a: _shard(lam, seed, *a), enumerate(plan)))
    else:
        parts = [_shard(lam, seed, k, m) for k, m in enumerate(plan)]
    return np.concatenate(parts)


def mc_quantile(
    sigma2: float,
    lambdas: Sequence[float],
    alpha: float,
    draws: int = MC_DRAWS,
    seed: int = 0,
    workers: int = 1,
) -> float:
    """Monte Carlo upper-``alpha`` quantile of ``sigma2 * sum_j lambdas_j chi2_1``.

    The scale is applied after the quantile, so ``mc_quantile / sigma2``
    does not depend on ``sigma2`` for a fixed seed.
    """
    _check_alpha(alpha)
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    if len(lambdas) == 0:
        warnings.warn("empty null spectrum; critical value is 0", DegenerateNullWarning, stacklevel=2)
        return 0.0
    if draws < MC_MIN_DRAWS:
        raise ValueError(f"need at least {MC_MIN_DRAWS} draws, got {draws}")
    s = weighted_chi2_draws(lambdas, draws, seed, workers)
    return sigma2 * float(np.quantile(s, 1.0 - alpha))


def satterthwaite_params(lambdas: Sequence[float]) -> tuple[float, float]:
    """Scale ``g`` and degrees of freedom ``d`` with ``g * chi2(d)`` matching two moments."""
    lam = np.asarray(lambdas, dtype=float)
    s1, s2 = lam.sum(), (lam * lam).sum()
    return float(s2 / s1), float(s1 * s1 / s2)


def satterthwaite_quantile(sigma2: float, lambdas: Sequence[float], alpha: float) -> float:
    """Moment-matched upper-``alpha`` quantile; exact when all weights are equal."""
    _check_alpha(alpha)
    if len(lambdas) == 0:
        warnings.warn("empty null spectrum; critical value is 0", DegenerateNullWarning, stacklevel=2)
        return 0.0
    g, d = satterthwaite_params(lambdas)
    return float(sigma2 * g * stats.chi2.isf(alpha, d))


def decide(W: float, c_hat: float) -> bool:
    return bool(W > c_hat)


def linear_test(
    fit: PostFit,
    hyp: Hypothesis,
    alpha: float = 0.05,
    method: str = "monte-carlo",
    mc_draws: int = MC_DRAWS,
    mc_seed: int = 0,
    rank_tol: float = RANK_TOL,
    workers: int = 1,
) -> TestResult:
    """Run the full test on a post-selection fit.

    Both critical values are computed; ``method`` chooses the one that
    drives ``c_hat`` and ``reject``.  An empty plug-in spectrum (for
    instance an empty support) gives a point-mass null at zero, which is
    flagged through ``degenerate`` and ``notes`` instead of a silent reject.
    """
    if method not in METHODS:
        raise HdpsError(f"unknown method {method!r}; expected one of {METHODS}")
    _check_alpha(alpha)
    W = test_statistic(fit, hyp)
    S = plugin_sigma_A(hyp, fit.support, fit.gram_sub)
    lam = nonzero_eigenvalues(S, rank_tol)
    spectrum = NullSpectrum(sigma2_hat=fit.sigma2_hat, lambdas=tuple(float(v) for v in lam), rank_tol=rank_tol)
    notes: list[str] = []
    degenerate = lam.size == 0 or not fit.sigma2_hat > 0
    if degenerate:
        c_mc = c_mm = 0.0
        notes.append("degenerate null: empty plug-in spectrum, critical value 0")
        if len(fit.support) == 0:
            notes.append("empty selected support; W = n * ||b||^2")
    else:
        c_mc = mc_quantile(fit.sigma2_hat, lam, alpha, mc_draws, mc_seed, workers)
        c_mm = satterthwaite_quantile(fit.sigma2_hat, lam, alpha)
    c_hat = c_mc if method == "monte-carlo" else c_mm
    return TestResult(
        W=W,
        spectrum=spectrum,
        alpha=alpha,
        method=method,
        c_hat=c_hat,
        reject=decide(W, c_hat),
        c_hat_mc=c_mc,
        c_hat_mm=c_mm,
        mc_draws=mc_draws,
        mc_seed=mc_seed,
        degenerate=degenerate,
        notes=tuple(notes),
    )


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
