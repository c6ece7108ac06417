"""Threshold selection and least-squares refit on the selected support."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .datagen import CoefficientVector, Dataset
from .errors import RegimeError, SingularDesignError
from .lasso import SparseEstimate

COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class SupportSet:
    """Sorted 0-based indices ``{j : |theta_hat_j| > tau}``."""

    indices: np.ndarray
    tau: float

    def __len__(self) -> int:
        return int(self.indices.size)

    def __contains__(self, j: int) -> bool:
        return bool(np.any(self.indices == j))

    def as_set(self) -> frozenset[int]:
        return frozenset(int(j) for j in self.indices)


@dataclass(frozen=True, eq=False)
class PostFit:
    theta_tilde: np.ndarray
    support: SupportSet
    gram_sub: np.ndarray
    sigma2_hat: float
    n: int
    condition: float
    ridge_applied: bool = False

    def summary(self) -> dict[str, Any]:
        """JSON-ready summary; indices are reported 1-based."""
        idx = self.support.indices
        return {
            "support": [int(j) + 1 for j in idx],
            "tau": self.support.tau,
            "theta_tilde": {str(int(j) + 1): float(self.theta_tilde[j]) for j in idx},
            "sigma2_hat": self.sigma2_hat,
            "gram_condition": self.condition,
            "ridge_applied": self.ridge_applied,
            "n": self.n,
        }


def select_support(estimate: SparseEstimate | np.ndarray, tau: float) -> SupportSet:
    """Keep coordinates whose first-stage magnitude strictly exceeds ``tau``."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    theta = estimate.theta_hat if isinstance(estimate, SparseEstimate) else np.asarray(estimate)
    return SupportSet(indices=np.flatnonzero(np.abs(theta) > tau), tau=float(tau))


def default_tau(rn_proxy: float, eta: float, gamma: float) -> float:
    """Midpoint of the admissible threshold window ``(rn + eta, gamma - rn)``."""
    lo, hi = rn_proxy + eta, gamma - rn_proxy
    if not lo < hi:
        raise RegimeError(
            f"threshold window ({lo:.6g}, {hi:.6g}) is empty; run check_regime on this "
            "configuration or supply tau explicitly"
        )
    return 0.5 * (lo + hi)


def gram_full_submatrix(data: Dataset | np.ndarray, indices: Sequence[int] | np.ndarray) -> np.ndarray:
    """``n^{-1} sum_i Z_{i,idx} Z_{i,idx}^T`` for 0-based ``indices``."""
    Z = data.Z if isinstance(data, Dataset) else np.asarray(data)
    idx = np.asarray(indices, dtype=np.intp)
    Zs = Z[:, idx]
    G = Zs.T @ Zs / Z.shape[0]
    return 0.5 * (G + G.T)


def fit_post_ols(data: Dataset, support: SupportSet, ridge_guard: float = 0.0) -> PostFit:
    """Least squares on the selected columns, zero elsewhere.

    Solves ``n^{-1} Z_T^T (Y - Z_T theta_T) = 0`` by Cholesky, and returns the
    residual variance ``n^{-1} ||Y - Z theta||^2`` alongside the Gram block.

    Raises
    ------
    SingularDesignError
        If the Gram block has condition number above ``1e12`` and
        ``ridge_guard`` is zero.  With ``ridge_guard > 0`` the block is
        regularised instead and ``ridge_applied`` is set.
    """
    if ridge_guard < 0:
        raise ValueError(f"ridge_guard must be nonnegative, got {ridge_guard}")
    Z, Y = data.Z, data.Y
    n, p = Z.shape
    idx = support.indices
    theta = np.zeros(p)
    if idx.size == 0:
        return PostFit(
            theta_tilde=theta,
            support=support,
            gram_sub=np.zeros((0, 0)),
            sigma2_hat=float(Y @ Y / n),
            n=n,
            condition=1.0,
        )
    if idx.size > n:
        raise SingularDesignError(f"support of size {idx.size} exceeds n = {n}")
    G = gram_full_submatrix(Z, idx)
    Zs = Z[:, idx]
    rhs = Zs.T @ Y / n
    cond = float(np.linalg.cond(G))
    ridge = False
    A = G
    if not math.isfinite(cond) or cond > COND_LIMIT:
        if ridge_guard == 0:
            raise SingularDesignError(
                f"selected Gram block has condition number {cond:.3g} > {COND_LIMIT:.0e}"
            )
        A = G + ridge_guard * np.eye(idx.size)
        ridge = True
    try:
        theta[idx] = cho_solve(cho_factor(A, lower=True), rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(f"Cholesky failed on selected Gram block: {exc}") from None
    resid = Y - Zs @ theta[idx]
    return PostFit(
        theta_tilde=theta,
        support=support,
        gram_sub=G,
        sigma2_hat=float(resid @ resid / n),
        n=n,
        condition=cond,
        ridge_applied=ridge,
    )


def rescaled_error(fit: PostFit, truth: CoefficientVector | np.ndarray) -> np.ndarray:
    """``sqrt(n) * (theta_tilde - theta_0)``, one entry per coordinate."""
    theta0 = truth.theta if isinstance(truth, CoefficientVector) else np.asarray(truth)
    return math.sqrt(fit.n) * (fit.theta_tilde - theta0)
