"""Synthetic sparse regression data with strong and weak signals.

Coefficient vectors are split into a fixed set of strong entries
(magnitude above ``gamma``) and a possibly large set of weak entries
(magnitude at most ``eta``).  Covariate laws are restricted to families
whose population Gram matrix is known in closed form, so downstream
checks can compare against the true ``J``.

Indices in :class:`CoefficientSpec` and in JSON configs are 1-based;
every array exposed in Python is 0-based.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import InvalidSpecError

COVARIATE_LAWS = ("gaussian-identity", "gaussian-toeplitz", "rademacher", "uniform-scaled")
NOISE_LAWS = ("gaussian", "rademacher-scaled", "uniform-scaled")

_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class CoefficientSpec:
    """Description of a true coefficient vector.

    Parameters
    ----------
    strong : sequence of (int, float)
        1-based ``(index, value)`` pairs with ``gamma < |value| <= theta_max``.
    weak_count : int
        Number of weak entries; their positions and signs are drawn from the seed.
    eta : float
        Magnitude of every weak entry.  Must satisfy ``eta < gamma``.
    gamma : float
        Strong-signal cutoff.
    p : int
        Dimension.
    theta_max : float, optional
        Bound on ``|value|``; defaults to the largest strong magnitude.
    """

    strong: tuple[tuple[int, float], ...]
    weak_count: int
    eta: float
    gamma: float
    p: int
    theta_max: float | None = None

    def __post_init__(self) -> None:
        strong = tuple((int(j), float(v)) for j, v in self.strong)
        object.__setattr__(self, "strong", strong)
        if self.p < 1:
            raise InvalidSpecError(f"p must be positive, got {self.p}")
        if self.gamma <= 0:
            raise InvalidSpecError(f"gamma must be positive, got {self.gamma}")
        if self.weak_count < 0:
            raise InvalidSpecError(f"weak_count must be nonnegative, got {self.weak_count}")
        if self.eta < 0 or (self.weak_count > 0 and self.eta == 0):
            raise InvalidSpecError(f"weak magnitude eta must be positive, got {self.eta}")
        if self.eta >= self.gamma:
            raise InvalidSpecError(f"eta={self.eta} must be below gamma={self.gamma}")
        idx = [j for j, _ in strong]
        if len(set(idx)) != len(idx):
            raise InvalidSpecError(f"strong indices collide: {idx}")
        if any(j < 1 or j > self.p for j in idx):
            raise InvalidSpecError(f"strong indices must lie in [1, {self.p}], got {idx}")
        theta_max = self.theta_max
        if theta_max is None:
            theta_max = max((abs(v) for _, v in strong), default=self.gamma)
            object.__setattr__(self, "theta_max", float(theta_max))
        for j, v in strong:
            if not self.gamma < abs(v) <= theta_max:
                raise InvalidSpecError(
                    f"strong entry {j} has |value|={abs(v)} outside ({self.gamma}, {theta_max}]"
                )
        if len(strong) + self.weak_count > self.p:
            raise InvalidSpecError(
                f"s0 = {len(strong) + self.weak_count} exceeds p = {self.p}"
            )

    @property
    def s0(self) -> int:
        return len(self.strong) + self.weak_count

    @property
    def strong_indices(self) -> np.ndarray:
        """0-based strong indices, sorted."""
        return np.array(sorted(j - 1 for j, _ in self.strong), dtype=np.intp)

    def to_dict(self) -> dict[str, Any]:
        return {
            "p": self.p,
            "strong": [[j, v] for j, v in self.strong],
            "weak_count": self.weak_count,
            "eta": self.eta,
            "gamma": self.gamma,
            "theta_max": self.theta_max,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CoefficientSpec:
        try:
            return cls(
                strong=tuple((int(j), float(v)) for j, v in d.get("strong", [])),
                weak_count=int(d.get("weak_count", 0)),
                eta=float(d.get("eta", 0.0)),
                gamma=float(d["gamma"]),
                p=int(d["p"]),
                theta_max=None if d.get("theta_max") is None else float(d["theta_max"]),
            )
        except KeyError as exc:
            raise InvalidSpecError(f"coefficient config missing key {exc}") from None


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    """Dense realisation of a :class:`CoefficientSpec`."""

    theta: np.ndarray
    strong_set: np.ndarray
    weak_set: np.ndarray
    gamma: float
    eta: float

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.theta)

    @property
    def s0(self) -> int:
        return int(np.count_nonzero(self.theta))

    @property
    def theta_min(self) -> float:
        nz = np.abs(self.theta[self.theta != 0])
        return float(nz.min()) if nz.size else 0.0


@dataclass(frozen=True)
class DesignSpec:
    """Sampling law for the design rows and the noise."""

    n: int
    p: int
    covariate_law: str = "gaussian-identity"
    noise_law: str = "gaussian"
    sigma2: float = 1.0
    rho: float = 0.0

    def __post_init__(self) -> None:
        if self.n < 1 or self.p < 1:
            raise InvalidSpecError(f"n and p must be positive, got n={self.n}, p={self.p}")
        if self.covariate_law not in COVARIATE_LAWS:
            raise InvalidSpecError(
                f"unknown covariate_law {self.covariate_law!r}; expected one of {COVARIATE_LAWS}"
            )
        if self.noise_law not in NOISE_LAWS:
            raise InvalidSpecError(
                f"unknown noise_law {self.noise_law!r}; expected one of {NOISE_LAWS}"
            )
        if not self.sigma2 > 0:
            raise InvalidSpecError(f"sigma2 must be positive, got {self.sigma2}")
        if self.covariate_law == "gaussian-toeplitz" and not -1 < self.rho < 1:
            raise InvalidSpecError(f"Toeplitz rho must lie in (-1, 1), got {self.rho}")

    def population_gram(self, indices: Sequence[int] | np.ndarray | None = None) -> np.ndarray:
        """Closed-form ``E[Z Z^T]`` restricted to 0-based ``indices``."""
        idx = np.arange(self.p) if indices is None else np.asarray(indices, dtype=np.intp)
        if self.covariate_law == "gaussian-toeplitz":
            return self.rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
        return np.eye(idx.size)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "p": self.p,
            "covariate_law": self.covariate_law,
            "rho": self.rho,
            "noise_law": self.noise_law,
            "sigma2": self.sigma2,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DesignSpec:
        try:
            return cls(
                n=int(d["n"]),
                p=int(d["p"]),
                covariate_law=str(d.get("covariate_law", "gaussian-identity")),
                noise_law=str(d.get("noise_law", "gaussian")),
                sigma2=float(d.get("sigma2", 1.0)),
                rho=float(d.get("rho", 0.0)),
            )
        except KeyError as exc:
            raise InvalidSpecError(f"design config missing key {exc}") from None


@dataclass(frozen=True, eq=False)
class Dataset:
    """One draw of ``(Z, Y)``.  ``Z`` is stored column-major."""

    Z: np.ndarray
    Y: np.ndarray
    noise: np.ndarray
    truth: CoefficientVector
    seed: int
    design: DesignSpec | None = field(default=None)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    def to_csv(self, path: str | Path) -> None:
        """Write ``x1..xp`` then ``y`` as the final column."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(self.p)] + ["y"])
            for zi, yi in zip(self.Z, self.Y):
                w.writerow([repr(float(v)) for v in zi] + [repr(float(yi))])


@dataclass(frozen=True)
class RegimeReport:
    n_s0_eta2: float
    tau_window: tuple[float, float]
    window_nonempty: bool
    tau_inside: bool
    lambda_min_gram: float | None

    @property
    def ok(self) -> bool:
        lam_ok = self.lambda_min_gram is None or self.lambda_min_gram > 0
        return self.window_nonempty and self.tau_inside and lam_ok

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_s0_eta2": self.n_s0_eta2,
            "tau_window": list(self.tau_window),
            "window_nonempty": self.window_nonempty,
            "tau_inside": self.tau_inside,
            "lambda_min_gram": self.lambda_min_gram,
        }


def make_coefficients(spec: CoefficientSpec, seed: int) -> CoefficientVector:
    """Realise ``spec`` as a dense vector.

    Weak positions are drawn uniformly without replacement from the
    non-strong coordinates, and each weak entry is ``+-eta`` with a seeded sign.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    theta = np.zeros(spec.p)
    strong = spec.strong_indices
    for j, v in spec.strong:
        theta[j - 1] = v
    free = np.setdiff1d(np.arange(spec.p), strong)
    weak = np.sort(rng.choice(free, size=spec.weak_count, replace=False))
    signs = rng.choice(np.array([-1.0, 1.0]), size=spec.weak_count)
    theta[weak] = signs * spec.eta
    return CoefficientVector(
        theta=theta,
        strong_set=strong,
        weak_set=weak.astype(np.intp),
        gamma=spec.gamma,
        eta=spec.eta,
    )


def _draw_covariates(design: DesignSpec, rng: np.random.Generator) -> np.ndarray:
    n, p = design.n, design.p
    law = design.covariate_law
    # draw as (p, n) C-order so the transpose is a column-major (n, p) matrix
    if law == "gaussian-identity":
        return rng.standard_normal((p, n)).T
    if law == "gaussian-toeplitz":
        e = rng.standard_normal((p, n))
        rho = design.rho
        scale = math.sqrt(1.0 - rho * rho)
        for j in range(1, p):
            e[j] = rho * e[j - 1] + scale * e[j]
        return e.T
    if law == "rademacher":
        return rng.choice(np.array([-1.0, 1.0]), size=(p, n)).T
    return rng.uniform(-_SQRT3, _SQRT3, size=(p, n)).T


def _draw_noise(design: DesignSpec, rng: np.random.Generator) -> np.ndarray:
    sigma = math.sqrt(design.sigma2)
    n = design.n
    if design.noise_law == "gaussian":
        return sigma * rng.standard_normal(n)
    if design.noise_law == "rademacher-scaled":
        return sigma * rng.choice(np.array([-1.0, 1.0]), size=n)
    return sigma * rng.uniform(-_SQRT3, _SQRT3, size=n)


def sample_dataset(design: DesignSpec, truth: CoefficientVector, seed: int) -> Dataset:
    """Draw ``n`` i.i.d. rows ``Y = Z theta + eps`` from ``design``.

    Covariates and noise come from independent child streams of ``seed``.
    """
    if truth.p != design.p:
        raise InvalidSpecError(f"truth has length {truth.p}, design has p={design.p}")
    z_seq, e_seq = np.random.SeedSequence(seed).spawn(2)
    Z = _draw_covariates(design, np.random.default_rng(z_seq))
    eps = _draw_noise(design, np.random.default_rng(e_seq))
    signal = Z @ truth.theta
    Y = signal + eps
    # stored noise is defined from Y so that Y - Z theta - noise == 0 bit for bit
    noise = Y - signal
    return Dataset(Z=Z, Y=Y, noise=noise, truth=truth, seed=int(seed), design=design)


def rn_proxy(n: int, p: int, c: float = 1.0) -> float:
    """Sup-norm rate proxy ``c * sqrt(log p / n)`` for the first-stage estimator."""
    return c * math.sqrt(math.log(p) / n) if p > 1 else 0.0


def check_regime(
    design: DesignSpec, spec: CoefficientSpec, rn_proxy: float, tau: float
) -> RegimeReport:
    """Report where a configuration sits relative to the selection regime."""
    lo = rn_proxy + spec.eta
    hi = spec.gamma - rn_proxy
    strong = spec.strong_indices
    if strong.size:
        gram = design.population_gram(strong)
        lam_min = float(np.linalg.eigvalsh(gram)[0])
    else:
        lam_min = None
    return RegimeReport(
        n_s0_eta2=design.n * spec.s0 * spec.eta**2,
        tau_window=(lo, hi),
        window_nonempty=lo < hi,
        tau_inside=lo < tau < hi,
        lambda_min_gram=lam_min,
    )
