import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdps.datagen import CoefficientSpec, CoefficientVector, Dataset, DesignSpec, make_coefficients, sample_dataset
from hdps.lasso import (
    default_lambda,
    fit_lasso,
    fit_lasso_path,
    kkt_violation,
    lasso_cd,
    lasso_objective,
    soft_threshold,
)

from oracles import grid_lasso
from oracles import lasso_objective as oracle_objective


@pytest.mark.parametrize("x, t, expected", [(3.0, 1.0, 2.0), (-0.5, 1.0, 0.0), (-3.0, 1.0, -2.0), (1.0, 1.0, 0.0)])
def test_soft_threshold(x, t, expected):
    assert soft_threshold(x, t) == expected


def test_soft_threshold_negative_t():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


def test_single_column_closed_form():
    Z = np.ones((4, 1))
    Y = np.full(4, 2.0)
    fit = lasso_cd(Z, Y, 0.5)
    grid = np.linspace(-3.0, 3.0, 600_001)
    vals = ((Y[:, None] - grid[None, :]) ** 2).sum(0) / 8 + 0.5 * np.abs(grid)
    assert grid[np.argmin(vals)] == pytest.approx(1.5, abs=1e-5)
    assert fit.theta_hat[0] == pytest.approx(soft_threshold(2.0, 0.5), abs=1e-12)
    assert fit.converged


def test_null_solution_threshold():
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((30, 6))
    Y = rng.standard_normal(30)
    lam_max = np.abs(Z.T @ Y / 30).max()
    for lam in (lam_max, 1.5 * lam_max):
        fit = lasso_cd(Z, Y, lam)
        assert np.all(fit.theta_hat == 0.0)
        assert fit.converged
    assert np.any(lasso_cd(Z, Y, 0.9 * lam_max).theta_hat != 0)


def test_three_dim_grid_oracle():
    rng = np.random.default_rng(10)
    Z = rng.standard_normal((10, 3))
    Y = Z @ np.array([1.0, -0.5, 0.0]) + 0.3 * rng.standard_normal(10)
    lam = 0.1
    fit = lasso_cd(Z, Y, lam, tol=1e-12)
    best, val = grid_lasso(Z, Y, lam, box=3.0, min_halfwidth=1e-7)
    assert np.all(np.abs(best) < 3.0)
    assert abs(oracle_objective(Z, Y, fit.theta_hat, lam) - val) <= 1e-8


def test_default_lambda():
    assert default_lambda(100, 1000, 1.0, 1.0) == pytest.approx(math.sqrt(2 * math.log(1000) / 100), rel=1e-14)
    assert default_lambda(100, 1000) == pytest.approx(0.37169, abs=1e-5)
    base = default_lambda(100, 1000)
    assert default_lambda(100, 1000, c=2.0) == pytest.approx(2 * base)
    assert default_lambda(400, 1000) == pytest.approx(base / 2)
    assert default_lambda(100, 1, sigma=2.0, c=1.5) == pytest.approx(1.5 * 2.0 / 10.0)


def test_bad_lambda():
    with pytest.raises(ValueError):
        lasso_cd(np.ones((3, 1)), np.ones(3), 0.0)


def test_max_iter_reports_nonconvergence():
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((40, 30))
    Z[:, 1] = Z[:, 0] + 1e-3 * rng.standard_normal(40)
    Y = Z[:, 0] + rng.standard_normal(40)
    fit = lasso_cd(Z, Y, 1e-3, tol=1e-14, max_iter=3)
    assert not fit.converged
    assert fit.iterations == 3
    assert fit.max_kkt_violation > 1e-14
    assert fit.max_kkt_violation == pytest.approx(kkt_violation(Z, Y, fit.theta_hat, 1e-3), rel=1e-6, abs=1e-12)


def _instance(seed, n, p, s):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, p))
    theta = np.zeros(p)
    theta[:s] = rng.uniform(0.5, 2.0, s) * rng.choice([-1, 1], s)
    Y = Z @ theta + rng.standard_normal(n)
    return Z, Y


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    n=st.integers(5, 60),
    p=st.integers(1, 40),
    frac=st.floats(0.01, 1.0),
)
def test_kkt_certificate(seed, n, p, frac):
    Z, Y = _instance(seed, n, p, min(p, 3))
    lam = frac * np.abs(Z.T @ Y / n).max() + 1e-12
    fit = lasso_cd(Z, Y, lam, tol=1e-9)
    assert fit.converged
    g = Z.T @ (Y - Z @ fit.theta_hat) / n
    zero = fit.theta_hat == 0
    assert np.all(np.abs(g[zero]) <= lam + 1e-9)
    np.testing.assert_allclose(g[~zero], lam * np.sign(fit.theta_hat[~zero]), atol=1e-9, rtol=0)
    path = fit.objective_path
    assert np.all(np.diff(path) <= 1e-12 * np.maximum(1.0, np.abs(path[:-1])))
    if path.size:
        assert path[-1] == pytest.approx(lasso_objective(Z, Y, fit.theta_hat, lam), rel=1e-10)


def test_warm_start_path():
    Z, Y = _instance(3, 50, 20, 3)
    lam_max = np.abs(Z.T @ Y / 50).max()
    lams = lam_max * np.array([0.1, 0.5, 0.9])
    fits = fit_lasso_path(_as_dataset(Z, Y), lams)
    assert [f.lam for f in fits] == sorted(lams, reverse=True)
    for f in fits:
        cold = lasso_cd(Z, Y, f.lam)
        np.testing.assert_allclose(f.theta_hat, cold.theta_hat, atol=1e-7)
    nnz = [np.count_nonzero(f.theta_hat) for f in fits]
    assert nnz[0] <= nnz[-1]


def _as_dataset(Z, Y):
    p = Z.shape[1]
    truth = CoefficientVector(np.zeros(p), np.zeros(0, np.intp), np.zeros(0, np.intp), 1.0, 0.0)
    return Dataset(Z=np.asfortranarray(Z), Y=Y, noise=Y.copy(), truth=truth, seed=0)


def test_sup_norm_rate_sanity():
    n, p = 400, 200
    design = DesignSpec(n=n, p=p)
    spec = CoefficientSpec(strong=((1, 1.0), (2, -0.8), (3, 0.6)), weak_count=0, eta=0.0, gamma=0.3, p=p)
    truth = make_coefficients(spec, 0)
    lam = default_lambda(n, p)
    errs = []
    for k in range(100):
        fit = fit_lasso(sample_dataset(design, truth, 5000 + k), lam)
        assert fit.converged
        errs.append(np.abs(fit.theta_hat - truth.theta).max())
    assert np.median(errs) <= 4 * math.sqrt(math.log(p) / n)
