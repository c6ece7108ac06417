import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdps.datagen import CoefficientSpec, CoefficientVector, Dataset, DesignSpec, make_coefficients, sample_dataset
from hdps.errors import RegimeError, SingularDesignError
from hdps.postsel import (
    PostFit,
    SupportSet,
    default_tau,
    fit_post_ols,
    gram_full_submatrix,
    rescaled_error,
    select_support,
)


def _dataset(Z, Y, theta=None):
    Z = np.asfortranarray(np.asarray(Z, float))
    Y = np.asarray(Y, float)
    p = Z.shape[1]
    theta = np.zeros(p) if theta is None else np.asarray(theta, float)
    truth = CoefficientVector(theta, np.flatnonzero(np.abs(theta) > 0.1), np.zeros(0, np.intp), 0.1, 0.0)
    return Dataset(Z=Z, Y=Y, noise=Y - Z @ theta, truth=truth, seed=0)


def _support(idx, tau=0.1):
    return SupportSet(indices=np.asarray(idx, dtype=np.intp), tau=tau)


@pytest.mark.parametrize(
    "tau, expected",
    [(0.2, [0]), (0.1, [0, 1]), (0.9, []), (0.15, [0])],
)
def test_select_support(tau, expected):
    s = select_support(np.array([0.9, 0.15, 0.0]), tau)
    assert s.indices.tolist() == expected
    assert s.tau == tau


def test_select_support_zero_vector():
    assert len(select_support(np.zeros(4), 0.1)) == 0


def test_select_support_rejects_nonpositive_tau():
    with pytest.raises(ValueError):
        select_support(np.ones(3), 0.0)


@settings(max_examples=50, deadline=None)
@given(
    theta=st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=30),
    t1=st.floats(1e-6, 2),
    t2=st.floats(1e-6, 2),
)
def test_threshold_monotonicity(theta, t1, t2):
    lo, hi = sorted((t1, t2))
    a = select_support(np.array(theta), lo).as_set()
    b = select_support(np.array(theta), hi).as_set()
    assert b <= a


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    rn=st.floats(0.001, 0.2),
    slack=st.floats(0.01, 0.99),
)
def test_selection_on_good_event(seed, rn, slack):
    # any perturbation within rn recovers exactly the strong set when tau sits in the window
    gamma, eta = 0.5, 0.02
    if not rn + eta < gamma - rn:
        return
    spec = CoefficientSpec(strong=((1, 1.0), (4, -0.51), (9, 0.7)), weak_count=8, eta=eta, gamma=gamma, p=40)
    truth = make_coefficients(spec, seed)
    rng = np.random.default_rng(seed)
    delta = rng.uniform(-rn, rn, size=40)
    delta[rng.integers(40)] = rn * rng.choice([-1, 1])
    lo, hi = rn + eta, gamma - rn
    tau = lo + slack * (hi - lo)
    got = select_support(truth.theta + delta, tau)
    np.testing.assert_array_equal(got.indices, truth.strong_set)


def test_default_tau():
    assert default_tau(0.1, 0.01, 0.5) == pytest.approx(0.255)
    assert default_tau(1e-9, 0.0, 0.5) == pytest.approx(0.25)
    with pytest.raises(RegimeError):
        default_tau(0.3, 0.0, 0.5)


def test_post_ols_sample_mean():
    fit = fit_post_ols(_dataset([[1.0], [1.0]], [2.0, 4.0]), _support([0]))
    assert fit.theta_tilde[0] == pytest.approx(3.0)
    assert fit.sigma2_hat == pytest.approx(1.0)
    assert fit.gram_sub.shape == (1, 1)


def test_post_ols_empty_support():
    Z = np.ones((4, 2))
    fit = fit_post_ols(_dataset(Z, [1.0, -1.0, 1.0, -1.0]), _support([]))
    assert np.all(fit.theta_tilde == 0)
    assert fit.sigma2_hat == pytest.approx(1.0)
    assert fit.gram_sub.shape == (0, 0)


@pytest.mark.parametrize("seed", range(5))
def test_post_ols_matches_dense_solve(seed):
    rng = np.random.default_rng(seed)
    n, p = 20, 8
    Z = rng.standard_normal((n, p))
    Y = Z[:, :3] @ np.array([1.0, 2.0, -1.0]) + rng.standard_normal(n)
    idx = np.sort(rng.choice(p, 3, replace=False))
    fit = fit_post_ols(_dataset(Z, Y), _support(idx))
    Zs = Z[:, idx]
    ref = np.linalg.solve(Zs.T @ Zs, Zs.T @ Y)
    np.testing.assert_allclose(fit.theta_tilde[idx], ref, atol=1e-10, rtol=0)
    off = np.setdiff1d(np.arange(p), idx)
    assert np.all(fit.theta_tilde[off] == 0.0)
    resid = Zs.T @ (Y - Z @ fit.theta_tilde) / n
    assert np.abs(resid).max() <= 1e-8


def test_post_ols_singular():
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((10, 3))
    Z[:, 1] = Z[:, 0]
    data = _dataset(Z, rng.standard_normal(10))
    with pytest.raises(SingularDesignError):
        fit_post_ols(data, _support([0, 1]))
    fit = fit_post_ols(data, _support([0, 1]), ridge_guard=1e-6)
    assert fit.ridge_applied
    assert np.all(np.isfinite(fit.theta_tilde))


def test_post_ols_support_larger_than_n():
    rng = np.random.default_rng(0)
    data = _dataset(rng.standard_normal((3, 5)), rng.standard_normal(3))
    with pytest.raises(SingularDesignError):
        fit_post_ols(data, _support([0, 1, 2, 3]))


def test_sigma2_zero_iff_perfect_fit():
    Z = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    Y = Z @ np.array([2.0, -1.0])
    assert fit_post_ols(_dataset(Z, Y), _support([0, 1])).sigma2_hat == pytest.approx(0.0, abs=1e-28)
    fit = fit_post_ols(_dataset(Z, Y + np.array([0.1, 0.0, 0.0])), _support([0, 1]))
    assert fit.sigma2_hat > 0


def test_gram_submatrix():
    Z = np.column_stack([np.ones(6), np.arange(6.0)])
    G = gram_full_submatrix(Z, [0])
    assert G[0, 0] == 1.0
    assert gram_full_submatrix(Z, []).shape == (0, 0)
    G2 = gram_full_submatrix(Z, [1, 0])
    np.testing.assert_array_equal(G2, G2.T)
    assert G2[0, 1] == pytest.approx(np.arange(6.0).mean())


def test_gram_lln():
    design = DesignSpec(n=100_000, p=3)
    spec = CoefficientSpec(strong=((1, 1.0),), weak_count=0, eta=0.0, gamma=0.5, p=3)
    data = sample_dataset(design, make_coefficients(spec, 0), 42)
    G = gram_full_submatrix(data, [0, 1])
    assert np.abs(G - np.eye(2)).max() <= 0.05
    assert np.all(np.linalg.eigvalsh(G) >= 0)


def _postfit(theta, n):
    return PostFit(
        theta_tilde=np.asarray(theta, float),
        support=_support(np.flatnonzero(theta)),
        gram_sub=np.eye(np.count_nonzero(theta)),
        sigma2_hat=1.0,
        n=n,
        condition=1.0,
    )


def test_rescaled_error():
    theta0 = np.array([1.0, 0.0, -0.5])
    assert np.all(rescaled_error(_postfit(theta0, 100), theta0) == 0)
    moved = theta0 + np.array([0.2, 0.0, 0.0])
    R = rescaled_error(_postfit(moved, 100), theta0)
    assert R[0] == pytest.approx(2.0)
    assert R @ R == pytest.approx(100 * np.sum((moved - theta0) ** 2))


def test_summary_is_one_based():
    fit = fit_post_ols(_dataset(np.eye(3).repeat(2, axis=0), np.arange(6.0)), _support([1]))
    s = fit.summary()
    assert s["support"] == [2]
    assert list(s["theta_tilde"]) == ["2"]
